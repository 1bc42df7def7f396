//! Define-by-run reverse-mode autodiff over [`Tensor`] values.
//!
//! A `Tape` is built per training sample: forward helpers compute values
//! eagerly and record the op graph, `backward` walks it once in reverse and
//! returns gradients aligned with the parameter set. The op vocabulary is
//! exactly what the GRU encoder/decoders and the pointer losses need,
//! nothing more.

use super::tensor::{ParamId, Params, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Param(usize),
    Const,
    /// y = x . W^T for W: m x n, x: 1 x n -> 1 x m
    MatVec { w: NodeId, x: NodeId },
    /// c = p . W for W: l x d, p: 1 x l -> 1 x d (attention context)
    MatVecT { w: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Softmax { x: NodeId },
    Concat { a: NodeId, b: NodeId },
    /// Row gather from a matrix-valued node.
    Row { m: NodeId, idx: usize },
    /// Row gather straight from a parameter matrix; backward scatters into
    /// the parameter gradient row without allocating a full matrix.
    GatherRow { param: usize, idx: usize },
    /// Stack row vectors into a matrix.
    Rows { parts: Vec<NodeId> },
    /// Sum of selected entries of a row vector -> 1 x 1.
    PickSum { x: NodeId, idxs: Vec<usize> },
    Ln { x: NodeId },
    Neg { x: NodeId },
    OneMinus { x: NodeId },
    Scale { x: NodeId, c: F },
}

pub struct Tape<'p, F: Real> {
    params: &'p Params<F>,
    ops: Vec<Op<F>>,
    vals: Vec<Tensor<F>>,
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p Params<F>) -> Self {
        Tape { params, ops: Vec::new(), vals: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        match &self.ops[id.0] {
            Op::Param(p) => self.params.get(ParamId(*p)),
            _ => &self.vals[id.0],
        }
    }

    pub fn scalar(&self, id: NodeId) -> F {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.data[0]
    }

    fn push(&mut self, op: Op<F>, val: Tensor<F>) -> NodeId {
        self.ops.push(op);
        self.vals.push(val);
        NodeId(self.ops.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id.0), Tensor::zeros(0, 0))
    }

    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(Op::Const, t)
    }

    pub fn scalar_const(&mut self, v: F) -> NodeId {
        self.constant(Tensor::vector(vec![v]))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wv, xv) = (self.value(w), self.value(x));
        assert_eq!(wv.cols, xv.cols, "matvec shape mismatch");
        let mut out = vec![F::zero(); wv.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = wv.row(i);
            *o = row.iter().zip(&xv.data).map(|(a, b)| *a * *b).sum();
        }
        self.push(Op::MatVec { w, x }, Tensor::vector(out))
    }

    pub fn matvec_t(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (wv, xv) = (self.value(w), self.value(x));
        assert_eq!(wv.rows, xv.cols, "matvec_t shape mismatch");
        let mut out = vec![F::zero(); wv.cols];
        for i in 0..wv.rows {
            let p = xv.data[i];
            for (o, a) in out.iter_mut().zip(wv.row(i)) {
                *o = *o + p * *a;
            }
        }
        self.push(Op::MatVecT { w, x }, Tensor::vector(out))
    }

    fn zip_elem(&mut self, a: NodeId, b: NodeId, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        Tensor { rows: av.rows, cols: av.cols, data }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_elem(a, b, |x, y| x + y);
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_elem(a, b, |x, y| x - y);
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_elem(a, b, |x, y| x * y);
        self.push(Op::Mul { a, b }, v)
    }

    fn map_elem(&mut self, x: NodeId, f: impl Fn(F) -> F) -> Tensor<F> {
        let xv = self.value(x);
        let data = xv.data.iter().map(|v| f(*v)).collect();
        Tensor { rows: xv.rows, cols: xv.cols, data }
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.map_elem(x, |v| F::one() / (F::one() + (-v).exp()));
        self.push(Op::Sigmoid { x }, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.map_elem(x, |v| v.tanh());
        self.push(Op::Tanh { x }, v)
    }

    /// Softmax over a row vector, max-subtracted for stability.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        assert!(!xv.is_empty(), "softmax of empty vector");
        let max = xv.data.iter().cloned().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = xv.data.iter().map(|v| (*v - max).exp()).collect();
        let z: F = exps.iter().cloned().sum();
        let data = exps.into_iter().map(|e| e / z).collect();
        let v = Tensor { rows: xv.rows, cols: xv.cols, data };
        self.push(Op::Softmax { x }, v)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, 1);
        assert_eq!(bv.rows, 1);
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        self.push(Op::Concat { a, b }, Tensor::vector(data))
    }

    pub fn gather_row(&mut self, param: ParamId, idx: usize) -> NodeId {
        let t = self.params.get(param);
        assert!(idx < t.rows, "gather_row {idx} out of range ({} rows)", t.rows);
        let v = Tensor::vector(t.row(idx).to_vec());
        self.push(Op::GatherRow { param: param.0, idx }, v)
    }

    pub fn row(&mut self, m: NodeId, idx: usize) -> NodeId {
        let mv = self.value(m);
        assert!(idx < mv.rows, "row {idx} out of range ({} rows)", mv.rows);
        let v = Tensor::vector(mv.row(idx).to_vec());
        self.push(Op::Row { m, idx }, v)
    }

    pub fn rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::with_capacity(parts.len() * cols);
        for p in &parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols);
            assert_eq!(pv.rows, 1);
            data.extend_from_slice(&pv.data);
        }
        let v = Tensor { rows: parts.len(), cols, data };
        self.push(Op::Rows { parts }, v)
    }

    pub fn pick(&mut self, x: NodeId, idx: usize) -> NodeId {
        self.pick_sum(x, vec![idx])
    }

    pub fn pick_sum(&mut self, x: NodeId, idxs: Vec<usize>) -> NodeId {
        let xv = self.value(x);
        let s: F = idxs.iter().map(|i| xv.data[*i]).sum();
        self.push(Op::PickSum { x, idxs }, Tensor::vector(vec![s]))
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.map_elem(x, |v| v.ln());
        self.push(Op::Ln { x }, v)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let v = self.map_elem(x, |v| -v);
        self.push(Op::Neg { x }, v)
    }

    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let v = self.map_elem(x, |v| F::one() - v);
        self.push(Op::OneMinus { x }, v)
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let v = self.map_elem(x, |v| v * c);
        self.push(Op::Scale { x, c }, v)
    }

    /// Reverse pass from a scalar loss node. Returns gradients aligned with
    /// the parameter set (zero tensors for untouched parameters).
    pub fn backward(&self, loss: NodeId) -> Vec<Tensor<F>> {
        assert_eq!(self.value(loss).len(), 1, "backward seed must be scalar");
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.ops.len()];
        let mut pgrads = self.params.zero_grads();
        grads[loss.0] = Some(Tensor::vector(vec![F::one()]));

        for i in (0..self.ops.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.ops[i] {
                Op::Param(p) => pgrads[*p].add_assign(&g),
                Op::Const => {}
                Op::MatVec { w, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    // dW_ij += g_i x_j ; dx_j += sum_i g_i W_ij
                    let mut dw = Tensor::zeros(wv.rows, wv.cols);
                    let mut dx = Tensor::zeros(1, xv.cols);
                    for r in 0..wv.rows {
                        let gi = g.data[r];
                        let wrow = wv.row(r);
                        let dwrow = dw.row_mut(r);
                        for c in 0..wv.cols {
                            dwrow[c] = gi * xv.data[c];
                            dx.data[c] = dx.data[c] + gi * wrow[c];
                        }
                    }
                    accumulate(&mut grads, &mut pgrads, &self.ops, *w, dw);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::MatVecT { w, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    // c_j = sum_i p_i W_ij : dW_ij += p_i g_j ; dp_i += W_i . g
                    let mut dw = Tensor::zeros(wv.rows, wv.cols);
                    let mut dx = Tensor::zeros(1, xv.cols);
                    for r in 0..wv.rows {
                        let p = xv.data[r];
                        let wrow = wv.row(r);
                        let dwrow = dw.row_mut(r);
                        let mut acc = F::zero();
                        for c in 0..wv.cols {
                            dwrow[c] = p * g.data[c];
                            acc = acc + wrow[c] * g.data[c];
                        }
                        dx.data[r] = acc;
                    }
                    accumulate(&mut grads, &mut pgrads, &self.ops, *w, dw);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, &mut pgrads, &self.ops, *a, g.clone());
                    accumulate(&mut grads, &mut pgrads, &self.ops, *b, g);
                }
                Op::Sub { a, b } => {
                    let mut gn = g.clone();
                    gn.data.iter_mut().for_each(|v| *v = -*v);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *a, g);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *b, gn);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = elem_prod(&g, bv);
                    let db = elem_prod(&g, av);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *a, da);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *b, db);
                }
                Op::Sigmoid { x } => {
                    let y = &self.vals[i];
                    let data = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(g, y)| *g * *y * (F::one() - *y))
                        .collect();
                    let dx = Tensor { rows: y.rows, cols: y.cols, data };
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Tanh { x } => {
                    let y = &self.vals[i];
                    let data = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(g, y)| *g * (F::one() - *y * *y))
                        .collect();
                    let dx = Tensor { rows: y.rows, cols: y.cols, data };
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Softmax { x } => {
                    let y = &self.vals[i];
                    let dot: F = g.data.iter().zip(&y.data).map(|(g, y)| *g * *y).sum();
                    let data = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .map(|(g, y)| (*g - dot) * *y)
                        .collect();
                    let dx = Tensor { rows: y.rows, cols: y.cols, data };
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    let da = Tensor::vector(g.data[..na].to_vec());
                    let db = Tensor::vector(g.data[na..].to_vec());
                    accumulate(&mut grads, &mut pgrads, &self.ops, *a, da);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *b, db);
                }
                Op::GatherRow { param, idx } => {
                    let row = pgrads[*param].row_mut(*idx);
                    for (r, g) in row.iter_mut().zip(&g.data) {
                        *r = *r + *g;
                    }
                }
                Op::Row { m, idx } => {
                    let mv = self.value(*m);
                    let mut dm = Tensor::zeros(mv.rows, mv.cols);
                    dm.row_mut(*idx).copy_from_slice(&g.data);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *m, dm);
                }
                Op::Rows { parts } => {
                    for (r, p) in parts.iter().enumerate() {
                        let dp = Tensor::vector(g.row(r).to_vec());
                        accumulate(&mut grads, &mut pgrads, &self.ops, *p, dp);
                    }
                }
                Op::PickSum { x, idxs } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for idx in idxs {
                        dx.data[*idx] = dx.data[*idx] + g.data[0];
                    }
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Ln { x } => {
                    let xv = self.value(*x);
                    let data = g.data.iter().zip(&xv.data).map(|(g, x)| *g / *x).collect();
                    let dx = Tensor { rows: xv.rows, cols: xv.cols, data };
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Neg { x } => {
                    let mut dx = g;
                    dx.data.iter_mut().for_each(|v| *v = -*v);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::OneMinus { x } => {
                    let mut dx = g;
                    dx.data.iter_mut().for_each(|v| *v = -*v);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
                Op::Scale { x, c } => {
                    let mut dx = g;
                    dx.data.iter_mut().for_each(|v| *v = *v * *c);
                    accumulate(&mut grads, &mut pgrads, &self.ops, *x, dx);
                }
            }
        }
        pgrads
    }
}

fn elem_prod<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let data = a.data.iter().zip(&b.data).map(|(x, y)| *x * *y).collect();
    Tensor { rows: a.rows, cols: a.cols, data }
}

fn accumulate<F: Real>(
    grads: &mut [Option<Tensor<F>>],
    pgrads: &mut [Tensor<F>],
    ops: &[Op<F>],
    target: NodeId,
    g: Tensor<F>,
) {
    // Short-circuit params so a gathered embedding row does not force a
    // full-matrix gradient allocation per use.
    if let Op::Param(p) = &ops[target.0] {
        pgrads[*p].add_assign(&g);
        return;
    }
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn softmax_is_simplex_and_stable() {
        let params: Params<f64> = Params::new();
        let mut t = Tape::new(&params);
        let x = t.constant(Tensor::vector(vec![1000.0, 1000.0, 999.0]));
        let s = t.softmax(x);
        let v = t.value(s);
        assert!(v.data.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert_relative_eq!(v.data.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matvec_matches_hand_computation() {
        let params: Params<f64> = Params::new();
        let mut t = Tape::new(&params);
        let w = t.constant(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let x = t.constant(Tensor::vector(vec![1.0, 0.0, -1.0]));
        let y = t.matvec(w, x);
        assert_eq!(t.value(y).data, vec![-2.0, -2.0]);
    }

    #[test]
    fn backward_through_simple_chain() {
        // loss = -ln(softmax(Wx)[0])
        let mut params: Params<f64> = Params::new();
        let w_id = params.add("w", Tensor::from_vec(2, 2, vec![0.5, -0.2, 0.1, 0.3]));
        let mut t = Tape::new(&params);
        let w = t.param(w_id);
        let x = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let logits = t.matvec(w, x);
        let p = t.softmax(logits);
        let p0 = t.pick(p, 0);
        let lp = t.ln(p0);
        let loss = t.neg(lp);

        let grads = t.backward(loss);
        // finite-difference check
        let eps = 1e-6;
        let base = t.scalar(loss);
        for i in 0..4 {
            let mut pp = params.clone();
            pp.get_mut(ParamId(0)).data[i] += eps;
            let mut t2 = Tape::new(&pp);
            let w = t2.param(ParamId(0));
            let x = t2.constant(Tensor::vector(vec![1.0, 2.0]));
            let logits = t2.matvec(w, x);
            let p = t2.softmax(logits);
            let p0 = t2.pick(p, 0);
            let lp = t2.ln(p0);
            let loss2 = t2.neg(lp);
            let fd = (t2.scalar(loss2) - base) / eps;
            assert_relative_eq!(grads[0].data[i], fd, max_relative = 1e-4, epsilon = 1e-8);
        }
    }
}
