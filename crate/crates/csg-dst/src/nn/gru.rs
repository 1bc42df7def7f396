//! Gated recurrent unit cell over the autodiff tape.

use rand::Rng;

use super::tape::{NodeId, Tape};
use super::tensor::{ParamId, Params, Real, Tensor};

/// Parameter handles for one GRU cell.
///
/// Update gate z, reset gate r, candidate n:
///   z = sigmoid(Wz x + Uz h + bz)
///   r = sigmoid(Wr x + Ur h + br)
///   n = tanh(Wn x + Un (r * h) + bn)
///   h' = (1 - z) * n + z * h
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn register<F: Real, R: Rng>(
        params: &mut Params<F>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let scale = (1.0 / hidden_dim as f64).sqrt();
        let mut mat = |params: &mut Params<F>, name: &str, rows: usize, cols: usize| {
            params.add(format!("{prefix}.{name}"), Tensor::uniform(rows, cols, scale, rng))
        };
        GruCell {
            wz: mat(params, "wz", hidden_dim, input_dim),
            uz: mat(params, "uz", hidden_dim, hidden_dim),
            bz: params.add(format!("{prefix}.bz"), Tensor::zeros(1, hidden_dim)),
            wr: mat(params, "wr", hidden_dim, input_dim),
            ur: mat(params, "ur", hidden_dim, hidden_dim),
            br: params.add(format!("{prefix}.br"), Tensor::zeros(1, hidden_dim)),
            wn: mat(params, "wn", hidden_dim, input_dim),
            un: mat(params, "un", hidden_dim, hidden_dim),
            bn: params.add(format!("{prefix}.bn"), Tensor::zeros(1, hidden_dim)),
            input_dim,
            hidden_dim,
        }
    }

    /// One recurrence step. `x` is 1 x input_dim, `h` is 1 x hidden_dim.
    pub fn step<F: Real>(&self, t: &mut Tape<F>, x: NodeId, h: NodeId) -> NodeId {
        let (wz, uz, bz) = (t.param(self.wz), t.param(self.uz), t.param(self.bz));
        let (wr, ur, br) = (t.param(self.wr), t.param(self.ur), t.param(self.br));
        let (wn, un, bn) = (t.param(self.wn), t.param(self.un), t.param(self.bn));

        let zx = t.matvec(wz, x);
        let zh = t.matvec(uz, h);
        let zs = t.add(zx, zh);
        let zs = t.add(zs, bz);
        let z = t.sigmoid(zs);

        let rx = t.matvec(wr, x);
        let rh = t.matvec(ur, h);
        let rs = t.add(rx, rh);
        let rs = t.add(rs, br);
        let r = t.sigmoid(rs);

        let nx = t.matvec(wn, x);
        let rh = t.mul(r, h);
        let nh = t.matvec(un, rh);
        let ns = t.add(nx, nh);
        let ns = t.add(ns, bn);
        let n = t.tanh(ns);

        let omz = t.one_minus(z);
        let a = t.mul(omz, n);
        let b = t.mul(z, h);
        t.add(a, b)
    }

    pub fn zero_state<F: Real>(&self, t: &mut Tape<F>) -> NodeId {
        t.constant(Tensor::zeros(1, self.hidden_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_preserves_hidden_shape_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params: Params<f64> = Params::new();
        let cell = GruCell::register(&mut params, "gru", 4, 6, &mut rng);

        let run = |params: &Params<f64>| {
            let mut t = Tape::new(params);
            let x = t.constant(Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]));
            let h0 = cell.zero_state(&mut t);
            let h1 = cell.step(&mut t, x, h0);
            t.value(h1).data.clone()
        };
        let a = run(&params);
        let b = run(&params);
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
