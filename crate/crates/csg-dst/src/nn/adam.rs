//! Adam optimizer with global-norm gradient clipping.

use super::tensor::{Params, Real, Tensor};

#[derive(Clone, Debug)]
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    clip_norm: F,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    /// (param index, row) pairs whose gradient is forced to zero, e.g. the
    /// PAD embedding row.
    frozen_rows: Vec<(usize, usize)>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &Params<F>, lr: f64, clip_norm: f64) -> Self {
        Adam {
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            clip_norm: F::from_f64(clip_norm),
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
            frozen_rows: Vec::new(),
        }
    }

    pub fn freeze_row(&mut self, param_index: usize, row: usize) {
        self.frozen_rows.push((param_index, row));
    }

    pub fn apply(&mut self, params: &mut Params<F>, grads: &mut [Tensor<F>]) {
        for (p, r) in &self.frozen_rows {
            grads[*p].row_mut(*r).iter_mut().for_each(|g| *g = F::zero());
        }

        let total: F = grads.iter().map(|g| g.data.iter().map(|v| *v * *v).sum::<F>()).sum();
        let norm = total.sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { F::one() };

        self.step += 1;
        let t = F::from_f64(self.step as f64);
        let bc1 = F::one() - self.beta1.powf(t);
        let bc2 = F::one() - self.beta2.powf(t);

        for i in 0..grads.len() {
            let pt = params.get_mut(super::tensor::ParamId(i));
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..pt.data.len() {
                let g = grads[i].data[j] * scale;
                m.data[j] = self.beta1 * m.data[j] + (F::one() - self.beta1) * g;
                v.data[j] = self.beta2 * v.data[j] + (F::one() - self.beta2) * g * g;
                let mh = m.data[j] / bc1;
                let vh = v.data[j] / bc2;
                pt.data[j] = pt.data[j] - self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::ParamId;

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x - 3)^2
        let mut params: Params<f64> = Params::new();
        let x = params.add("x", Tensor::vector(vec![0.0]));
        let mut opt = Adam::new(&params, 0.1, 10.0);
        for _ in 0..200 {
            let xv = params.get(x).data[0];
            let mut grads = params.zero_grads();
            grads[0].data[0] = 2.0 * (xv - 3.0);
            opt.apply(&mut params, &mut grads);
        }
        assert!((params.get(x).data[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn frozen_row_stays_put() {
        let mut params: Params<f64> = Params::new();
        let w = params.add("w", Tensor::zeros(2, 2));
        let mut opt = Adam::new(&params, 0.1, 10.0);
        opt.freeze_row(0, 0);
        let mut grads = params.zero_grads();
        grads[0].fill(1.0);
        opt.apply(&mut params, &mut grads);
        assert_eq!(params.get(w).row(0), &[0.0, 0.0]);
        assert!(params.get(ParamId(0)).row(1).iter().all(|v| *v != 0.0));
    }
}
