//! Central finite-difference gradients for verifying the tape backward
//! pass. Only touches parameters through the loss closure, so it stays
//! independent of the reverse-mode implementation.

use super::tensor::{ParamId, Params, Tensor};

/// Central finite difference of `loss` w.r.t. every parameter scalar.
pub fn finite_diff<L>(params: &Params<f64>, eps: f64, loss: L) -> Vec<Tensor<f64>>
where
    L: Fn(&Params<f64>) -> f64,
{
    let mut out = params.zero_grads();
    for i in 0..params.len() {
        let n = params.get(ParamId(i)).len();
        for j in 0..n {
            let mut plus = params.clone();
            plus.get_mut(ParamId(i)).data[j] += eps;
            let mut minus = params.clone();
            minus.get_mut(ParamId(i)).data[j] -= eps;
            out[i].data[j] = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        }
    }
    out
}

/// Largest relative error between analytic and finite-difference gradients,
/// with an absolute floor so near-zero pairs do not blow up the ratio.
pub fn max_relative_error(
    analytic: &[Tensor<f64>],
    numeric: &[Tensor<f64>],
    abs_floor: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.data.iter().zip(&n.data) {
            let denom = x.abs().max(y.abs()).max(abs_floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
