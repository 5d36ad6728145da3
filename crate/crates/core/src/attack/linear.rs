use super::AttackError;
use crate::conv::convolve2d;
use crate::kernel::SmoothingKernel;
use crate::net::{Dense, Layer, NetError, Network};
use crate::tensor::Tensor;

/// Cosine floor used by the closed form, matching the attack default.
const ORTHOGONALITY_FLOOR: f64 = 1e-3;

/// Smooth perturbation reaching `wᵀ(x + r) + b = 0`:
/// `r = −(f(x) / wᵀ(g*w))·(g*w)`.
pub fn linear_closed_form(w: &Tensor, b: f64, x: &Tensor, g: &SmoothingKernel) -> Result<Tensor, AttackError> {
    w.check_same_shape(x)?;
    let w_tilde = convolve2d(w, g)?;
    let denominator = w.dot(&w_tilde)?;
    if !(denominator.abs() >= ORTHOGONALITY_FLOOR * w.norm_l2() * w_tilde.norm_l2()) || denominator == 0.0 {
        return Err(AttackError::Orthogonal("wᵀ(g*w) vanishes".into()));
    }
    let f = w.dot(x)? + b;
    Ok(w_tilde.scale(-f / denominator))
}

/// Two-logit network with scores `(0, wᵀx + b)`: class 1 exactly when
/// `wᵀx + b > 0`.
pub fn linear_network(w: &Tensor, b: f64) -> Result<Network, NetError> {
    let n = w.len();
    let mut rows = vec![0.0; n];
    rows.extend_from_slice(w.data());
    let weight = Tensor::new(vec![2, n], rows)?;
    let bias = Tensor::new(vec![2], vec![0.0, b])?;
    Network::new(w.shape().to_vec(), vec![Layer::Flatten, Layer::Dense(Dense { weight, bias })])
}
