use super::{Result, Tensor, TensorError};

/// Central-difference gradient of a scalar function at `x`.
///
/// Each element is perturbed by `±eps` in turn; `f` must be deterministic.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.values_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.values_mut()[i] = orig;
        for value in [plus, minus] {
            if !value.is_finite() {
                return Err(TensorError::NonFinite { index: i, value });
            }
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::from_vec(x.shape(), grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
