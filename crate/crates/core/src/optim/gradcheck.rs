use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest per-element relative error between `analytic_grad` and the
/// central-difference gradient of `f` at `x`.
pub fn gradient_check<F>(f: F, x: &Tensor, analytic_grad: &Tensor) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64> + Sync + Send,
{
    let all: Vec<usize> = (0..x.len()).collect();
    gradient_check_at(f, x, analytic_grad, &all)
}

/// [`gradient_check`] restricted to the given flat element indices.
pub fn gradient_check_at<F>(f: F, x: &Tensor, analytic_grad: &Tensor, indices: &[usize]) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<f64> + Sync + Send,
{
    if x.shape() != analytic_grad.shape() {
        return Err(Error::shape(format!(
            "point {:?} vs gradient {:?}",
            x.shape(),
            analytic_grad.shape()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
        return Err(Error::Input(format!(
            "index {bad} out of range for {} elements",
            x.len()
        )));
    }
    // one scratch copy of `x` per chunk, perturbed and restored in place
    let chunk = indices.len().div_ceil(par::current_threads()).max(1);
    let errors = par::map_range(indices.len().div_ceil(chunk), |c| -> Result<f64> {
        let mut probe = x.clone();
        let mut worst = 0.0f64;
        for &i in &indices[c * chunk..((c + 1) * chunk).min(indices.len())] {
            let x0 = x.data()[i];
            probe.data_mut()[i] = x0 + FD_STEP;
            let plus = f(&probe)?;
            probe.data_mut()[i] = x0 - FD_STEP;
            let minus = f(&probe)?;
            probe.data_mut()[i] = x0;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!("non-finite objective near element {i}")));
            }
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic_grad.data()[i], numeric));
        }
        Ok(worst)
    });
    errors.into_iter().try_fold(0.0f64, |worst, e| Ok(worst.max(e?)))
}
