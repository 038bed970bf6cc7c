use crate::error::{Error, Result};

/// Central-finite-difference check of an analytic gradient.
///
/// `f` is the scalar objective, `analytic` its claimed gradient at `x`.
/// Returns the max over coordinates of
/// |analytic - central| / max(1, |analytic|, |central|).
pub fn grad_check(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    analytic: &[f64],
    x: &[f64],
    eps: f64,
) -> Result<f64> {
    if analytic.len() != x.len() {
        return Err(Error::Dimension(format!(
            "gradient length {} vs point length {}",
            analytic.len(),
            x.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Numerical(format!("eps must be positive, got {eps}")));
    }
    let mut point = x.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..point.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = f(&point)?;
        point[i] = orig - eps;
        let minus = f(&point)?;
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "objective non-finite near coordinate {i}: f+={plus}, f-={minus}"
            )));
        }
        let central = (plus - minus) / (2.0 * eps);
        let denom = 1.0_f64.max(analytic[i].abs()).max(central.abs());
        let rel = (analytic[i] - central).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
