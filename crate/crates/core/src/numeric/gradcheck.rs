use crate::{Error, Result};

/// Compare an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar loss and its analytic gradient at a parameter
/// vector. Returns the worst relative disagreement over all parameters,
/// where the per-component relative error is `|a - n| / max(|n|, 1e-4)`
/// with `n` the central-difference estimate.
pub fn grad_check<F>(mut f: F, params: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArg("grad_check step must be positive".into()));
    }
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check: loss is non-finite".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradient entries", params.len()),
            format!("{}", analytic.len()),
        ));
    }
    let mut perturbed = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        perturbed[i] = params[i] + step;
        let (up, _) = f(&perturbed)?;
        perturbed[i] = params[i] - step;
        let (down, _) = f(&perturbed)?;
        perturbed[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check: perturbed loss non-finite at parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}
