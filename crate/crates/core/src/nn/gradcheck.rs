//! Central finite-difference checks of analytic gradients.

use super::{NnError, RngState, Tensor};

/// Anything with a parameter list and a scalar loss whose gradient can be
/// computed analytically.
pub trait Differentiable {
    type Batch: ?Sized;

    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
    fn loss(&self, batch: &Self::Batch) -> Result<f64, NnError>;
    /// Loss and one gradient tensor per entry of [`Differentiable::parameters`].
    fn loss_and_grad(&self, batch: &Self::Batch) -> Result<(f64, Vec<Tensor>), NnError>;
}

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter index, flat offset) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates_checked: usize,
}

/// Compares analytic gradients against central differences with step `delta`
/// on up to `per_tensor` random coordinates of every parameter tensor (all of
/// them when the tensor is smaller).
pub fn grad_check<M: Differentiable>(
    model: &mut M,
    batch: &M::Batch,
    delta: f64,
    per_tensor: usize,
    rng: &mut RngState,
) -> Result<GradCheckReport, NnError> {
    let (_, grads) = model.loss_and_grad(batch)?;
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: (0, 0), coordinates_checked: 0 };
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    for (pi, &size) in sizes.iter().enumerate() {
        let coords: Vec<usize> =
            if size <= per_tensor { (0..size).collect() } else { (0..per_tensor).map(|_| rng.below(size)).collect() };
        for idx in coords {
            let original = model.parameters()[pi].data()[idx];
            model.parameters_mut()[pi].data_mut()[idx] = original + delta;
            let plus = model.loss(batch)?;
            model.parameters_mut()[pi].data_mut()[idx] = original - delta;
            let minus = model.loss(batch)?;
            model.parameters_mut()[pi].data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * delta);
            let err = relative_error(grads[pi].data()[idx], numeric);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (pi, idx);
            }
            report.coordinates_checked += 1;
        }
    }
    Ok(report)
}
