use super::layers::Parameterized;
use crate::error::Result;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic parameter gradients with central finite differences.
///
/// `loss_and_grad` must zero the gradients, run a forward/backward pass and
/// return the loss. When the model has more than `max_params` scalars, an
/// evenly strided subset of `max_params` coordinates is checked.
pub fn grad_check<M, F>(model: &mut M, mut loss_and_grad: F, eps: f64, max_params: usize) -> Result<f64>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M) -> Result<f64>,
{
    loss_and_grad(model)?;
    let analytic = model.flat_grads();
    let base = model.flat_params();
    let n = base.len();
    let stride = n.div_ceil(max_params.max(1)).max(1);
    let mut worst: f64 = 0.0;
    let mut theta = base.clone();
    for i in (0..n).step_by(stride) {
        theta[i] = base[i] + eps;
        model.set_flat_params(&theta);
        let up = loss_and_grad(model)?;
        theta[i] = base[i] - eps;
        model.set_flat_params(&theta);
        let down = loss_and_grad(model)?;
        theta[i] = base[i];
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    model.set_flat_params(&base);
    loss_and_grad(model)?;
    Ok(worst)
}
