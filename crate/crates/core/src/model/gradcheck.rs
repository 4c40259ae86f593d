use ndarray::{Array3, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{combined_loss, combined_loss_grad, LossWeights};
use super::unet::UNetModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Number of parameters compared.
    pub checked: usize,
    /// Parameters passed over because a perturbation flipped a ReLU, a
    /// pooling winner or a residual sign, so the central difference spans a
    /// kink and does not estimate the derivative.
    pub skipped: usize,
    /// Euclidean norm of the full analytic gradient.
    pub grad_norm: f64,
}

/// Loss plus the piecewise-linear state it was evaluated in.
fn evaluate(model: &UNetModel<f64>, input: &Array3<f64>, target: &Array3<f64>) -> Result<(f64, Vec<u8>)> {
    let (out, mut pattern) = model.forward_with_pattern(input)?;
    Zip::from(&out).and(target).for_each(|&o, &t| pattern.push(u8::from(o > t) + 2 * u8::from(o < t)));
    Ok((combined_loss(&out, target, LossWeights::default())?, pattern))
}

/// Compares back-propagated gradients of the combined loss with central
/// differences of step `step` on `samples` randomly chosen parameters.
///
/// Parameters are drawn in a seeded random order; a draw whose `±step`
/// perturbation changes the activation pattern is skipped and the next one
/// taken, until `samples` comparisons are made or the parameters run out.
pub fn loss_gradient_check(
    model: &UNetModel<f64>,
    input: &Array3<f64>,
    target: &Array3<f64>,
    samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let weights = LossWeights::default();
    let (_, grads) = model.loss_and_grad(input, |out| combined_loss_grad(out, target, weights))?;
    let grad_norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    let (_, base) = evaluate(model, input, target)?;

    let mut order: Vec<usize> = (0..model.param_count()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut probe = model.clone();
    let (mut checked, mut skipped) = (0, 0);
    let mut max_rel_error = 0.0f64;
    for idx in order {
        if checked == samples {
            break;
        }
        let original = probe.params()[idx];
        probe.params_mut()[idx] = original + step;
        let (plus, pattern_plus) = evaluate(&probe, input, target)?;
        probe.params_mut()[idx] = original - step;
        let (minus, pattern_minus) = evaluate(&probe, input, target)?;
        probe.params_mut()[idx] = original;
        if pattern_plus != base || pattern_minus != base {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let analytic = grads[idx];
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel_error = max_rel_error.max((analytic - numeric).abs() / scale);
        checked += 1;
    }
    Ok(GradCheckReport { max_rel_error, checked, skipped, grad_norm })
}
