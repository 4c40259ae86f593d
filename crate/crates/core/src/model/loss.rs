use ndarray::{Array3, Zip};

use super::Real;
use crate::{Error, Result};

/// Relative weights of the absolute and squared error terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mae: f64,
    pub mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { mae: 1.0, mse: 1.0 }
    }
}

fn check<F: Real>(pred: &Array3<F>, target: &Array3<F>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty tensors".into()));
    }
    Ok(())
}

/// `mae * mean|p - t| + mse * mean (p - t)^2` over all channels and pixels.
pub fn combined_loss<F: Real>(pred: &Array3<F>, target: &Array3<F>, weights: LossWeights) -> Result<F> {
    check(pred, target)?;
    let (mut abs, mut sq) = (0.0f64, 0.0f64);
    Zip::from(pred).and(target).for_each(|&p, &t| {
        let r = (p - t).to_f64().unwrap_or(f64::NAN);
        abs += r.abs();
        sq += r * r;
    });
    let n = pred.len() as f64;
    Ok(F::from_f64(weights.mae * abs / n + weights.mse * sq / n).expect("representable"))
}

/// Loss value and its gradient with respect to `pred`. Exact-zero residuals
/// get a zero subgradient from the absolute term.
pub fn combined_loss_grad<F: Real>(
    pred: &Array3<F>,
    target: &Array3<F>,
    weights: LossWeights,
) -> Result<(F, Array3<F>)> {
    let value = combined_loss(pred, target, weights)?;
    let n = pred.len() as f64;
    let a = F::from_f64(weights.mae / n).expect("representable");
    let b = F::from_f64(2.0 * weights.mse / n).expect("representable");
    let mut grad = Array3::zeros(pred.dim());
    Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let r = p - t;
        let sign = if r > F::zero() {
            F::one()
        } else if r < F::zero() {
            -F::one()
        } else {
            F::zero()
        };
        *g = a * sign + b * r;
    });
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_at_target() {
        let t = Array3::from_elem((2, 4, 4), 0.3f32);
        assert_eq!(combined_loss(&t, &t, LossWeights::default()).unwrap(), 0.0);
    }

    #[test]
    fn constant_half_offset() {
        let t = Array3::<f64>::zeros((2, 8, 8));
        let p = Array3::from_elem((2, 8, 8), 0.5);
        assert!((combined_loss(&p, &t, LossWeights::default()).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Array3::from_shape_fn((2, 16, 16), |_| rng.random_range(-2.0f32..2.0));
        let t = Array3::from_shape_fn((2, 16, 16), |_| rng.random_range(-2.0f32..2.0));
        let pv: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let tv: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        let mae = pv.iter().zip(&tv).map(|(a, b)| (a - b).abs()).sum::<f64>() / pv.len() as f64;
        let mse = pv.iter().zip(&tv).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pv.len() as f64;
        let got = combined_loss(&p, &t, LossWeights::default()).unwrap() as f64;
        assert!((got - (mae + mse)).abs() < 1e-7 * (mae + mse).max(1.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = Array3::<f32>::zeros((1, 4, 4));
        let b = Array3::<f32>::zeros((2, 4, 4));
        assert!(combined_loss(&a, &b, LossWeights::default()).is_err());
    }

    #[test]
    fn mse_gradient_scales_with_residual() {
        let w = LossWeights { mae: 0.0, mse: 1.0 };
        let t = Array3::<f64>::zeros((1, 4, 4));
        let r = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| i as f64 - j as f64 * 0.5);
        let (_, g1) = combined_loss_grad(&r, &t, w).unwrap();
        let (_, g2) = combined_loss_grad(&(&r * 2.0), &t, w).unwrap();
        assert!((&g2 - &(&g1 * 2.0)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = Array3::from_shape_fn((1, 3, 3), |_| rng.random_range(-1.0f64..1.0));
        let t = Array3::zeros((1, 3, 3));
        let w = LossWeights::default();
        let (_, g) = combined_loss_grad(&p, &t, w).unwrap();
        let h = 1e-6;
        for idx in [(0, 0, 0), (0, 1, 2), (0, 2, 1)] {
            let mut pp = p.clone();
            pp[idx] += h;
            let mut pm = p.clone();
            pm[idx] -= h;
            let fd = (combined_loss(&pp, &t, w).unwrap() - combined_loss(&pm, &t, w).unwrap()) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6);
        }
    }
}
