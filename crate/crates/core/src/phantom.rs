//! Seeded brain-like ellipse phantoms for desk-scale experiments.
//!
//! Each phantom has a scalp ring, a gray-matter cortex with a folded inner
//! boundary, a white-matter core, two ventricles and a few small deep
//! nuclei. Shapes, positions and intensities are jittered per seed.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensorio::MagnitudeSlice;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radius: < 1 inside.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        (u * u + v * v).sqrt()
    }

    fn polar_angle(&self, x: f64, y: f64) -> f64 {
        (y - self.cy).atan2(x - self.cx)
    }
}

/// Renders an `h x w` phantom normalized to [0, 1].
pub fn brain_phantom(h: usize, w: usize, seed: u64) -> Result<MagnitudeSlice> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |scale: f64| rng.random_range(-scale..scale);

    let cx = jitter(0.04);
    let cy = jitter(0.04);
    let tilt = jitter(0.2);
    let head_a = 0.86 + jitter(0.05);
    let head_b = 0.70 + jitter(0.05);
    let head = Ellipse { cx, cy, a: head_b, b: head_a, angle: tilt };
    let brain = Ellipse { a: head.a - 0.07, b: head.b - 0.07, ..head };
    let white = Ellipse { a: brain.a * (0.72 + jitter(0.05)), b: brain.b * (0.74 + jitter(0.05)), ..head };

    // cortical folding: a few harmonics on the GM/WM boundary
    let folds: Vec<(f64, f64, f64)> = (0..3)
        .map(|k| (5.0 + 3.0 * k as f64 + jitter(1.0).round(), 0.05 + jitter(0.02), jitter(PI)))
        .collect();

    let vent_sep = 0.09 + jitter(0.03);
    let vent_len = 0.22 + jitter(0.05);
    let ventricles = [-1.0, 1.0].map(|side| Ellipse {
        cx: cx + side * vent_sep,
        cy: cy + jitter(0.04),
        a: 0.05 + jitter(0.015),
        b: vent_len,
        angle: tilt + side * (0.25 + jitter(0.1)),
    });
    let nuclei: Vec<Ellipse> = (0..3)
        .map(|_| Ellipse {
            cx: cx + jitter(0.3),
            cy: cy + jitter(0.35),
            a: 0.04 + jitter(0.02).abs(),
            b: 0.05 + jitter(0.02).abs(),
            angle: jitter(PI),
        })
        .collect();

    let scalp_level = 0.45 + jitter(0.05);
    let csf_level = 0.22 + jitter(0.04);
    let gm_level = 0.58 + jitter(0.04);
    let wm_level = 0.88 + jitter(0.04);
    let nucleus_level = 0.66 + jitter(0.04);
    let shading: (f64, f64, f64) = (jitter(0.06), jitter(0.06), jitter(PI));

    let value = |x: f64, y: f64| -> f64 {
        if head.radius(x, y) >= 1.0 {
            return 0.0;
        }
        if brain.radius(x, y) >= 1.0 {
            return scalp_level;
        }
        if brain.radius(x, y) >= 0.96 {
            return csf_level;
        }
        let theta = white.polar_angle(x, y);
        let wobble: f64 = folds.iter().map(|&(k, amp, ph)| amp * (k * theta + ph).sin()).sum();
        let mut v = if white.radius(x, y) < 1.0 + wobble { wm_level } else { gm_level };
        if nuclei.iter().any(|e| e.radius(x, y) < 1.0) {
            v = nucleus_level;
        }
        if ventricles.iter().any(|e| e.radius(x, y) < 1.0) {
            v = csf_level;
        }
        // slow intensity shading, as from coil sensitivity
        v * (1.0 + shading.0 * x + shading.1 * (y + shading.2).sin())
    };

    // 3x3 supersampling to soften edges
    const SS: usize = 3;
    let data = Array2::from_shape_fn((h, w), |(i, j)| {
        let mut acc = 0.0;
        for si in 0..SS {
            for sj in 0..SS {
                let y = ((i as f64 + (si as f64 + 0.5) / SS as f64) / h as f64) * 2.0 - 1.0;
                let x = ((j as f64 + (sj as f64 + 0.5) / SS as f64) / w as f64) * 2.0 - 1.0;
                acc += value(x, y);
            }
        }
        (acc / (SS * SS) as f64) as f32
    });
    MagnitudeSlice::normalized(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{segment_tissues, BACKGROUND};

    #[test]
    fn deterministic_per_seed() {
        let a = brain_phantom(64, 64, 3).unwrap();
        assert_eq!(a, brain_phantom(64, 64, 3).unwrap());
        assert_ne!(a, brain_phantom(64, 64, 4).unwrap());
    }

    #[test]
    fn normalized_with_background_border() {
        let p = brain_phantom(64, 64, 0).unwrap();
        assert!((p.max() - 1.0).abs() < 1e-6);
        assert!(p.data().row(0).iter().all(|&v| v == 0.0));
        assert!(p.data().column(0).iter().all(|&v| v == 0.0));
        let labels = segment_tissues(&p);
        let tissue = labels.iter().filter(|&&l| l != BACKGROUND).count();
        assert!(tissue > 64 * 64 / 3);
    }
}
