use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorio::{Domain, MaskPattern, StoredSlice};

/// Allowed gap between requested and achieved sampling fraction.
pub const FRACTION_TOLERANCE: f64 = 0.02;

/// Fraction of phase-encode rows kept as a dense low-frequency band.
pub const DEFAULT_CENTER_FRACTION: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    PseudoRadial,
    Cartesian,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    data: Array2<u8>,
    pub kind: MaskKind,
    pub target_fraction: f64,
    pub achieved_fraction: f64,
    pub seed: u64,
}

impl SamplingMask {
    fn from_data(data: Array2<u8>, kind: MaskKind, target_fraction: f64, seed: u64) -> Self {
        let achieved_fraction = sampled_fraction(&data);
        Self {
            data,
            kind,
            target_fraction,
            achieved_fraction,
            seed,
        }
    }

    fn full(h: usize, w: usize, seed: u64) -> Self {
        Self::from_data(Array2::ones((h, w)), MaskKind::Full, 1.0, seed)
    }

    /// 1 where k-space is sampled, 0 elsewhere.
    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn sampled_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Single-channel k-space plane, as stored on disk.
    pub fn to_stored(&self) -> StoredSlice {
        StoredSlice::Plane {
            domain: Domain::Kspace,
            data: self.data.mapv(f32::from),
            scale: 1.0,
        }
    }
}

fn sampled_fraction(data: &Array2<u8>) -> f64 {
    let ones = data.iter().filter(|&&v| v != 0).count();
    ones as f64 / data.len() as f64
}

fn check_request(h: usize, w: usize, target: f64) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("mask dimensions {h}x{w} must be positive")));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target fraction {target} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Dispatches to the pattern's generator with default settings.
pub fn make_mask(pattern: MaskPattern, h: usize, w: usize, target: f64, seed: u64) -> Result<SamplingMask> {
    match pattern {
        MaskPattern::PseudoRadial => make_pseudo_radial_mask(h, w, target, seed),
        MaskPattern::Cartesian => {
            make_cartesian_mask(h, w, target, DEFAULT_CENTER_FRACTION.min(target), seed)
        }
    }
}

/// Equi-angular spokes through `(H/2, W/2)`, rasterized with Bresenham lines
/// and a seeded global angular offset.
///
/// The spoke count is the smallest one whose coverage reaches
/// `target - FRACTION_TOLERANCE`.
pub fn make_pseudo_radial_mask(h: usize, w: usize, target: f64, seed: u64) -> Result<SamplingMask> {
    check_request(h, w, target)?;
    if target >= 1.0 {
        return Ok(SamplingMask::full(h, w, seed));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0.0..PI);
    let goal = target - FRACTION_TOLERANCE;

    let coverage = |n: usize| {
        let data = draw_spokes(h, w, n, offset);
        (sampled_fraction(&data), data)
    };

    // Coverage grows with the spoke count (up to small rasterization
    // wobble), so bisect for the first count reaching the goal and then step
    // back over any wobble.
    let mut lo = 1usize;
    let mut hi = 2 * (h + w);
    while coverage(hi).0 < goal {
        hi *= 2;
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if coverage(mid).0 >= goal {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut n = lo;
    while n > 1 && coverage(n - 1).0 >= goal {
        n -= 1;
    }
    let (_, data) = coverage(n);
    Ok(SamplingMask::from_data(data, MaskKind::PseudoRadial, target, seed))
}

fn draw_spokes(h: usize, w: usize, spokes: usize, offset: f64) -> Array2<u8> {
    let mut data = Array2::zeros((h, w));
    let (cy, cx) = ((h / 2) as i64, (w / 2) as i64);
    data[[h / 2, w / 2]] = 1;
    for k in 0..spokes {
        let theta = offset + k as f64 * PI / spokes as f64;
        let (dy, dx) = (theta.sin(), theta.cos());
        for sign in [1.0, -1.0] {
            let (ey, ex) = ray_end(cy, cx, sign * dy, sign * dx, h, w);
            bresenham(&mut data, (cy, cx), (ey, ex));
        }
    }
    data
}

/// Last grid point along the ray from the center in direction `(dy, dx)`.
fn ray_end(cy: i64, cx: i64, dy: f64, dx: f64, h: usize, w: usize) -> (i64, i64) {
    let reach = |c: i64, d: f64, n: usize| {
        if d > 1e-12 {
            (n as f64 - 1.0 - c as f64) / d
        } else if d < -1e-12 {
            -(c as f64) / d
        } else {
            f64::INFINITY
        }
    };
    let t = reach(cy, dy, h).min(reach(cx, dx, w));
    let ey = (cy as f64 + t * dy).round().clamp(0.0, h as f64 - 1.0) as i64;
    let ex = (cx as f64 + t * dx).round().clamp(0.0, w as f64 - 1.0) as i64;
    (ey, ex)
}

fn bresenham(data: &mut Array2<u8>, from: (i64, i64), to: (i64, i64)) {
    let (mut y, mut x) = from;
    let dy = -(to.0 - y).abs();
    let dx = (to.1 - x).abs();
    let sy = if y < to.0 { 1 } else { -1 };
    let sx = if x < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        data[[y as usize, x as usize]] = 1;
        if (y, x) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Whole phase-encode rows: a contiguous central band of
/// `ceil(center_fraction * H)` rows plus seeded random rows until
/// `round(target * H)` rows are selected.
pub fn make_cartesian_mask(
    h: usize,
    w: usize,
    target: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    check_request(h, w, target)?;
    if !(0.0..=target).contains(&center_fraction) {
        return Err(Error::InvalidArgument(format!(
            "center fraction {center_fraction} must lie in [0, {target}]"
        )));
    }
    if target >= 1.0 {
        return Ok(SamplingMask::full(h, w, seed));
    }
    let total = ((target * h as f64).round() as usize).clamp(1, h);
    // the DC row is always part of the band
    let band = ((center_fraction * h as f64 - 1e-9).ceil() as usize).clamp(1, total);
    let start = h / 2 - band / 2;
    let mut selected = vec![false; h];
    for row in &mut selected[start..start + band] {
        *row = true;
    }
    let mut rest: Vec<usize> = (0..h).filter(|&r| !selected[r]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    for &r in rest.iter().take(total - band) {
        selected[r] = true;
    }
    let data = Array2::from_shape_fn((h, w), |(r, _)| u8::from(selected[r]));
    Ok(SamplingMask::from_data(data, MaskKind::Cartesian, target, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_targets_are_all_ones() {
        for m in [
            make_pseudo_radial_mask(64, 64, 1.0, 4).unwrap(),
            make_cartesian_mask(64, 64, 1.0, 0.08, 4).unwrap(),
        ] {
            assert_eq!(m.kind, MaskKind::Full);
            assert_eq!(m.achieved_fraction, 1.0);
            assert!(m.data().iter().all(|&v| v == 1));
        }
    }

    #[test]
    fn radial_half_on_256() {
        let m = make_pseudo_radial_mask(256, 256, 0.5, 0).unwrap();
        assert!((0.48..=0.52).contains(&m.achieved_fraction), "{}", m.achieved_fraction);
        assert_eq!(m.data()[[128, 128]], 1);
        assert_eq!(m.achieved_fraction, m.sampled_count() as f64 / 65536.0);
    }

    #[test]
    fn radial_is_deterministic_and_seed_dependent() {
        let a = make_pseudo_radial_mask(64, 64, 0.3, 9).unwrap();
        let b = make_pseudo_radial_mask(64, 64, 0.3, 9).unwrap();
        let c = make_pseudo_radial_mask(64, 64, 0.3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn cartesian_rows_for_thirty_percent() {
        let m = make_cartesian_mask(256, 256, 0.3, 0.08, 5).unwrap();
        let rows: Vec<u32> = m
            .data()
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&v| u32::from(v)).sum())
            .collect();
        assert_eq!(rows.iter().filter(|&&s| s == 256).count(), 77);
        assert!(rows.iter().all(|&s| s == 0 || s == 256));
        // ceil(0.08 * 256) = 21 contiguous rows around the DC row
        assert!(rows[118..139].iter().all(|&s| s == 256));
        assert_eq!(m.data()[[128, 128]], 1);
    }

    #[test]
    fn cartesian_center_band_is_mandatory() {
        let m = make_cartesian_mask(64, 64, 0.25, 0.0, 1).unwrap();
        assert_eq!(m.data()[[32, 32]], 1);
        assert!(make_cartesian_mask(64, 64, 0.25, 0.3, 1).is_err());
    }

    #[test]
    fn invalid_requests() {
        assert!(make_pseudo_radial_mask(0, 8, 0.5, 0).is_err());
        assert!(make_pseudo_radial_mask(8, 8, 0.0, 0).is_err());
        assert!(make_cartesian_mask(8, 8, 1.5, 0.0, 0).is_err());
    }

    #[test]
    fn fractions_hold_across_seeds() {
        for seed in 0..20 {
            for target in [0.3, 0.5] {
                for pattern in MaskPattern::ALL {
                    let m = make_mask(pattern, 64, 64, target, seed).unwrap();
                    assert!(
                        (m.achieved_fraction - target).abs() <= FRACTION_TOLERANCE,
                        "{pattern} {target} {seed}: {}",
                        m.achieved_fraction
                    );
                    assert_eq!(m.data()[[32, 32]], 1);
                }
            }
        }
    }
}
