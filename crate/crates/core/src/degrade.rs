//! Stochastic low-field simulator.
//!
//! A high-field slice is split into three intensity classes, each class gets
//! its own contrast factor, and complex white Gaussian noise is added in
//! k-space at a level set by the white-matter SNR target.

use nalgebra::{Cholesky, Matrix6, Vector6, U6};
use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kspace::{apply_mask, fft2c, ifft2c, SamplingMask};
use crate::tensorio::{ComplexSlice, Domain, KeyValues, MagnitudeSlice};

pub const BACKGROUND: u8 = 0;
pub const CSF: u8 = 1;
pub const GM: u8 = 2;
pub const WM: u8 = 3;

const MAX_DRAWS: usize = 10_000;

/// Per-class degradation parameters, each array ordered (WM, GM, CSF).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueParams {
    pub contrast_scale: [f64; 3],
    /// Image-domain SNR in dB, `20 log10(mean signal / noise std)`.
    /// `f64::INFINITY` disables noise.
    pub snr_db: [f64; 3],
}

impl TissueParams {
    pub fn identity() -> Self {
        Self {
            contrast_scale: [1.0; 3],
            snr_db: [f64::INFINITY; 3],
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            contrast_scale: [v[0], v[1], v[2]],
            snr_db: [v[3], v[4], v[5]],
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let c = self.contrast_scale;
        let s = self.snr_db;
        Vector6::new(c[0], c[1], c[2], s[0], s[1], s[2])
    }

    fn contrast_for(&self, label: u8) -> f64 {
        match label {
            WM => self.contrast_scale[0],
            GM => self.contrast_scale[1],
            CSF => self.contrast_scale[2],
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    InDistribution,
    OutOfDistribution,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::InDistribution => "ind",
            Regime::OutOfDistribution => "ood",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" => Ok(Regime::InDistribution),
            "ood" => Ok(Regime::OutOfDistribution),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

/// Gaussian prior over the 6-vector (3 contrast scales, 3 SNRs).
#[derive(Debug, Clone)]
pub struct ParamPrior {
    mean: Vector6<f64>,
    covariance: Matrix6<f64>,
    cholesky: Cholesky<f64, U6>,
    pub mahalanobis_bound: Option<f64>,
    pub regime: Regime,
}

impl ParamPrior {
    pub fn new(
        mean: Vector6<f64>,
        covariance: Matrix6<f64>,
        mahalanobis_bound: Option<f64>,
        regime: Regime,
    ) -> Result<Self> {
        if (covariance - covariance.transpose()).abs().max() > 1e-12 * covariance.abs().max().max(1.0) {
            return Err(Error::SingularCovariance);
        }
        let cholesky = Cholesky::new(covariance).ok_or(Error::SingularCovariance)?;
        if let Some(b) = mahalanobis_bound {
            if !(b > 0.0) {
                return Err(Error::Config(format!("mahalanobis bound must be positive, got {b}")));
            }
        }
        Ok(Self {
            mean,
            covariance,
            cholesky,
            mahalanobis_bound,
            regime,
        })
    }

    /// Training prior: contrast (0.9, 0.8, 0.7), SNR (38, 34, 30) dB,
    /// sd 0.05 on contrasts and 2 dB on SNRs, gated at Mahalanobis < 1.
    pub fn in_distribution() -> Self {
        let mean = Vector6::new(0.9, 0.8, 0.7, 38.0, 34.0, 30.0);
        let sd = Vector6::new(0.05, 0.05, 0.05, 2.0, 2.0, 2.0);
        let cov = Matrix6::from_diagonal(&sd.component_mul(&sd));
        Self::new(mean, cov, Some(1.0), Regime::InDistribution).expect("diagonal prior is SPD")
    }

    /// Ultra-low-field test prior: SNRs shifted down 8 dB, covariance
    /// doubled, no Mahalanobis gate.
    pub fn out_of_distribution() -> Self {
        let ind = Self::in_distribution();
        let mut mean = ind.mean;
        for i in 3..6 {
            mean[i] -= 8.0;
        }
        Self::new(mean, ind.covariance * 2.0, None, Regime::OutOfDistribution)
            .expect("scaled prior is SPD")
    }

    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::InDistribution => Self::in_distribution(),
            Regime::OutOfDistribution => Self::out_of_distribution(),
        }
    }

    pub fn mean(&self) -> &Vector6<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    /// Keys: `regime`, `mean` (6 values), `covariance` (36 values, row-major)
    /// or `std` (6 values, diagonal), optional `mahalanobis_bound`
    /// (`none` to disable).
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let regime: Regime = kv.require("regime")?.parse()?;
        let mean: Vec<f64> = kv.parse_list("mean")?;
        if mean.len() != 6 {
            return Err(Error::Config("`mean` needs 6 values".into()));
        }
        let covariance = match (kv.get("covariance"), kv.get("std")) {
            (Some(_), _) => {
                let c: Vec<f64> = kv.parse_list("covariance")?;
                if c.len() != 36 {
                    return Err(Error::Config("`covariance` needs 36 values".into()));
                }
                Matrix6::from_row_slice(&c)
            }
            (None, Some(_)) => {
                let sd: Vec<f64> = kv.parse_list("std")?;
                if sd.len() != 6 {
                    return Err(Error::Config("`std` needs 6 values".into()));
                }
                Matrix6::from_diagonal(&Vector6::from_iterator(sd.iter().map(|s| s * s)))
            }
            (None, None) => return Err(Error::Config("need `covariance` or `std`".into())),
        };
        let bound = match kv.get("mahalanobis_bound") {
            None | Some("none") => None,
            Some(_) => Some(kv.parse_value("mahalanobis_bound")?),
        };
        Self::new(Vector6::from_row_slice(&mean), covariance, bound, regime)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let join = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
        let mut kv = KeyValues::new();
        kv.insert("regime", self.regime.as_str());
        kv.insert("mean", join(&mut self.mean.iter().copied()));
        kv.insert("covariance", join(&mut self.covariance.transpose().iter().copied()));
        kv.insert(
            "mahalanobis_bound",
            self.mahalanobis_bound.map_or("none".to_string(), |b| b.to_string()),
        );
        kv
    }
}

/// `sqrt((x - mu)^T Sigma^-1 (x - mu))` via the Cholesky factor.
pub fn mahalanobis(x: &Vector6<f64>, prior: &ParamPrior) -> f64 {
    let d = x - prior.mean;
    let y = prior
        .cholesky
        .l()
        .solve_lower_triangular(&d)
        .expect("Cholesky factor has a positive diagonal");
    y.norm()
}

/// Draws degradation parameters, rejection-sampling the in-distribution
/// constraints (Mahalanobis gate and WM SNR above GM SNR).
pub fn sample_params(prior: &ParamPrior, seed: u64) -> Result<TissueParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = prior.cholesky.l();
    for _ in 0..MAX_DRAWS {
        let z = Vector6::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let x = prior.mean + &l * z;
        let params = TissueParams::from_vector(&x);
        if params.contrast_scale.iter().any(|&c| c <= 0.0) || x.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if let Some(bound) = prior.mahalanobis_bound {
            if mahalanobis(&x, prior) >= bound {
                continue;
            }
        }
        if prior.regime == Regime::InDistribution && params.snr_db[0] <= params.snr_db[1] {
            continue;
        }
        return Ok(params);
    }
    Err(Error::Config(format!(
        "no admissible parameters after {MAX_DRAWS} draws"
    )))
}

fn percentile(sorted: &[f32], q: f64) -> f32 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = (pos - lo as f64) as f32;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Labels nonzero pixels CSF / GM / WM by thresholds at the 33rd and 66th
/// percentiles of the nonzero intensities. Zero pixels are background.
pub fn segment_tissues(hf: &MagnitudeSlice) -> Array2<u8> {
    let mut nonzero: Vec<f32> = hf.data().iter().copied().filter(|&v| v > 0.0).collect();
    if nonzero.is_empty() {
        return Array2::from_elem(hf.dim(), BACKGROUND);
    }
    nonzero.sort_by(f32::total_cmp);
    let t1 = percentile(&nonzero, 0.33);
    let t2 = percentile(&nonzero, 0.66);
    hf.data().mapv(|v| {
        if v <= 0.0 {
            BACKGROUND
        } else if v <= t1 {
            CSF
        } else if v <= t2 {
            GM
        } else {
            WM
        }
    })
}

fn region_mean(image: &Array2<f32>, labels: &Array2<u8>, label: u8) -> Option<f64> {
    let (sum, n) = Zip::from(image)
        .and(labels)
        .fold((0.0f64, 0usize), |(s, n), &v, &l| {
            if l == label {
                (s + f64::from(v), n + 1)
            } else {
                (s, n)
            }
        });
    (n > 0).then(|| sum / n as f64)
}

/// Produces a synthetic low-field counterpart of `hf`.
///
/// Contrast scaling per class, renormalization, k-space complex Gaussian
/// noise whose standard deviation puts the WM class at its SNR target, then
/// the renormalized magnitude image.
pub fn simulate_lowfield(hf: &MagnitudeSlice, params: &TissueParams, seed: u64) -> Result<MagnitudeSlice> {
    let labels = segment_tissues(hf);
    let contrasted = Zip::from(hf.data())
        .and(&labels)
        .map_collect(|&v, &l| (f64::from(v) * params.contrast_for(l)) as f32);
    let contrasted = MagnitudeSlice::normalized(contrasted)?;

    let wm_mean = region_mean(contrasted.data(), &labels, WM).unwrap_or(0.0);
    let sigma = if params.snr_db[0].is_finite() {
        wm_mean / 10f64.powf(params.snr_db[0] / 20.0)
    } else {
        0.0
    };

    let mut kspace = fft2c(&ComplexSlice::from_magnitude(&contrasted))?;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let (mut re, mut im) = kspace.into_planes();
        for (r, i) in re.iter_mut().zip(im.iter_mut()) {
            let nr: f64 = StandardNormal.sample(&mut rng);
            let ni: f64 = StandardNormal.sample(&mut rng);
            *r += (sigma * nr) as f32;
            *i += (sigma * ni) as f32;
        }
        kspace = ComplexSlice::new(re, im, Domain::Kspace, contrasted.scale())?;
    }
    MagnitudeSlice::normalized(ifft2c(&kspace)?.magnitude())
}

/// Undersampled low-field k-space paired with fully sampled high-field
/// k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: ComplexSlice,
    pub target: ComplexSlice,
}

pub fn make_pair(hf: &MagnitudeSlice, prior: &ParamPrior, mask: &SamplingMask, seed: u64) -> Result<TrainingPair> {
    let params = sample_params(prior, seed)?;
    make_pair_with_params(hf, &params, mask, seed)
}

pub fn make_pair_with_params(
    hf: &MagnitudeSlice,
    params: &TissueParams,
    mask: &SamplingMask,
    seed: u64,
) -> Result<TrainingPair> {
    let lf = simulate_lowfield(hf, params, seed)?;
    let input = apply_mask(&fft2c(&ComplexSlice::from_magnitude(&lf))?, mask)?;
    let target = fft2c(&ComplexSlice::from_magnitude(hf))?;
    Ok(TrainingPair { input, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::make_mask;
    use crate::tensorio::MaskPattern;

    /// Three near-equal flat bands at 0.2 / 0.5 / 1.0 on a zero background.
    fn banded(h: usize, w: usize) -> MagnitudeSlice {
        let data = Array2::from_shape_fn((h, w), |(i, j)| {
            if i < 4 || i >= h - 4 {
                0.0
            } else {
                [0.2, 0.5, 1.0][j * 3 / w]
            }
        });
        MagnitudeSlice::new(data, 1.0).unwrap()
    }

    fn oracle_mahalanobis(x: &Vector6<f64>, prior: &ParamPrior) -> f64 {
        // Gaussian elimination with partial pivoting on [Sigma | d].
        let d = x - prior.mean();
        let mut a = [[0.0f64; 7]; 6];
        for i in 0..6 {
            for j in 0..6 {
                a[i][j] = prior.covariance()[(i, j)];
            }
            a[i][6] = d[i];
        }
        for col in 0..6 {
            let piv = (col..6).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            for row in 0..6 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..7 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        let solved: f64 = (0..6).map(|i| d[i] * a[i][6] / a[i][i]).sum();
        solved.sqrt()
    }

    #[test]
    fn segmentation_recovers_flat_bands() {
        let s = banded(24, 24);
        let labels = segment_tissues(&s);
        for ((i, j), &l) in labels.indexed_iter() {
            let v = s.data()[[i, j]];
            let expect = match v {
                v if v == 0.0 => BACKGROUND,
                v if v == 0.2 => CSF,
                v if v == 0.5 => GM,
                v if v == 1.0 => WM,
                _ => unreachable!(),
            };
            assert_eq!(l, expect, "({i},{j}) v={v}");
        }
    }

    #[test]
    fn class_means_increase_with_label() {
        let data = Array2::from_shape_fn((32, 32), |(i, j)| ((i * 7 + j * 13) % 29) as f32 / 29.0);
        let s = MagnitudeSlice::new(data, 1.0).unwrap();
        let labels = segment_tissues(&s);
        let means: Vec<f64> = [CSF, GM, WM]
            .iter()
            .map(|&l| region_mean(s.data(), &labels, l).unwrap())
            .collect();
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn zero_slice_is_all_background() {
        let labels = segment_tissues(&MagnitudeSlice::zeros(16, 16).unwrap());
        assert!(labels.iter().all(|&l| l == BACKGROUND));
    }

    #[test]
    fn mahalanobis_basics() {
        let prior = ParamPrior::new(Vector6::repeat(0.5), Matrix6::identity(), Some(1.0), Regime::InDistribution).unwrap();
        assert_eq!(mahalanobis(&Vector6::repeat(0.5), &prior), 0.0);
        let mut x = Vector6::repeat(0.5);
        x[0] += 1.0;
        assert!((mahalanobis(&x, &prior) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_matches_linear_solve_oracle() {
        // a dense SPD covariance: A A^T + I
        let a = Matrix6::from_fn(|i, j| ((i * 6 + j) as f64 * 0.37).sin());
        let cov = a * a.transpose() + Matrix6::identity();
        let prior = ParamPrior::new(Vector6::from_fn(|i, _| i as f64), cov, None, Regime::OutOfDistribution).unwrap();
        for k in 0..20 {
            let x = Vector6::from_fn(|i, _| ((k * 6 + i) as f64 * 1.3).cos() * 3.0);
            let got = mahalanobis(&x, &prior);
            let want = oracle_mahalanobis(&x, &prior);
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let mut cov = Matrix6::identity();
        cov[(5, 5)] = 0.0;
        assert!(matches!(
            ParamPrior::new(Vector6::zeros(), cov, None, Regime::OutOfDistribution),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn in_distribution_draws_satisfy_constraints() {
        let prior = ParamPrior::in_distribution();
        for seed in 0..1000 {
            let p = sample_params(&prior, seed).unwrap();
            assert!(mahalanobis(&p.to_vector(), &prior) < 1.0);
            assert!(p.snr_db[0] > p.snr_db[1]);
            assert!(p.contrast_scale.iter().all(|&c| c > 0.0));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let prior = ParamPrior::out_of_distribution();
        assert_eq!(sample_params(&prior, 5).unwrap(), sample_params(&prior, 5).unwrap());
        assert_ne!(sample_params(&prior, 5).unwrap(), sample_params(&prior, 6).unwrap());
    }

    #[test]
    fn tiny_covariance_collapses_to_mean() {
        let mean = Vector6::new(1.0, 0.9, 0.8, 30.0, 20.0, 10.0);
        let prior = ParamPrior::new(mean, Matrix6::identity() * 1e-14, Some(1.0), Regime::InDistribution).unwrap();
        let p = sample_params(&prior, 3).unwrap();
        assert!((p.to_vector() - mean).abs().max() < 1e-6);
    }

    #[test]
    fn unsatisfiable_prior_reports_configuration_error() {
        // WM SNR pinned far below GM SNR
        let mean = Vector6::new(1.0, 1.0, 1.0, 5.0, 20.0, 10.0);
        let prior = ParamPrior::new(mean, Matrix6::identity() * 1e-6, Some(1.0), Regime::InDistribution).unwrap();
        assert!(matches!(sample_params(&prior, 0), Err(Error::Config(_))));
    }

    #[test]
    fn prior_key_values_round_trip() {
        let prior = ParamPrior::out_of_distribution();
        let back = ParamPrior::from_key_values(&KeyValues::parse(&prior.to_key_values().render()).unwrap()).unwrap();
        assert_eq!(back.mean(), prior.mean());
        assert_eq!(back.covariance(), prior.covariance());
        assert_eq!(back.mahalanobis_bound, None);
        assert_eq!(back.regime, Regime::OutOfDistribution);
        let kv = KeyValues::parse("regime = ind\nmean = 1,1,1,20,15,10\nstd = 0.1,0.1,0.1,1,1,1\nmahalanobis_bound = 1").unwrap();
        let p = ParamPrior::from_key_values(&kv).unwrap();
        assert_eq!(p.mahalanobis_bound, Some(1.0));
        assert!((p.covariance()[(3, 3)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_degradation_is_identity() {
        let hf = banded(32, 32);
        let out = simulate_lowfield(&hf, &TissueParams::identity(), 1).unwrap();
        let err = (out.data() - hf.data()).iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let hf = banded(32, 32);
        let p = sample_params(&ParamPrior::in_distribution(), 2).unwrap();
        assert_eq!(simulate_lowfield(&hf, &p, 8).unwrap(), simulate_lowfield(&hf, &p, 8).unwrap());
        assert_ne!(simulate_lowfield(&hf, &p, 8).unwrap(), simulate_lowfield(&hf, &p, 9).unwrap());
    }

    fn wm_stats(out: &MagnitudeSlice, labels: &Array2<u8>) -> (f64, f64) {
        let vals: Vec<f64> = Zip::from(out.data())
            .and(labels)
            .fold(Vec::new(), |mut acc, &v, &l| {
                if l == WM {
                    acc.push(f64::from(v));
                }
                acc
            });
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn wm_snr_matches_target_on_average() {
        let hf = banded(64, 64);
        let labels = segment_tissues(&hf);
        for target in [16.0, 22.0] {
            let params = TissueParams {
                contrast_scale: [0.9, 0.8, 0.7],
                snr_db: [target, target - 4.0, target - 8.0],
            };
            let measured: f64 = (0..100)
                .map(|seed| {
                    let out = simulate_lowfield(&hf, &params, seed).unwrap();
                    let (mean, var) = wm_stats(&out, &labels);
                    20.0 * (mean / var.sqrt()).log10()
                })
                .sum::<f64>()
                / 100.0;
            assert!((measured - target).abs() < 1.0, "target {target}, measured {measured}");
        }
    }

    #[test]
    fn lower_snr_means_more_wm_noise() {
        let hf = banded(32, 32);
        let labels = segment_tissues(&hf);
        let variances: Vec<f64> = [25.0, 18.0, 11.0]
            .iter()
            .map(|&snr| {
                let params = TissueParams {
                    contrast_scale: [1.0; 3],
                    snr_db: [snr, snr - 2.0, snr - 4.0],
                };
                (0..100)
                    .map(|seed| wm_stats(&simulate_lowfield(&hf, &params, seed).unwrap(), &labels).1)
                    .sum::<f64>()
                    / 100.0
            })
            .collect();
        assert!(variances[0] < variances[1] && variances[1] < variances[2], "{variances:?}");
    }

    #[test]
    fn full_mask_identity_pair_matches_target() {
        let hf = banded(32, 32);
        let mask = make_mask(MaskPattern::PseudoRadial, 32, 32, 1.0, 0).unwrap();
        let pair = make_pair_with_params(&hf, &TissueParams::identity(), &mask, 0).unwrap();
        let err = (pair.input.real() - pair.target.real())
            .iter()
            .chain((pair.input.imag() - pair.target.imag()).iter())
            .fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn thirty_percent_mask_zeroes_most_of_kspace() {
        let hf = banded(64, 64);
        let mask = make_mask(MaskPattern::PseudoRadial, 64, 64, 0.3, 4).unwrap();
        let pair = make_pair(&hf, &ParamPrior::in_distribution(), &mask, 4).unwrap();
        let zeros = pair
            .input
            .real()
            .iter()
            .zip(pair.input.imag().iter())
            .filter(|(&r, &i)| r == 0.0 && i == 0.0)
            .count();
        assert!(zeros as f64 / 4096.0 >= 0.68);
        let again = make_pair(&hf, &ParamPrior::in_distribution(), &mask, 4).unwrap();
        assert_eq!(pair, again);
    }
}
