//! Image-quality metrics: PSNR, SSIM, absolute error maps and the
//! mean / standard-deviation summaries written to the results CSV.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, Zip};

use crate::tensorio::{MagnitudeSlice, MaskPattern};
use crate::{Error, Result};

/// Returned by [`psnr`] when the images are numerically identical.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &MagnitudeSlice, b: &MagnitudeSlice) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("reference {:?} vs test {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn positive_range(data_range: f64) -> Result<()> {
    if !(data_range > 0.0) || !data_range.is_finite() {
        return Err(Error::InvalidArgument(format!("data_range must be positive, got {data_range}")));
    }
    Ok(())
}

pub fn mse(reference: &MagnitudeSlice, test: &MagnitudeSlice) -> Result<f64> {
    same_shape(reference, test)?;
    let mut acc = 0.0;
    Zip::from(reference.data()).and(test.data()).for_each(|&a, &b| {
        let d = a as f64 - b as f64;
        acc += d * d;
    });
    Ok(acc / reference.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &MagnitudeSlice, test: &MagnitudeSlice, data_range: f64) -> Result<f64> {
    positive_range(data_range)?;
    let err = mse(reference, test)?;
    if err < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / err).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable "valid" filtering with the normalized Gaussian window.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = taps.len();
    let rows = Array2::from_shape_fn((h, w - k + 1), |(i, j)| (0..k).map(|t| taps[t] * x[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(i, j)| (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum::<f64>())
}

/// Mean structural similarity over all fully contained 11x11 Gaussian
/// windows (sigma 1.5, K1 = 0.01, K2 = 0.03).
pub fn ssim(reference: &MagnitudeSlice, test: &MagnitudeSlice, data_range: f64) -> Result<f64> {
    positive_range(data_range)?;
    same_shape(reference, test)?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let x = reference.data().mapv(f64::from);
    let y = test.data().mapv(f64::from);
    let taps = gaussian_taps();
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let mxx = filter_valid(&(&x * &x), &taps);
    let myy = filter_valid(&(&y * &y), &taps);
    let mxy = filter_valid(&(&x * &y), &taps);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for ((((&ux, &uy), &sxx), &syy), &sxy) in mx.iter().zip(&my).zip(&mxx).zip(&myy).zip(&mxy) {
        let vx = sxx - ux * ux;
        let vy = syy - uy * uy;
        let cxy = sxy - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Pixel-wise `|reference - test|`.
pub fn error_map(reference: &MagnitudeSlice, test: &MagnitudeSlice) -> Result<Array2<f32>> {
    same_shape(reference, test)?;
    Ok(Zip::from(reference.data()).and(test.data()).map_collect(|&a, &b| (a - b).abs()))
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Reconstruction method a metrics row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Zero-filled low-field input, no model.
    LowField,
    Spatial,
    Kspace,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::LowField => "LF",
            Method::Spatial => "sIQT",
            Method::Kspace => "kIQT",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LF" => Ok(Method::LowField),
            "sIQT" => Ok(Method::Spatial),
            "kIQT" => Ok(Method::Kspace),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub pattern: MaskPattern,
    pub fraction: f64,
    pub method: Method,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub n_slices: usize,
}

pub const CSV_HEADER: [&str; 8] = [
    "pattern",
    "fraction",
    "method",
    "psnr_mean",
    "psnr_std",
    "ssim_mean",
    "ssim_std",
    "n_slices",
];

impl MetricsRecord {
    /// Summarizes per-slice PSNR and SSIM values.
    pub fn from_values(pattern: MaskPattern, fraction: f64, method: Method, psnr: &[f64], ssim: &[f64]) -> Result<Self> {
        if psnr.len() != ssim.len() {
            return Err(Error::Shape(format!("{} PSNR values vs {} SSIM values", psnr.len(), ssim.len())));
        }
        let (psnr_mean, psnr_std) = aggregate(psnr)?;
        let (ssim_mean, ssim_std) = aggregate(ssim)?;
        Ok(MetricsRecord { pattern, fraction, method, psnr_mean, psnr_std, ssim_mean, ssim_std, n_slices: psnr.len() })
    }

    /// Fixed-precision CSV fields, in [`CSV_HEADER`] order.
    pub fn csv_fields(&self) -> [String; 8] {
        [
            self.pattern.as_str().to_string(),
            format!("{:.2}", self.fraction),
            self.method.as_str().to_string(),
            format!("{:.4}", self.psnr_mean),
            format!("{:.4}", self.psnr_std),
            format!("{:.4}", self.ssim_mean),
            format!("{:.4}", self.ssim_std),
            self.n_slices.to_string(),
        ]
    }

    fn from_fields(fields: &[&str]) -> Result<Self> {
        let num = |i: usize| -> Result<f64> {
            fields[i].trim().parse().map_err(|_| Error::Format {
                field: CSV_HEADER[i],
                detail: format!("`{}` is not a number", fields[i]),
            })
        };
        Ok(MetricsRecord {
            pattern: fields[0].trim().parse().map_err(|_| Error::Format {
                field: "pattern",
                detail: format!("unknown pattern `{}`", fields[0]),
            })?,
            fraction: num(1)?,
            method: fields[2].trim().parse().map_err(|_| Error::Format {
                field: "method",
                detail: format!("unknown method `{}`", fields[2]),
            })?,
            psnr_mean: num(3)?,
            psnr_std: num(4)?,
            ssim_mean: num(5)?,
            ssim_std: num(6)?,
            n_slices: fields[7].trim().parse().map_err(|_| Error::Format {
                field: "n_slices",
                detail: format!("`{}` is not a count", fields[7]),
            })?,
        })
    }
}

pub fn write_csv(records: &[MetricsRecord]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_fields().join(","));
    }
    out
}

/// Parses a table written by [`write_csv`]. Column names are checked and
/// the first offending column is named in the error.
pub fn read_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format { field: "header", detail: "empty CSV".into() })?
        .split(',')
        .map(str::trim)
        .collect();
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(found) if found == expected => {}
            Some(found) => {
                return Err(Error::Format { field: CSV_HEADER[i], detail: format!("expected column `{expected}`, found `{found}`") })
            }
            None => return Err(Error::Format { field: CSV_HEADER[i], detail: format!("missing column `{expected}`") }),
        }
    }
    if header.len() != CSV_HEADER.len() {
        return Err(Error::Format { field: "header", detail: format!("unexpected extra column `{}`", header[CSV_HEADER.len()]) });
    }
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != CSV_HEADER.len() {
                return Err(Error::Format { field: "row", detail: format!("expected 8 fields in `{line}`") });
            }
            MetricsRecord::from_fields(&fields)
        })
        .collect()
}
