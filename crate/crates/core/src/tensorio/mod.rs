//! Slice containers, the `KIQT` binary slice format, volume ingestion,
//! dataset manifests and experiment configuration.

mod config;
mod format;
mod ingest;
mod keyvalue;
mod manifest;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use config::{ExperimentConfig, IqtDomain, MaskPattern};
pub use format::{read_slice, write_slice, StoredSlice, HEADER_LEN, MAGIC, VERSION};
pub use ingest::{ingest_volume, slices_from_volume, CANONICAL_SIZE};
pub use keyvalue::KeyValues;
pub use manifest::{make_manifest, DatasetManifest, Split};

/// Which representation a complex slice lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Image,
    Kspace,
}

/// Slices must survive three exact 2x poolings.
pub const SPATIAL_MULTIPLE: usize = 8;

pub(crate) fn check_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
        return Err(Error::Shape(format!(
            "slice dimensions {h}x{w} must be positive multiples of {SPATIAL_MULTIPLE}"
        )));
    }
    Ok(())
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive and finite, got {scale}"
        )));
    }
    Ok(())
}

/// One 2-D slice stored as paired real and imaginary planes.
///
/// `scale` is the factor that was multiplied into the raw data when the slice
/// was created; dividing by it recovers the original values.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSlice {
    real: Array2<f32>,
    imag: Array2<f32>,
    domain: Domain,
    scale: f64,
}

impl ComplexSlice {
    pub fn new(real: Array2<f32>, imag: Array2<f32>, domain: Domain, scale: f64) -> Result<Self> {
        if real.dim() != imag.dim() {
            return Err(Error::Shape(format!(
                "real plane {:?} and imaginary plane {:?} differ",
                real.dim(),
                imag.dim()
            )));
        }
        let (h, w) = real.dim();
        check_dims(h, w)?;
        check_scale(scale)?;
        Ok(Self {
            real,
            imag,
            domain,
            scale,
        })
    }

    pub fn zeros(h: usize, w: usize, domain: Domain) -> Result<Self> {
        Self::new(Array2::zeros((h, w)), Array2::zeros((h, w)), domain, 1.0)
    }

    /// Promotes a magnitude image to a real-valued complex image.
    pub fn from_magnitude(mag: &MagnitudeSlice) -> Self {
        let (h, w) = mag.dim();
        Self {
            real: mag.data().clone(),
            imag: Array2::zeros((h, w)),
            domain: Domain::Image,
            scale: mag.scale(),
        }
    }

    pub fn real(&self) -> &Array2<f32> {
        &self.real
    }

    pub fn imag(&self) -> &Array2<f32> {
        &self.imag
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> (usize, usize) {
        self.real.dim()
    }

    pub fn into_planes(self) -> (Array2<f32>, Array2<f32>) {
        (self.real, self.imag)
    }

    pub fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::Domain {
                expected,
                found: self.domain,
            });
        }
        Ok(())
    }

    /// Pixel-wise modulus `sqrt(re^2 + im^2)`.
    pub fn magnitude(&self) -> Array2<f32> {
        ndarray::Zip::from(&self.real)
            .and(&self.imag)
            .map_collect(|&re, &im| re.hypot(im))
    }

    /// Total energy, accumulated in double precision.
    pub fn energy(&self) -> f64 {
        self.real
            .iter()
            .chain(self.imag.iter())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum()
    }
}

/// A nonnegative single-channel image, normally scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSlice {
    data: Array2<f32>,
    scale: f64,
}

impl MagnitudeSlice {
    pub fn new(data: Array2<f32>, scale: f64) -> Result<Self> {
        let (h, w) = data.dim();
        check_dims(h, w)?;
        check_scale(scale)?;
        if let Some(bad) = data.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "magnitude slice values must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self { data, scale })
    }

    /// Divides by the slice maximum so values land in [0, 1].
    ///
    /// Negative inputs are clamped to zero first. A slice whose maximum is
    /// zero stays all-zero with scale 1.
    pub fn normalized(mut raw: Array2<f32>) -> Result<Self> {
        raw.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        let max = raw.iter().copied().fold(0.0f32, f32::max);
        let scale = if max > 0.0 { 1.0 / f64::from(max) } else { 1.0 };
        if max > 0.0 {
            let inv = 1.0 / max;
            raw.mapv_inplace(|v| (v * inv).min(1.0));
        }
        Self::new(raw, scale)
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(Array2::zeros((h, w)), 1.0)
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}
