//! On-disk layout of simulated datasets and the tensors built from them.
//!
//! A dataset directory holds `slice_XXXX/{hf_mag,hf_k,lf_mag,lf_k}.kiqt` and
//! a plain-text `dataset_manifest`. Masks are not baked in: training and
//! evaluation undersample the stored full low-field k-space themselves.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kiqt_core::ensemble::{kspace_tensor, magnitude_tensor};
use kiqt_core::kspace::{apply_mask, zero_filled_magnitude, MaskKind, SamplingMask};
use kiqt_core::tensorio::{read_slice, ComplexSlice, IqtDomain, KeyValues, MagnitudeSlice};
use ndarray::Array3;

pub const DATASET_MANIFEST: &str = "dataset_manifest";
pub const HF_MAG: &str = "hf_mag.kiqt";
pub const HF_K: &str = "hf_k.kiqt";
pub const LF_MAG: &str = "lf_mag.kiqt";
pub const LF_K: &str = "lf_k.kiqt";

pub fn slice_name(index: usize) -> String {
    format!("slice_{index:04}")
}

/// One simulated high-field / low-field pair, fully sampled.
#[derive(Debug, Clone)]
pub struct SlicePair {
    pub hf_mag: MagnitudeSlice,
    pub hf_k: ComplexSlice,
    pub lf_mag: MagnitudeSlice,
    pub lf_k: ComplexSlice,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: KeyValues,
    slice_count: usize,
    size: (usize, usize),
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(DATASET_MANIFEST);
        let manifest = KeyValues::load(&path).with_context(|| format!("no dataset at {}", root.display()))?;
        let slice_count: usize = manifest.parse_value("slice_count")?;
        let size = (manifest.parse_value("height")?, manifest.parse_value("width")?);
        if slice_count == 0 {
            bail!("dataset {} is empty", root.display());
        }
        Ok(Dataset { root, manifest, slice_count, size })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &KeyValues {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.slice_count
    }

    pub fn is_empty(&self) -> bool {
        self.slice_count == 0
    }

    /// `(height, width)` shared by every slice.
    pub fn size(&self) -> (usize, usize) {
        self.size
    }

    pub fn load(&self, index: usize) -> Result<SlicePair> {
        let dir = self.root.join(slice_name(index));
        let read = |name: &str| read_slice(dir.join(name)).with_context(|| format!("reading {}", dir.join(name).display()));
        Ok(SlicePair {
            hf_mag: read(HF_MAG)?.into_magnitude()?,
            hf_k: read(HF_K)?.into_complex()?,
            lf_mag: read(LF_MAG)?.into_magnitude()?,
            lf_k: read(LF_K)?.into_complex()?,
        })
    }

    pub fn load_all(&self) -> Result<Vec<SlicePair>> {
        (0..self.slice_count).map(|i| self.load(i)).collect()
    }
}

/// Zero-filled reconstruction of the undersampled low-field k-space, clamped
/// to `[0, 1]`. With a full mask this is the stored low-field image itself.
pub fn lowfield_baseline(pair: &SlicePair, mask: &SamplingMask) -> Result<MagnitudeSlice> {
    if mask.kind == MaskKind::Full {
        return Ok(pair.lf_mag.clone());
    }
    let zf = zero_filled_magnitude(&apply_mask(&pair.lf_k, mask)?)?;
    Ok(MagnitudeSlice::new(zf.mapv(|v| v.clamp(0.0, 1.0)), 1.0)?)
}

/// Network input for `domain` under `mask`.
pub fn model_input(pair: &SlicePair, mask: &SamplingMask, domain: IqtDomain) -> Result<Array3<f32>> {
    match domain {
        IqtDomain::Kspace => Ok(kspace_tensor(&apply_mask(&pair.lf_k, mask)?)?),
        IqtDomain::Spatial => Ok(magnitude_tensor(&lowfield_baseline(pair, mask)?)),
    }
}

pub fn model_target(pair: &SlicePair, domain: IqtDomain) -> Result<Array3<f32>> {
    match domain {
        IqtDomain::Kspace => Ok(kspace_tensor(&pair.hf_k)?),
        IqtDomain::Spatial => Ok(magnitude_tensor(&pair.hf_mag)),
    }
}
