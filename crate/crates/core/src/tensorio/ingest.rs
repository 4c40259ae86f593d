//! Axial slice extraction from NIfTI-1 volumes.
//!
//! Only voxel data and dimensions are read; orientation, intensity scaling
//! and extensions are ignored.

use std::fs;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{s, Array2, Array3, ArrayView3};

use super::MagnitudeSlice;
use crate::error::{Error, Result};

pub const CANONICAL_SIZE: usize = 256;

const NIFTI1_HEADER: usize = 348;

/// Reads a `.nii` / `.nii.gz` volume and returns the axial slices in
/// `axial_window`, each cropped or zero-padded to 256x256 and normalized by
/// its own maximum.
pub fn ingest_volume(path: impl AsRef<Path>, axial_window: Range<usize>) -> Result<Vec<MagnitudeSlice>> {
    let volume = read_nifti(path.as_ref())?;
    slices_from_volume(volume.view(), axial_window)
}

/// `volume` is indexed `[x, y, z]`; each slice has rows along y and columns
/// along x.
pub fn slices_from_volume(volume: ArrayView3<f32>, axial_window: Range<usize>) -> Result<Vec<MagnitudeSlice>> {
    let (_, _, nz) = volume.dim();
    if axial_window.is_empty() || axial_window.end > nz {
        return Err(Error::Volume(format!(
            "axial window {axial_window:?} outside 0..{nz}"
        )));
    }
    axial_window
        .map(|z| {
            let plane = volume.slice(s![.., .., z]).t().to_owned();
            MagnitudeSlice::normalized(crop_or_pad(&plane, CANONICAL_SIZE, CANONICAL_SIZE))
        })
        .collect()
}

/// Centered crop or zero-pad along each axis independently.
pub(crate) fn crop_or_pad(plane: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = plane.dim();
    let mut out = Array2::zeros((out_h, out_w));
    // (source start, destination start, length)
    let axis = |n: usize, m: usize| {
        if n >= m {
            ((n - m) / 2, 0, m)
        } else {
            (0, (m - n) / 2, n)
        }
    };
    let (sy, dy, ly) = axis(h, out_h);
    let (sx, dx, lx) = axis(w, out_w);
    out.slice_mut(s![dy..dy + ly, dx..dx + lx])
        .assign(&plane.slice(s![sy..sy + ly, sx..sx + lx]));
    out
}

fn read_nifti(path: &Path) -> Result<Array3<f32>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_nifti(&bytes)
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn i16(self, b: &[u8]) -> i16 {
        let a = [b[0], b[1]];
        match self {
            Endian::Little => i16::from_le_bytes(a),
            Endian::Big => i16::from_be_bytes(a),
        }
    }

    fn i32(self, b: &[u8]) -> i32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => i32::from_le_bytes(a),
            Endian::Big => i32::from_be_bytes(a),
        }
    }

    fn f32(self, b: &[u8]) -> f32 {
        f32::from_bits(self.i32(b) as u32)
    }

    fn f64(self, b: &[u8]) -> f64 {
        let a: [u8; 8] = b[..8].try_into().unwrap();
        match self {
            Endian::Little => f64::from_le_bytes(a),
            Endian::Big => f64::from_be_bytes(a),
        }
    }
}

pub(crate) fn parse_nifti(bytes: &[u8]) -> Result<Array3<f32>> {
    if bytes.len() < NIFTI1_HEADER {
        return Err(Error::Volume("file shorter than a NIfTI-1 header".into()));
    }
    let endian = if Endian::Little.i32(bytes) == NIFTI1_HEADER as i32 {
        Endian::Little
    } else if Endian::Big.i32(bytes) == NIFTI1_HEADER as i32 {
        Endian::Big
    } else {
        return Err(Error::Volume("not a NIfTI-1 file (sizeof_hdr != 348)".into()));
    };
    if &bytes[344..347] != b"n+1" {
        return Err(Error::Volume("only single-file NIfTI-1 (`n+1`) is supported".into()));
    }
    let dim: Vec<i16> = (0..8).map(|i| endian.i16(&bytes[40 + 2 * i..])).collect();
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) || dim[1..=3].iter().any(|&d| d <= 0) {
        return Err(Error::Volume(format!("unsupported dimensions {dim:?}")));
    }
    let (nx, ny, nz) = (dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let datatype = endian.i16(&bytes[70..]);
    let vox_offset = endian.f32(&bytes[108..]);
    if !(vox_offset.is_finite() && vox_offset >= NIFTI1_HEADER as f32) {
        return Err(Error::Volume(format!("bad vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;

    let (width, convert): (usize, fn(Endian, &[u8]) -> f32) = match datatype {
        2 => (1, |_, b| f32::from(b[0])),
        256 => (1, |_, b| f32::from(b[0] as i8)),
        4 => (2, |e, b| f32::from(e.i16(b))),
        512 => (2, |e, b| f32::from(e.i16(b) as u16)),
        8 => (4, |e, b| e.i32(b) as f32),
        768 => (4, |e, b| e.i32(b) as u32 as f32),
        16 => (4, |e, b| e.f32(b)),
        64 => (8, |e, b| e.f64(b) as f32),
        other => return Err(Error::Volume(format!("unsupported NIfTI datatype {other}"))),
    };
    // first 3-D volume only
    let count = nx * ny * nz;
    let needed = offset + count * width;
    if bytes.len() < needed {
        return Err(Error::Volume(format!(
            "voxel data truncated: need {needed} bytes, have {}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[offset..needed]
        .chunks_exact(width)
        .map(|b| convert(endian, b))
        .collect();
    // x varies fastest on disk
    let volume = Array3::from_shape_vec((nz, ny, nx), data)
        .expect("length checked")
        .permuted_axes([2, 1, 0]);
    Ok(volume.as_standard_layout().into_owned())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Minimal little-endian float32 NIfTI-1 writer for tests.
    pub(crate) fn nifti_bytes(volume: &Array3<f32>) -> Vec<u8> {
        let (nx, ny, nz) = volume.dim();
        let mut hdr = vec![0u8; 352];
        hdr[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dims = [3i16, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
        for (i, d) in dims.iter().enumerate() {
            hdr[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        hdr[70..72].copy_from_slice(&16i16.to_le_bytes());
        hdr[72..74].copy_from_slice(&32i16.to_le_bytes());
        hdr[108..112].copy_from_slice(&352f32.to_le_bytes());
        hdr[344..348].copy_from_slice(b"n+1\0");
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    hdr.extend_from_slice(&volume[[x, y, z]].to_le_bytes());
                }
            }
        }
        hdr
    }

    #[test]
    fn hcp_sized_volume_crops_to_canonical() {
        let vol = Array3::from_shape_fn((260, 311, 260), |(x, y, z)| ((x + 2 * y + 3 * z) % 97) as f32);
        let slices = slices_from_volume(vol.view(), 80..180).unwrap();
        assert_eq!(slices.len(), 100);
        for s in &slices {
            assert_eq!(s.dim(), (256, 256));
            assert!(s.max() <= 1.0 + 1e-6);
        }
        // rows come from y offset (311-256)/2 = 27, columns from x offset 2
        let z = 80;
        let raw = vol[[2, 27, z]];
        let max = (0..260)
            .flat_map(|x| (27..283).map(move |y| (x, y)))
            .filter(|&(x, _)| (2..258).contains(&x))
            .map(|(x, y)| vol[[x, y, z]])
            .fold(0.0f32, f32::max);
        assert!((slices[0].data()[[0, 0]] - raw / max).abs() < 1e-6);
    }

    #[test]
    fn small_planes_are_zero_padded() {
        let plane = Array2::from_elem((10, 250), 1.0f32);
        let out = crop_or_pad(&plane, 256, 256);
        assert_eq!(out.dim(), (256, 256));
        assert_eq!(out.sum(), 2500.0);
        assert_eq!(out[[123, 3]], 1.0);
        assert_eq!(out[[122, 3]], 0.0);
        assert_eq!(out[[123, 2]], 0.0);
    }

    #[test]
    fn zero_volume_gives_zero_slices_with_unit_scale() {
        let vol = Array3::zeros((16, 16, 4));
        let slices = slices_from_volume(vol.view(), 0..4).unwrap();
        assert!(slices.iter().all(|s| s.scale() == 1.0 && s.max() == 0.0));
    }

    #[test]
    fn window_out_of_bounds() {
        let vol = Array3::zeros((16, 16, 4));
        assert!(slices_from_volume(vol.view(), 2..5).is_err());
        assert!(slices_from_volume(vol.view(), 2..2).is_err());
    }

    #[test]
    fn reads_plain_and_gzipped_files() {
        use std::io::Write;
        let vol = Array3::from_shape_fn((20, 300, 6), |(x, y, z)| (x * y + z) as f32);
        let bytes = nifti_bytes(&vol);
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("v.nii");
        fs::write(&plain, &bytes).unwrap();
        let gz = dir.path().join("v.nii.gz");
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&bytes).unwrap();
        fs::write(&gz, enc.finish().unwrap()).unwrap();

        let a = ingest_volume(&plain, 1..4).unwrap();
        let b = ingest_volume(&gz, 1..4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(parse_nifti(&bytes).unwrap(), vol);
    }

    #[test]
    fn rejects_non_nifti() {
        assert!(parse_nifti(&[0u8; 400]).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest_volume(dir.path().join("missing.nii"), 0..1).is_err());
    }
}
