//! Centered orthonormal Fourier transforms, undersampling masks and the
//! coupled real/imaginary convolution.

mod conv;
mod fft;
mod mask;

pub use conv::{complex_conv, correlate_same, ComplexKernel};
pub use fft::{fft2c, ifft2c, zero_filled_magnitude};
pub use mask::{
    make_cartesian_mask, make_mask, make_pseudo_radial_mask, MaskKind, SamplingMask,
    DEFAULT_CENTER_FRACTION, FRACTION_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::tensorio::{ComplexSlice, Domain};

/// Zeroes every k-space sample the mask does not keep, in both channels.
pub fn apply_mask(kspace: &ComplexSlice, mask: &SamplingMask) -> Result<ComplexSlice> {
    kspace.expect_domain(Domain::Kspace)?;
    if kspace.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "k-space {:?} vs mask {:?}",
            kspace.dim(),
            mask.dim()
        )));
    }
    let keep = mask.data();
    let gate = |plane: &ndarray::Array2<f32>| {
        ndarray::Zip::from(plane)
            .and(keep)
            .map_collect(|&v, &m| if m != 0 { v } else { 0.0 })
    };
    ComplexSlice::new(
        gate(kspace.real()),
        gate(kspace.imag()),
        Domain::Kspace,
        kspace.scale(),
    )
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;

    fn ramp_kspace() -> ComplexSlice {
        ComplexSlice::new(
            Array2::from_shape_fn((16, 16), |(i, j)| 1.0 + (i * 16 + j) as f32),
            Array2::from_shape_fn((16, 16), |(i, j)| -1.0 - (i + j) as f32),
            Domain::Kspace,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn masking_is_idempotent() {
        let k = ramp_kspace();
        let m = make_pseudo_radial_mask(16, 16, 0.5, 3).unwrap();
        let once = apply_mask(&k, &m).unwrap();
        let twice = apply_mask(&once, &m).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn full_mask_is_identity() {
        let k = ramp_kspace();
        let m = make_pseudo_radial_mask(16, 16, 1.0, 0).unwrap();
        assert_eq!(apply_mask(&k, &m).unwrap(), k);
    }

    #[test]
    fn unsampled_entries_are_exactly_zero() {
        let k = ramp_kspace();
        let m = make_cartesian_mask(16, 16, 0.5, 0.125, 1).unwrap();
        let out = apply_mask(&k, &m).unwrap();
        for ((idx, &keep), (&re, &im)) in m
            .data()
            .indexed_iter()
            .zip(out.real().iter().zip(out.imag().iter()))
        {
            if keep == 0 {
                assert_eq!((re, im), (0.0, 0.0), "{idx:?}");
            } else {
                assert_ne!(re, 0.0);
            }
        }
    }

    #[test]
    fn rejects_image_domain_and_shape_mismatch() {
        let m = make_pseudo_radial_mask(16, 16, 1.0, 0).unwrap();
        let img = ComplexSlice::zeros(16, 16, Domain::Image).unwrap();
        assert!(matches!(apply_mask(&img, &m), Err(Error::Domain { .. })));
        let k = ComplexSlice::zeros(8, 16, Domain::Kspace).unwrap();
        assert!(matches!(apply_mask(&k, &m), Err(Error::Shape(_))));
    }
}
