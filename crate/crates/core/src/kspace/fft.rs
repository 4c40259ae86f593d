use std::cell::RefCell;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::Result;
use crate::tensorio::{ComplexSlice, Domain};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centered, orthonormal 2-D DFT: DC sits at `(H/2, W/2)`.
pub fn fft2c(slice: &ComplexSlice) -> Result<ComplexSlice> {
    slice.expect_domain(Domain::Image)?;
    transform(slice, FftDirection::Forward, Domain::Kspace)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(slice: &ComplexSlice) -> Result<ComplexSlice> {
    slice.expect_domain(Domain::Kspace)?;
    transform(slice, FftDirection::Inverse, Domain::Image)
}

/// Magnitude of the inverse transform of (possibly undersampled) k-space.
pub fn zero_filled_magnitude(kspace: &ComplexSlice) -> Result<Array2<f32>> {
    Ok(ifft2c(kspace)?.magnitude())
}

fn transform(slice: &ComplexSlice, direction: FftDirection, out_domain: Domain) -> Result<ComplexSlice> {
    let (h, w) = slice.dim();
    // Dimensions are multiples of 8, so fftshift and ifftshift coincide:
    // both are a roll by half the length. Reading the input at the shifted
    // index and writing the output at the shifted index gives the centered
    // transform.
    let mut buf = vec![Complex64::default(); h * w];
    for ((i, j), &re) in slice.real().indexed_iter() {
        let im = slice.imag()[[i, j]];
        buf[((i + h / 2) % h) * w + (j + w / 2) % w] = Complex64::new(f64::from(re), f64::from(im));
    }

    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        row_fft.process(&mut buf);

        let col_fft = planner.plan_fft(h, direction);
        let mut column = vec![Complex64::default(); h];
        for j in 0..w {
            for i in 0..h {
                column[i] = buf[i * w + j];
            }
            col_fft.process(&mut column);
            for i in 0..h {
                buf[i * w + j] = column[i];
            }
        }
    });

    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut real = Array2::zeros((h, w));
    let mut imag = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let v = buf[((i + h / 2) % h) * w + (j + w / 2) % w] * norm;
            real[[i, j]] = v.re as f32;
            imag[[i, j]] = v.im as f32;
        }
    }
    ComplexSlice::new(real, imag, out_domain, slice.scale())
}
