use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensorio::ComplexSlice;

/// A square, odd-sized complex kernel stored as real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexKernel {
    w_real: Array2<f32>,
    w_imag: Array2<f32>,
}

impl ComplexKernel {
    pub fn new(w_real: Array2<f32>, w_imag: Array2<f32>) -> Result<Self> {
        let (kh, kw) = w_real.dim();
        if w_imag.dim() != (kh, kw) || kh != kw {
            return Err(Error::Shape(format!(
                "kernel parts {:?} / {:?} must be equal and square",
                w_real.dim(),
                w_imag.dim()
            )));
        }
        if kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!("kernel size {kh} must be odd")));
        }
        Ok(Self { w_real, w_imag })
    }

    pub fn size(&self) -> usize {
        self.w_real.nrows()
    }

    pub fn real(&self) -> &Array2<f32> {
        &self.w_real
    }

    pub fn imag(&self) -> &Array2<f32> {
        &self.w_imag
    }
}

/// Same-size 2-D cross-correlation with zero padding of `(k - 1) / 2`.
pub fn correlate_same(input: &Array2<f32>, kernel: &Array2<f32>) -> Array2<f32> {
    let (h, w) = input.dim();
    let k = kernel.nrows();
    let pad = (k / 2) as isize;
    let mut out = Array2::zeros((h, w));
    for ((y, x), o) in out.indexed_iter_mut() {
        let mut acc = 0.0f32;
        for u in 0..k {
            let sy = y as isize + u as isize - pad;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for v in 0..k {
                let sx = x as isize + v as isize - pad;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                acc += kernel[[u, v]] * input[[sy as usize, sx as usize]];
            }
        }
        *o = acc;
    }
    out
}

/// Complex convolution carried out as four real correlations:
/// `re = Wr*yr - Wi*yi`, `im = Wr*yi + Wi*yr`.
pub fn complex_conv(y: &ComplexSlice, kernel: &ComplexKernel) -> Result<ComplexSlice> {
    let (h, w) = y.dim();
    if kernel.size() > h.min(w) {
        return Err(Error::Shape(format!(
            "kernel {} does not fit a {h}x{w} slice",
            kernel.size()
        )));
    }
    let rr = correlate_same(y.real(), kernel.real());
    let ii = correlate_same(y.imag(), kernel.imag());
    let ri = correlate_same(y.imag(), kernel.real());
    let ir = correlate_same(y.real(), kernel.imag());
    ComplexSlice::new(rr - ii, ri + ir, y.domain(), y.scale())
}
