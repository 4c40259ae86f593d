//! Per-sample tensor kernels for the U-Net: im2col convolution, 2x2 max
//! pooling, 2x2 stride-2 transposed convolution and channel concatenation,
//! each with its backward pass. Tensors are `(channels, height, width)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::Real;

/// Unfolds `x` into a `(c*k*k, h*w)` matrix of zero-padded neighbourhoods.
pub fn im2col<F: Real>(x: &Array3<F>, k: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut cols = Array2::zeros((c * k * k, hw));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        let plane = &xs[ci * hw..(ci + 1) * hw];
        for u in 0..k {
            let dy = u as isize - pad;
            for v in 0..k {
                let dx = v as isize - pad;
                let row = (ci * k + u) * k + v;
                let dst = &mut cs[row * hw..(row + 1) * hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[y * w + x0..y * w + x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im<F: Real>(cols: &Array2<F>, c: usize, h: usize, w: usize, k: usize) -> Array3<F> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut x = Array3::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        let plane = &mut xs[ci * hw..(ci + 1) * hw];
        for u in 0..k {
            let dy = u as isize - pad;
            for v in 0..k {
                let dx = v as isize - pad;
                let row = (ci * k + u) * k + v;
                let src = &cs[row * hw..(row + 1) * hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let sx0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                    for (d, &g) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
    x
}

fn as_matrix<F: Real>(x: &Array3<F>) -> ArrayView2<'_, F> {
    let (c, h, w) = x.dim();
    x.view().into_shape_with_order((c, h * w)).expect("standard layout")
}

/// Same-size convolution. `weight` is `(cout, cin*k*k)`. Returns the output
/// and the unfolded input, which the backward pass needs.
pub fn conv_forward<F: Real>(
    x: &Array3<F>,
    weight: ArrayView2<F>,
    bias: ArrayView1<F>,
    k: usize,
    relu: bool,
) -> (Array3<F>, Array2<F>) {
    let (_, h, w) = x.dim();
    let cout = weight.nrows();
    let cols = if k == 1 { as_matrix(x).to_owned() } else { im2col(x, k) };
    let mut out = Array2::zeros((cout, h * w));
    general_mat_mul(F::one(), &weight, &cols, F::zero(), &mut out);
    for (mut row, &b) in out.axis_iter_mut(Axis(0)).zip(bias.iter()) {
        if relu {
            row.mapv_inplace(|v| {
                let v = v + b;
                if v > F::zero() {
                    v
                } else {
                    F::zero()
                }
            });
        } else {
            row.mapv_inplace(|v| v + b);
        }
    }
    (out.into_shape_with_order((cout, h, w)).expect("contiguous"), cols)
}

/// Backward pass of [`conv_forward`]. `grad_out` is consumed; when the layer
/// had a ReLU, it is first masked by `out > 0`. Parameter gradients are
/// accumulated into `grad_w` / `grad_b`. Returns the input gradient when
/// `need_input_grad`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<F: Real>(
    mut grad_out: Array3<F>,
    out: &Array3<F>,
    cols: &Array2<F>,
    weight: ArrayView2<F>,
    mut grad_w: ArrayViewMut2<F>,
    mut grad_b: ArrayViewMut1<F>,
    input_dim: (usize, usize, usize),
    k: usize,
    relu: bool,
    need_input_grad: bool,
) -> Option<Array3<F>> {
    if relu {
        ndarray::Zip::from(&mut grad_out).and(out).for_each(|g, &o| {
            if o <= F::zero() {
                *g = F::zero();
            }
        });
    }
    let (cout, h, w) = grad_out.dim();
    let g = grad_out.into_shape_with_order((cout, h * w)).expect("contiguous");
    general_mat_mul(F::one(), &g, &cols.t(), F::one(), &mut grad_w);
    for (gb, row) in grad_b.iter_mut().zip(g.axis_iter(Axis(0))) {
        *gb = *gb + row.sum();
    }
    if !need_input_grad {
        return None;
    }
    let (cin, ih, iw) = input_dim;
    let mut dcols = Array2::zeros((cin * k * k, h * w));
    general_mat_mul(F::one(), &weight.t(), &g, F::zero(), &mut dcols);
    Some(if k == 1 {
        dcols.into_shape_with_order((cin, ih, iw)).expect("contiguous")
    } else {
        col2im(&dcols, cin, ih, iw, k)
    })
}

/// 2x2 max pooling; also returns the winning offset (0..4) per output pixel.
pub fn maxpool_forward<F: Real>(x: &Array3<F>) -> (Array3<F>, Array3<u8>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::zeros((c, oh, ow));
    let mut arg = Array3::zeros((c, oh, ow));
    for ci in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = x[[ci, 2 * i, 2 * j]];
                let mut at = 0u8;
                for (n, (a, b)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = x[[ci, 2 * i + a, 2 * j + b]];
                    if v > best {
                        best = v;
                        at = n as u8 + 1;
                    }
                }
                out[[ci, i, j]] = best;
                arg[[ci, i, j]] = at;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<F: Real>(grad_out: &Array3<F>, arg: &Array3<u8>) -> Array3<F> {
    let (c, oh, ow) = grad_out.dim();
    let mut dx = Array3::zeros((c, oh * 2, ow * 2));
    for ((ci, i, j), &g) in grad_out.indexed_iter() {
        let at = arg[[ci, i, j]] as usize;
        dx[[ci, 2 * i + at / 2, 2 * j + at % 2]] = g;
    }
    dx
}

/// 2x2 stride-2 transposed convolution. `weight` is `(cout*4, cin)` with
/// rows ordered `(co, dy, dx)`.
pub fn upconv_forward<F: Real>(x: &Array3<F>, weight: ArrayView2<F>, bias: ArrayView1<F>) -> Array3<F> {
    let (_, h, w) = x.dim();
    let cout = weight.nrows() / 4;
    let mut y4 = Array2::zeros((cout * 4, h * w));
    general_mat_mul(F::one(), &weight, &as_matrix(x), F::zero(), &mut y4);
    let mut out = Array3::zeros((cout, 2 * h, 2 * w));
    for co in 0..cout {
        let b = bias[co];
        for tap in 0..4 {
            let (a, bx) = (tap / 2, tap % 2);
            let row = y4.row(co * 4 + tap);
            let mut dst = out.slice_mut(s![co, a..;2, bx..;2]);
            for (d, &v) in dst.iter_mut().zip(row.iter()) {
                *d = v + b;
            }
        }
    }
    out
}

pub fn upconv_backward<F: Real>(
    grad_out: &Array3<F>,
    x: &Array3<F>,
    weight: ArrayView2<F>,
    mut grad_w: ArrayViewMut2<F>,
    mut grad_b: ArrayViewMut1<F>,
) -> Array3<F> {
    let (cin, h, w) = x.dim();
    let cout = weight.nrows() / 4;
    let mut g4 = Array2::zeros((cout * 4, h * w));
    for co in 0..cout {
        let mut total = F::zero();
        for tap in 0..4 {
            let (a, bx) = (tap / 2, tap % 2);
            let src = grad_out.slice(s![co, a..;2, bx..;2]);
            for (d, &v) in g4.row_mut(co * 4 + tap).iter_mut().zip(src.iter()) {
                *d = v;
                total = total + v;
            }
        }
        grad_b[co] = grad_b[co] + total;
    }
    general_mat_mul(F::one(), &g4, &as_matrix(x).t(), F::one(), &mut grad_w);
    let mut dx = Array2::zeros((cin, h * w));
    general_mat_mul(F::one(), &weight.t(), &g4, F::zero(), &mut dx);
    dx.into_shape_with_order((cin, h, w)).expect("contiguous")
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat<F: Real>(a: &Array3<F>, b: &Array3<F>) -> Array3<F> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

/// Splits a gradient of [`concat`] back into its two parts.
pub fn split<F: Real>(g: Array3<F>, first: usize) -> (Array3<F>, Array3<F>) {
    let a = g.slice(s![..first, .., ..]).to_owned();
    let b = g.slice(s![first.., .., ..]).to_owned();
    (a, b)
}

#[cfg(test)]
mod tests {
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand3(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Array3<f64>, w: &Array2<f64>, b: &Array1<f64>, k: usize) -> Array3<f64> {
        let (cin, h, wd) = x.dim();
        let cout = w.nrows();
        let p = (k / 2) as isize;
        Array3::from_shape_fn((cout, h, wd), |(co, y, xx)| {
            let mut acc = b[co];
            for ci in 0..cin {
                for u in 0..k {
                    for v in 0..k {
                        let sy = y as isize + u as isize - p;
                        let sx = xx as isize + v as isize - p;
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < wd as isize {
                            acc += w[[co, (ci * k + u) * k + v]] * x[[ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in [1, 3] {
            let x = rand3(&mut rng, 3, 8, 6);
            let w = Array2::from_shape_fn((4, 3 * k * k), |_| rng.random_range(-1.0..1.0));
            let b = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            let (y, _) = conv_forward(&x, w.view(), b.view(), k, false);
            let err = (&y - &naive_conv(&x, &w, &b, k)).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand3(&mut rng, 2, 5, 7);
        let cols = Array2::from_shape_fn((18, 35), |_| rng.random_range(-1.0..1.0));
        let lhs = (&im2col(&x, 3) * &cols).sum();
        let rhs = (&x * &col2im(&cols, 2, 5, 7, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upconv_places_taps() {
        // one input pixel, one channel: each output tap equals its weight
        let x = Array3::from_elem((1, 1, 1), 2.0f64);
        let w = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Array1::from_elem(1, 0.5);
        let y = upconv_forward(&x, w.view(), b.view());
        assert_eq!(y.into_raw_vec_and_offset().0, vec![2.5, 4.5, 6.5, 8.5]);
    }

    #[test]
    fn upconv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand3(&mut rng, 3, 2, 3);
        let w = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(2, |_| rng.random_range(-1.0..1.0));
        let probe = rand3(&mut rng, 2, 4, 6);
        let loss = |x: &Array3<f64>, w: &Array2<f64>| (&upconv_forward(x, w.view(), b.view()) * &probe).sum();
        let mut gw = Array2::zeros((8, 3));
        let mut gb = Array1::zeros(2);
        let dx = upconv_backward(&probe, &x, w.view(), gw.view_mut(), gb.view_mut());
        let h = 1e-6;
        for idx in [(0, 0), (5, 2), (7, 1)] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - gw[idx]).abs() < 1e-6);
        }
        for idx in [(0, 0, 0), (2, 1, 2)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6);
        }
        assert!((gb[1] - probe.slice(s![1, .., ..]).sum()).abs() < 1e-12);
    }

    #[test]
    fn pool_routes_gradient_to_max() {
        let x = Array3::from_shape_vec((1, 2, 4), vec![1.0, 5.0, 0.0, -1.0, 2.0, 3.0, -2.0, -3.0f64]).unwrap();
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y.into_raw_vec_and_offset().0, vec![5.0, 0.0]);
        let g = Array3::from_shape_vec((1, 1, 2), vec![10.0, 20.0]).unwrap();
        let dx = maxpool_backward(&g, &arg);
        assert_eq!(dx.into_raw_vec_and_offset().0, vec![0.0, 10.0, 20.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_and_split_invert() {
        let a = Array3::from_elem((2, 2, 2), 1.0f64);
        let b = Array3::from_elem((3, 2, 2), 2.0f64);
        let c = concat(&a, &b);
        assert_eq!(c.dim(), (5, 2, 2));
        let (a2, b2) = split(c, 2);
        assert_eq!((a2, b2), (a, b));
    }
}
