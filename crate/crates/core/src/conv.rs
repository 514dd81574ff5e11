//! 2D convolution kernels over channels-last tensors.
//!
//! `forward` uses an im2col layout and accumulates every output element in
//! exactly the order of [`conv2d_naive`] (bias first, then `u, v, c`), so
//! the two agree bit-for-bit at the same precision.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Output extent and (before, after) zero padding for "same"-style
/// convolution: `out = ceil(input / stride)`, odd totals put the extra zero
/// after (bottom/right).
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = input.div_ceil(stride);
    let needed = ((out - 1) * stride + kernel).saturating_sub(input);
    let before = needed / 2;
    (out, before, needed - before)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub cin: usize,
    pub kernel: usize,
    pub cout: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        let (k, k2, cin, cout) = (weight[0], weight[1], weight[2], weight[3]);
        if k != k2 || k == 0 {
            return Err(invalid("conv2d", alloc::format!("kernel must be square and non-empty, got {weight:?}")));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be >= 1"));
        }
        if input[3] != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d (input channels vs weight)",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if bias != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d (bias vs weight)",
                lhs: bias.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if input[1] == 0 || input[2] == 0 {
            return Err(invalid("conv2d", "spatial extents must be >= 1"));
        }
        let (out_h, pad_top, _) = same_padding(input[1], k, stride);
        let (out_w, pad_left, _) = same_padding(input[2], k, stride);
        Ok(Self {
            batch: input[0],
            height: input[1],
            width: input[2],
            cin,
            kernel: k,
            cout,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_h, self.out_w, self.cout]
    }

    #[inline]
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    #[inline]
    fn in_image(&self) -> usize {
        self.height * self.width * self.cin
    }

    #[inline]
    fn out_image(&self) -> usize {
        self.out_h * self.out_w * self.cout
    }

    /// Source row/column of tap `u`/`v` for output `i`/`j`, or `None` in the
    /// zero padding.
    #[inline]
    fn src(&self, i: usize, u: usize, pad: usize, extent: usize) -> Option<usize> {
        (i * self.stride + u).checked_sub(pad).filter(|&r| r < extent)
    }
}

/// Quadruple-loop reference convolution. Kept as the oracle for the
/// optimized path.
pub fn conv2d_naive<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), bias.shape(), stride)?;
    let (x, w, bs) = (input.data(), weight.data(), bias.data());
    let mut out = vec![T::ZERO; g.batch * g.out_image()];
    for b in 0..g.batch {
        for i in 0..g.out_h {
            for j in 0..g.out_w {
                for f in 0..g.cout {
                    let mut acc = bs[f];
                    for u in 0..g.kernel {
                        for v in 0..g.kernel {
                            for c in 0..g.cin {
                                let xv = match (g.src(i, u, g.pad_top, g.height), g.src(j, v, g.pad_left, g.width)) {
                                    (Some(r), Some(s)) => x[((b * g.height + r) * g.width + s) * g.cin + c],
                                    _ => T::ZERO,
                                };
                                acc += xv * w[((u * g.kernel + v) * g.cin + c) * g.cout + f];
                            }
                        }
                    }
                    out[((b * g.out_h + i) * g.out_w + j) * g.cout + f] = acc;
                }
            }
        }
    }
    Tensor::new(&g.out_shape(), out)
}

/// Pixels per register tile in the GEMM loops.
const TILE: usize = 64;

/// Output columns `j` whose tap `v` lands inside the image.
#[inline]
fn valid_cols(g: &ConvGeom, v: usize) -> (usize, usize) {
    // j * stride + v >= pad_left  and  j * stride + v - pad_left < width
    let lo = g.pad_left.saturating_sub(v).div_ceil(g.stride);
    let hi = (g.width + g.pad_left).saturating_sub(v).div_ceil(g.stride).min(g.out_w);
    (lo.min(hi), hi)
}

/// Unrolls one image into `[k * k * cin, out_h * out_w]` (one row per kernel
/// tap), zero-filled where the window hangs over the padding.
fn im2col<T: Real>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    let pixels = g.out_h * g.out_w;
    for u in 0..g.kernel {
        for v in 0..g.kernel {
            let (lo, hi) = valid_cols(g, v);
            for c in 0..g.cin {
                let row = &mut cols[((u * g.kernel + v) * g.cin + c) * pixels..][..pixels];
                for i in 0..g.out_h {
                    let dst = &mut row[i * g.out_w..][..g.out_w];
                    let Some(r) = g.src(i, u, g.pad_top, g.height) else {
                        dst.fill(T::ZERO);
                        continue;
                    };
                    dst[..lo].fill(T::ZERO);
                    dst[hi..].fill(T::ZERO);
                    let base = r * g.width * g.cin + c;
                    for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                        *d = image[base + ((lo + j) * g.stride + v - g.pad_left) * g.cin];
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    let pixels = g.out_h * g.out_w;
    for u in 0..g.kernel {
        for v in 0..g.kernel {
            let (lo, hi) = valid_cols(g, v);
            for c in 0..g.cin {
                let row = &cols[((u * g.kernel + v) * g.cin + c) * pixels..][..pixels];
                for i in 0..g.out_h {
                    let Some(r) = g.src(i, u, g.pad_top, g.height) else {
                        continue;
                    };
                    let base = r * g.width * g.cin + c;
                    for (j, &s) in row[i * g.out_w + lo..i * g.out_w + hi].iter().enumerate() {
                        image[base + ((lo + j) * g.stride + v - g.pad_left) * g.cin] += s;
                    }
                }
            }
        }
    }
}

/// `acc[q][t] += sum_k a[k][p0 + t] * b[k][f0 + q]` for up to four
/// columns `q`, summing `k` in order. `a` rows have length `stride`.
#[inline]
fn gemm_tile<T: Real>(a: &[T], stride: usize, p0: usize, n: usize, b: &[T], b_cols: usize, f0: usize, nf: usize, acc: &mut [T]) {
    let depth = a.len() / stride;
    let mut t0 = 0;
    if b_cols.is_multiple_of(4) {
        // 8 pixels x 4 columns held in registers across the whole k loop;
        // padding columns land in scratch rows of `acc`
        while t0 + 8 <= n {
            let mut r = [[T::ZERO; 8]; 4];
            for (q, rq) in r.iter_mut().enumerate() {
                rq.copy_from_slice(&acc[q * TILE + t0..][..8]);
            }
            for k in 0..depth {
                let x: &[T; 8] = a[k * stride + p0 + t0..][..8].try_into().unwrap();
                let w: &[T; 4] = b[k * b_cols + f0..][..4].try_into().unwrap();
                for q in 0..4 {
                    for l in 0..8 {
                        r[q][l] += x[l] * w[q];
                    }
                }
            }
            for (q, rq) in r.iter().enumerate() {
                acc[q * TILE + t0..][..8].copy_from_slice(rq);
            }
            t0 += 8;
        }
    }
    if t0 == n {
        return;
    }
    for k in 0..depth {
        let x = &a[k * stride + p0 + t0..][..n - t0];
        let w = &b[k * b_cols + f0..][..nf];
        for (q, &wv) in w.iter().enumerate() {
            for (o, &xv) in acc[q * TILE + t0..][..n - t0].iter_mut().zip(x) {
                *o += xv * wv;
            }
        }
    }
}

/// Copies a row-major `[rows, cols]` matrix with zero columns appended up to
/// a multiple of four.
fn pad_cols<T: Real>(m: &[T], cols: usize) -> (Vec<T>, usize) {
    let padded = cols.div_ceil(4) * 4;
    let mut out = vec![T::ZERO; m.len() / cols * padded];
    for (dst, src) in out.chunks_exact_mut(padded).zip(m.chunks_exact(cols)) {
        dst[..cols].copy_from_slice(src);
    }
    (out, padded)
}

/// `out[q] += a . b[q]` for four rows of `b` (row length `a.len()`), with
/// eight partial sums per row.
#[inline]
fn dot4<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    let len = a.len();
    let mut lanes = [[T::ZERO; 8]; 4];
    let full = len / 8 * 8;
    for p in (0..full).step_by(8) {
        let x: &[T; 8] = a[p..][..8].try_into().unwrap();
        for (q, lq) in lanes.iter_mut().enumerate() {
            let y: &[T; 8] = b[q * len + p..][..8].try_into().unwrap();
            for l in 0..8 {
                lq[l] += x[l] * y[l];
            }
        }
    }
    for (q, lq) in lanes.iter().enumerate() {
        let mut s = lq.iter().fold(T::ZERO, |s, &v| s + v);
        for p in full..len {
            s += a[p] * b[q * len + p];
        }
        out[q] += s;
    }
}

pub fn forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let pl = g.patch_len();
    let pixels = g.out_h * g.out_w;
    let mut out = vec![T::ZERO; g.batch * g.out_image()];
    let mut cols = vec![T::ZERO; pixels * pl];
    let mut acc = [T::ZERO; 4 * TILE];
    let (wp, wp_cols) = pad_cols(w, g.cout);
    for b in 0..g.batch {
        im2col(g, &x[b * g.in_image()..][..g.in_image()], &mut cols);
        let out_b = &mut out[b * g.out_image()..][..g.out_image()];
        for p0 in (0..pixels).step_by(TILE) {
            let n = TILE.min(pixels - p0);
            for f0 in (0..g.cout).step_by(4) {
                let nf = 4.min(g.cout - f0);
                for q in 0..nf {
                    acc[q * TILE..][..n].fill(bias[f0 + q]);
                }
                gemm_tile(&cols, pixels, p0, n, &wp, wp_cols, f0, nf, &mut acc);
                for q in 0..nf {
                    for t in 0..n {
                        out_b[(p0 + t) * g.cout + f0 + q] = acc[q * TILE + t];
                    }
                }
            }
        }
    }
    out
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Gradients of a convolution given the upstream gradient `gout`; each part
/// is only computed when requested.
pub fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> ConvGrads<T> {
    let pl = g.patch_len();
    let pixels = g.out_h * g.out_w;

    let bias = want_bias.then(|| {
        let mut gb = vec![T::ZERO; g.cout];
        for row in gout.chunks_exact(g.cout) {
            for (a, &v) in gb.iter_mut().zip(row) {
                *a += v;
            }
        }
        gb
    });

    let mut gw = want_weight.then(|| vec![T::ZERO; pl * g.cout]);
    let mut gx = want_input.then(|| vec![T::ZERO; g.batch * g.in_image()]);
    if gw.is_none() && gx.is_none() {
        return ConvGrads { input: None, weight: None, bias };
    }

    // weight transposed to [cout, pl] so the input gradient is the same
    // tiled product as the forward pass
    let pl4 = pl.div_ceil(4) * 4;
    let mut wt = vec![T::ZERO; pl4 * g.cout.div_ceil(4) * 4];
    for k in 0..pl {
        for f in 0..g.cout {
            wt[f * pl4 + k] = w[k * g.cout + f];
        }
    }
    let mut cols = vec![T::ZERO; pixels * pl];
    let cout4 = g.cout.div_ceil(4) * 4;
    let mut gout_t = vec![T::ZERO; pixels * cout4];
    let mut gw4 = vec![T::ZERO; pl * cout4];
    let mut acc = [T::ZERO; 4 * TILE];
    for b in 0..g.batch {
        let gout_b = &gout[b * g.out_image()..][..g.out_image()];
        for (p, row) in gout_b.chunks_exact(g.cout).enumerate() {
            for (f, &v) in row.iter().enumerate() {
                gout_t[f * pixels + p] = v;
            }
        }
        if let Some(gw) = gw.as_mut() {
            im2col(g, &x[b * g.in_image()..][..g.in_image()], &mut cols);
            for k in 0..pl {
                let xr = &cols[k * pixels..][..pixels];
                for f0 in (0..cout4).step_by(4) {
                    dot4(xr, &gout_t[f0 * pixels..][..4 * pixels], &mut gw4[k * cout4 + f0..][..4]);
                }
            }
            if b + 1 == g.batch {
                for (dst, src) in gw.chunks_exact_mut(g.cout).zip(gw4.chunks_exact(cout4)) {
                    dst.copy_from_slice(&src[..g.cout]);
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            for p0 in (0..pixels).step_by(TILE) {
                let n = TILE.min(pixels - p0);
                for k0 in (0..pl).step_by(4) {
                    let nk = 4.min(pl - k0);
                    acc.fill(T::ZERO);
                    gemm_tile(&gout_t, pixels, p0, n, &wt, pl4, k0, nk, &mut acc);
                    for q in 0..nk {
                        cols[(k0 + q) * pixels + p0..][..n].copy_from_slice(&acc[q * TILE..][..n]);
                    }
                }
            }
            col2im_add(g, &cols, &mut gx[b * g.in_image()..][..g.in_image()]);
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias,
    }
}

/// Optimized convolution on plain tensors (no graph).
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), bias.shape(), stride)?;
    Tensor::new(&g.out_shape(), forward(&g, input.data(), weight.data(), bias.data()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_zero_after() {
        assert_eq!(same_padding(64, 7, 2), (32, 2, 3));
        assert_eq!(same_padding(5, 3, 1), (5, 1, 1));
        assert_eq!(same_padding(4, 2, 2), (2, 0, 0));
        assert_eq!(same_padding(1, 1, 1), (1, 0, 0));
        assert_eq!(same_padding(64, 2, 2), (32, 0, 0));
    }

    #[test]
    fn identity_pixel() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![5.0f32]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        assert_eq!(conv2d(&x, &w, &b, 1).unwrap().data(), &[5.0]);
    }

    #[test]
    fn three_by_three_ones_center_is_45() {
        let x = Tensor::new(&[1, 3, 3, 1], (1..=9).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::full(&[3, 3, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 1]);
        assert_eq!(y.data()[4], 45.0);
        // corner sees 1 + 2 + 4 + 5
        assert_eq!(y.data()[0], 12.0);
        assert_eq!(conv2d_naive(&x, &w, &b, 1).unwrap(), y);
    }

    #[test]
    fn table_shape_first_classifier_layer() {
        let x = Tensor::<f32>::zeros(&[1, 64, 64, 3]);
        let w = Tensor::zeros(&[7, 7, 3, 64]);
        let b = Tensor::zeros(&[64]);
        assert_eq!(conv2d(&x, &w, &b, 2).unwrap().shape(), &[1, 32, 32, 64]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 3]);
        let w = Tensor::zeros(&[3, 3, 2, 8]);
        let b = Tensor::zeros(&[8]);
        let err = conv2d(&x, &w, &b, 1).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[1, 4, 4, 3]") && msg.contains("[3, 3, 2, 8]"), "{msg}");
    }
}
