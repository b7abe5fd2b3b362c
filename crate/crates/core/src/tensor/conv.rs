//! im2col convolution kernels. The matrix products go through
//! `matrixmultiply`, whose reduction order depends only on the problem size,
//! so results are bitwise reproducible run to run.

use crate::error::{Error, Result};

/// Static description of one 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let (&[batch, in_channels, in_h, in_w], &[out_channels, w_in, kernel_h, kernel_w]) =
            (input, weight)
        else {
            return Err(Error::Config(format!(
                "conv2d expects rank-4 input and weight, got {input:?} and {weight:?}"
            )));
        };
        if w_in != in_channels {
            return Err(Error::Config(format!(
                "conv2d input has {in_channels} channels but weight {weight:?} expects {w_in}"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config(format!(
                "conv2d stride {stride} and dilation {dilation} must be positive"
            )));
        }
        let out_extent = |size: usize, k: usize| -> Option<usize> {
            let span = dilation * (k - 1) + 1;
            let padded = size + 2 * padding;
            (padded >= span).then(|| (padded - span) / stride + 1)
        };
        let (Some(out_h), Some(out_w)) = (out_extent(in_h, kernel_h), out_extent(in_w, kernel_w))
        else {
            return Err(Error::Config(format!(
                "conv2d output would be empty: input {in_h}x{in_w}, kernel {kernel_h}x{kernel_w}, \
                 padding {padding}, dilation {dilation}"
            )));
        };
        Ok(ConvGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            dilation,
            out_h,
            out_w,
        })
    }

    /// Rows of the unfolded input matrix (Cin·kH·kW).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the unfolded input matrix (H'·W').
    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn in_image(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Source coordinate for kernel tap `k` at output position `o`, or `None`
    /// if it falls into the zero padding.
    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dilation) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

fn im2col(g: &ConvGeometry, image: &[f32], cols: &mut [f32]) {
    let pixels = g.out_pixels();
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut cols[row * pixels..(row + 1) * pixels];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ki, g.in_h) {
                        None => line.iter_mut().for_each(|v| *v = 0.0),
                        Some(iy) => {
                            let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g.source(ox, kj, g.in_w).map_or(0.0, |ix| src[ix]);
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im(g: &ConvGeometry, cols: &[f32], image: &mut [f32]) {
    let pixels = g.out_pixels();
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let src = &cols[row * pixels..(row + 1) * pixels];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.in_h) else {
                        continue;
                    };
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    for (ox, v) in line.iter().enumerate() {
                        if let Some(ix) = g.source(ox, kj, g.in_w) {
                            dst[ix] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Matrix operand: a slice plus row/column strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f32],
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub(crate) fn row_major(data: &'a [f32], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub(crate) fn transposed(data: &'a [f32], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0
            || cols == 0
            || (rows - 1) * self.row_stride + (cols - 1) * self.col_stride < self.data.len()
    }
}

/// `c = a·b + beta·c` with `c` row-major (m × n).
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f32, c: &mut [f32]) {
    assert!(a.fits(m, k) && b.fits(k, n) && c.len() >= m * n, "gemm operand bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assertion above guarantees every strided access stays in
    // bounds, and `c` is an exclusive borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass. Returns the output and, when `keep_cols` is set, the
/// unfolded input of every batch item for the weight gradient.
pub(crate) fn forward(
    g: &ConvGeometry,
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
    keep_cols: bool,
) -> (Vec<f32>, Vec<f32>) {
    let (k, p) = (g.patch_len(), g.out_pixels());
    let mut out = vec![0.0; g.batch * g.out_channels * p];
    let mut saved = if keep_cols {
        vec![0.0; g.batch * k * p]
    } else {
        Vec::new()
    };
    let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; k * p] };
    for n in 0..g.batch {
        let image = &input[n * g.in_image()..(n + 1) * g.in_image()];
        let cols: &mut [f32] = if keep_cols {
            &mut saved[n * k * p..(n + 1) * k * p]
        } else {
            &mut scratch
        };
        im2col(g, image, cols);
        let dst = &mut out[n * g.out_channels * p..(n + 1) * g.out_channels * p];
        for (co, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[co]);
        }
        gemm(
            g.out_channels,
            k,
            p,
            MatRef::row_major(weight, k),
            MatRef::row_major(cols, p),
            1.0,
            dst,
        );
    }
    (out, saved)
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn backward(
    g: &ConvGeometry,
    weight: &[f32],
    cols: &[f32],
    upstream: &[f32],
    need: [bool; 3],
) -> ConvGrads {
    let (k, p) = (g.patch_len(), g.out_pixels());
    let cout = g.out_channels;
    let mut grad_input = need[0].then(|| vec![0.0; g.batch * g.in_image()]);
    let mut grad_weight = need[1].then(|| vec![0.0; cout * k]);
    let mut grad_bias = need[2].then(|| vec![0.0; cout]);
    let mut dcols = if need[0] { vec![0.0; k * p] } else { Vec::new() };
    for n in 0..g.batch {
        let dy = &upstream[n * cout * p..(n + 1) * cout * p];
        if let Some(gb) = &mut grad_bias {
            for (co, plane) in dy.chunks_exact(p).enumerate() {
                gb[co] += plane.iter().sum::<f32>();
            }
        }
        if let Some(gw) = &mut grad_weight {
            let c = &cols[n * k * p..(n + 1) * k * p];
            gemm(
                cout,
                p,
                k,
                MatRef::row_major(dy, p),
                MatRef::transposed(c, p),
                1.0,
                gw,
            );
        }
        if let Some(gi) = &mut grad_input {
            gemm(
                k,
                cout,
                p,
                MatRef::transposed(weight, k),
                MatRef::row_major(dy, p),
                0.0,
                &mut dcols,
            );
            col2im(g, &dcols, &mut gi[n * g.in_image()..(n + 1) * g.in_image()]);
        }
    }
    ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop cross-correlation used as an independent reference.
    fn naive(g: &ConvGeometry, x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; g.output_dims().iter().product()];
        for n in 0..g.batch {
            for co in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = b[co];
                        for ci in 0..g.in_channels {
                            for ki in 0..g.kernel_h {
                                for kj in 0..g.kernel_w {
                                    let iy = (oy * g.stride + ki * g.dilation) as isize
                                        - g.padding as isize;
                                    let ix = (ox * g.stride + kj * g.dilation) as isize
                                        - g.padding as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= g.in_h as isize
                                        || ix >= g.in_w as isize
                                    {
                                        continue;
                                    }
                                    let xi = ((n * g.in_channels + ci) * g.in_h + iy as usize)
                                        * g.in_w
                                        + ix as usize;
                                    let wi = ((co * g.in_channels + ci) * g.kernel_h + ki)
                                        * g.kernel_w
                                        + kj;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        out[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn ramp(len: usize, seed: f32) -> Vec<f32> {
        (0..len).map(|i| (i as f32 * 0.37 + seed).sin()).collect()
    }

    #[test]
    fn matches_direct_loops() {
        for &(stride, padding, dilation) in &[(1, 0, 1), (2, 1, 1), (1, 2, 2), (1, 4, 4), (2, 0, 2)]
        {
            let g = ConvGeometry::new(&[2, 3, 9, 8], &[4, 3, 3, 3], stride, padding, dilation)
                .unwrap();
            let x = ramp(2 * 3 * 9 * 8, 0.1);
            let w = ramp(4 * 3 * 3 * 3, 1.3);
            let b = ramp(4, 2.0);
            let (fast, _) = forward(&g, &x, &w, &b, false);
            let slow = naive(&g, &x, &w, &b);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-4, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_mismatched_channels() {
        let err = ConvGeometry::new(&[1, 3, 8, 8], &[4, 2, 3, 3], 1, 1, 1).unwrap_err();
        assert!(err.to_string().contains("3 channels"));
    }

    #[test]
    fn rejects_empty_output() {
        assert!(ConvGeometry::new(&[1, 1, 2, 2], &[1, 1, 4, 4], 2, 0, 1).is_err());
        assert!(ConvGeometry::new(&[1, 1, 5, 5], &[1, 1, 3, 3], 1, 0, 3).is_err());
    }

    #[test]
    fn discriminator_halving() {
        let g = ConvGeometry::new(&[1, 4, 64, 64], &[64, 4, 4, 4], 2, 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (32, 32));
        let g = ConvGeometry::new(&[1, 4, 3, 3], &[1, 4, 4, 4], 2, 1, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (1, 1));
    }
}
