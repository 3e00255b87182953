//! 2-D cross-correlation over NCHW tensors via im2col and a fixed-order GEMM.

use crate::error::{Result, TensorError};
use crate::tensor::{gemm_acc, transpose_into, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        };
        let (&[n, c, h, w], &[o, ci, kh, kw]) = (input, kernel) else {
            return Err(mismatch());
        };
        if ci != c || kh != kw || stride == 0 {
            return Err(mismatch());
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(mismatch());
        }
        let out_height = (h + 2 * pad - kh) / stride + 1;
        let out_width = (w + 2 * pad - kw) / stride + 1;
        Ok(Self {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: o,
            kernel: kh,
            stride,
            pad,
            out_height,
            out_width,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height, self.out_width]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height * self.out_width
    }

    fn sample_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    /// Source pixel for output position (oy, ox) and kernel tap (ki, kj).
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.pad)?;
        let x = (ox * self.stride + kj).checked_sub(self.pad)?;
        (y < self.height && x < self.width).then_some((y, x))
    }

    /// Patch matrix of one sample, (C·k·k) × (Ho·Wo).
    fn im2col(&self, sample: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        let k = self.kernel;
        for c in 0..self.in_channels {
            let plane = &sample[c * self.height * self.width..];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * p;
                    for oy in 0..self.out_height {
                        for ox in 0..self.out_width {
                            cols[row + oy * self.out_width + ox] = match self.source(oy, ox, ki, kj) {
                                Some((y, x)) => plane[y * self.width + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch matrix back onto a sample-shaped buffer.
    fn col2im(&self, cols: &[f64], sample: &mut [f64]) {
        let p = self.positions();
        let k = self.kernel;
        for c in 0..self.in_channels {
            let base = c * self.height * self.width;
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * p;
                    for oy in 0..self.out_height {
                        for ox in 0..self.out_width {
                            if let Some((y, x)) = self.source(oy, ox, ki, kj) {
                                sample[base + y * self.width + x] += cols[row + oy * self.out_width + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    let (q, p) = (g.patch_len(), g.positions());
    let out_len = g.out_channels * p;
    let mut out = vec![0.0; g.batch * out_len];
    let mut cols = vec![0.0; q * p];
    for n in 0..g.batch {
        let sample = &input.data()[n * g.sample_len()..(n + 1) * g.sample_len()];
        g.im2col(sample, &mut cols);
        gemm_acc(
            g.out_channels,
            q,
            p,
            kernel.data(),
            &cols,
            &mut out[n * out_len..(n + 1) * out_len],
        );
    }
    Tensor::new(g.output_shape().to_vec(), out)
}

/// Gradients of a conv2d with respect to its input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    if grad_out.shape() != g.output_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            lhs: grad_out.shape().to_vec(),
            rhs: g.output_shape().to_vec(),
        });
    }
    let (q, p, o) = (g.patch_len(), g.positions(), g.out_channels);
    let mut kernel_t = vec![0.0; q * o];
    transpose_into(o, q, kernel.data(), &mut kernel_t);

    let mut grad_input = need_input.then(|| vec![0.0; input.len()]);
    let mut grad_kernel = need_kernel.then(|| vec![0.0; kernel.len()]);
    let mut cols = vec![0.0; q * p];
    let mut rows = vec![0.0; p * q];
    for n in 0..g.batch {
        let go = &grad_out.data()[n * o * p..(n + 1) * o * p];
        if let Some(gk) = grad_kernel.as_mut() {
            let sample = &input.data()[n * g.sample_len()..(n + 1) * g.sample_len()];
            g.im2col(sample, &mut cols);
            transpose_into(q, p, &cols, &mut rows);
            gemm_acc(o, p, q, go, &rows, gk);
        }
        if let Some(gi) = grad_input.as_mut() {
            cols.iter_mut().for_each(|v| *v = 0.0);
            gemm_acc(q, o, p, &kernel_t, go, &mut cols);
            g.col2im(&cols, &mut gi[n * g.sample_len()..(n + 1) * g.sample_len()]);
        }
    }
    let gi = grad_input
        .map(|d| Tensor::new(input.shape().to_vec(), d))
        .transpose()?;
    let gk = grad_kernel
        .map(|d| Tensor::new(kernel.shape().to_vec(), d))
        .transpose()?;
    Ok((gi, gk))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-window cross-correlation.
    fn brute_conv(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, c, h, w] = input.shape().try_into().unwrap();
        let [o, _, k, _] = kernel.shape().try_into().unwrap();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, ho, wo]).into_data();
        for b in 0..n {
            for oc in 0..o {
                for y in 0..ho {
                    for x in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for i in 0..k {
                                for j in 0..k {
                                    let sy = (y * stride + i) as isize - pad as isize;
                                    let sx = (x * stride + j) as isize - pad as isize;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                        acc += input.at(&[b, ic, sy as usize, sx as usize])
                                            * kernel.at(&[oc, ic, i, j]);
                                    }
                                }
                            }
                        }
                        out[((b * o + oc) * ho + y) * wo + x] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, o, ho, wo], out).unwrap()
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::ones(&[1, 1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_with_padding() {
        let x = Tensor::from_fn(&[2, 1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        let mut kd = vec![0.0; 9];
        kd[4] = 1.0;
        let k = Tensor::new(vec![1, 1, 3, 3], kd).unwrap();
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ramp_block_sums_stride_two() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let y = conv2d(&x, &k, 2, 0).unwrap();
        // frozen from the sliding-window oracle
        assert_eq!(y.data(), &[10.0, 18.0, 42.0, 50.0]);
        assert_eq!(y, brute_conv(&x, &k, 2, 0));
    }

    #[test]
    fn matches_brute_force_multichannel() {
        let x = Tensor::from_fn(&[2, 3, 7, 6], |i| ((i * 37) % 11) as f64 - 5.0);
        let k = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13) % 7) as f64 * 0.25 - 0.75);
        for (s, p) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let fast = conv2d(&x, &k, s, p).unwrap();
            let slow = brute_conv(&x, &k, s, p);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "s={s} p={p}");
        }
    }

    #[test]
    fn output_shape_formula() {
        for (h, w, k, s, p) in [(64, 64, 3, 2, 1), (32, 32, 3, 2, 1), (16, 16, 3, 1, 1), (9, 7, 4, 4, 0)] {
            let g = ConvGeometry::new(&[1, 3, h, w], &[8, 3, k, k], s, p).unwrap();
            assert_eq!(g.out_height, (h + 2 * p - k) / s + 1);
            assert_eq!(g.out_width, (w + 2 * p - k) / s + 1);
        }
    }

    #[test]
    fn incompatible_shapes() {
        let x = Tensor::ones(&[1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::ones(&[1, 3, 3, 3]), 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::ones(&[1, 2, 5, 5]), 1, 0).is_err());
    }
}
