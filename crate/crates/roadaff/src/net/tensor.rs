//! Plain f64 tensors and convolution layers.
//!
//! Everything the net needs and nothing more: a channel-planar 3-D tensor,
//! a strided 2-D convolution with same-padding (output dims = ceil(in/s)),
//! and ReLU. Forward and backward are written directly against the index
//! arithmetic; the inner loops run over output columns so rows stream
//! through the cache.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::Image;

/// `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor3 {
            c: img.channels,
            h: img.height,
            w: img.width,
            data: img.values.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn relu(&self) -> Tensor3 {
        Tensor3 {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// Gradient through ReLU: pass where the *output* activation is positive.
    pub fn relu_backward(post: &Tensor3, gout: &Tensor3) -> Tensor3 {
        let data = post
            .data
            .iter()
            .zip(&gout.data)
            .map(|(&a, &g)| if a > 0.0 { g } else { 0.0 })
            .collect();
        Tensor3 {
            c: post.c,
            h: post.h,
            w: post.w,
            data,
        }
    }

    /// Maximum value with its first-occurrence (row-major) location, per
    /// channel.
    pub fn channel_max(&self, c: usize) -> (f64, (usize, usize)) {
        let plane = &self.data[c * self.h * self.w..(c + 1) * self.h * self.w];
        let mut best = (f64::NEG_INFINITY, (0usize, 0usize));
        for (i, &v) in plane.iter().enumerate() {
            if v > best.0 {
                best = (v, (i / self.w, i % self.w));
            }
        }
        best
    }
}

/// One convolution layer. Weights are `[out_c][in_c][ky][kx]` row-major,
/// padding fixed at k/2 so strided outputs have ceil(in/stride) extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output extent for one spatial dimension.
pub fn conv_out_dim(input: usize, k: usize, stride: usize) -> usize {
    (input + 2 * (k / 2) - k) / stride + 1
}

impl ConvLayer {
    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize) -> Self {
        ConvLayer {
            in_c,
            out_c,
            k,
            stride,
            weights: vec![0.0; out_c * in_c * k * k],
            bias: vec![0.0; out_c],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel size {} must be odd",
                self.k
            )));
        }
        if self.stride == 0 || self.in_c == 0 || self.out_c == 0 {
            return Err(Error::InvalidConfig(
                "convolution dims must be positive".into(),
            ));
        }
        if self.weights.len() != self.out_c * self.in_c * self.k * self.k
            || self.bias.len() != self.out_c
        {
            return Err(Error::InvalidConfig("weight buffer shape mismatch".into()));
        }
        Ok(())
    }

    /// Output columns whose input column `ox*stride + kx - pad` is in range,
    /// as a half-open interval.
    #[inline]
    fn ox_span(&self, ow: usize, kx: usize, in_w: usize) -> (usize, usize) {
        let p = self.k / 2;
        let lo = if kx >= p {
            0
        } else {
            (p - kx).div_ceil(self.stride)
        };
        if in_w + p < kx + 1 {
            return (0, 0);
        }
        let hi = ((in_w - 1 + p - kx) / self.stride + 1).min(ow);
        (lo.min(hi), hi)
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        debug_assert_eq!(x.c, self.in_c);
        let p = self.k / 2;
        let oh = conv_out_dim(x.h, self.k, self.stride);
        let ow = conv_out_dim(x.w, self.k, self.stride);
        let mut out = Tensor3::new(self.out_c, oh, ow);
        for oc in 0..self.out_c {
            for oy in 0..oh {
                let o0 = out.idx(oc, oy, 0);
                out.data[o0..o0 + ow].fill(self.bias[oc]);
                for ic in 0..self.in_c {
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - p as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let x0 = x.idx(ic, iy as usize, 0);
                        let xrow = &x.data[x0..x0 + x.w];
                        for kx in 0..self.k {
                            let w =
                                self.weights[((oc * self.in_c + ic) * self.k + ky) * self.k + kx];
                            let (lo, hi) = self.ox_span(ow, kx, x.w);
                            if lo >= hi {
                                continue;
                            }
                            let base = lo * self.stride + kx - p;
                            let orow = &mut out.data[o0 + lo..o0 + hi];
                            for (j, o) in orow.iter_mut().enumerate() {
                                *o += w * xrow[base + j * self.stride];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulate weight/bias gradients into `gw`/`gb` and return the
    /// gradient with respect to the input.
    pub fn backward(&self, x: &Tensor3, gout: &Tensor3, gw: &mut [f64], gb: &mut [f64]) -> Tensor3 {
        debug_assert_eq!(gw.len(), self.weights.len());
        debug_assert_eq!(gb.len(), self.bias.len());
        let p = self.k / 2;
        let (oh, ow) = (gout.h, gout.w);
        let mut gin = Tensor3::new(x.c, x.h, x.w);
        for oc in 0..self.out_c {
            for oy in 0..oh {
                let g0 = gout.idx(oc, oy, 0);
                let grow = &gout.data[g0..g0 + ow];
                gb[oc] += grow.iter().sum::<f64>();
                for ic in 0..self.in_c {
                    for ky in 0..self.k {
                        let iy = (oy * self.stride + ky) as isize - p as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let x0 = x.idx(ic, iy as usize, 0);
                        let gi0 = gin.idx(ic, iy as usize, 0);
                        for kx in 0..self.k {
                            let widx = ((oc * self.in_c + ic) * self.k + ky) * self.k + kx;
                            let w = self.weights[widx];
                            let (lo, hi) = self.ox_span(ow, kx, x.w);
                            if lo >= hi {
                                continue;
                            }
                            let base = lo * self.stride + kx - p;
                            let mut acc = 0.0;
                            for j in 0..hi - lo {
                                let g = grow[lo + j];
                                let ix = base + j * self.stride;
                                acc += g * x.data[x0 + ix];
                                gin.data[gi0 + ix] += w * g;
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        gin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    #[test]
    fn strided_conv_matches_hand_computation() {
        let mut layer = ConvLayer::zeros(1, 1, 3, 2);
        layer.weights.fill(1.0);
        let mut x = Tensor3::new(1, 3, 3);
        x.data = (1..=9).map(f64::from).collect();
        let out = layer.forward(&x);
        assert_eq!((out.h, out.w), (2, 2));
        // Box sums of the in-range 2x2 corners of the padded 3x3 windows.
        assert_eq!(out.data, vec![12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn output_dims_are_ceil_of_input_over_stride() {
        for input in [1usize, 2, 5, 79, 157, 224, 314, 628] {
            assert_eq!(conv_out_dim(input, 3, 2), input.div_ceil(2), "{input}");
            assert_eq!(conv_out_dim(input, 3, 1), input);
            assert_eq!(conv_out_dim(input, 1, 1), input);
        }
    }

    #[test]
    fn one_by_one_conv_mixes_channels_pointwise() {
        let mut layer = ConvLayer::zeros(2, 1, 1, 1);
        layer.weights = vec![2.0, -1.0];
        layer.bias = vec![0.5];
        let mut x = Tensor3::new(2, 1, 2);
        x.data = vec![1.0, 2.0, 10.0, 20.0];
        let out = layer.forward(&x);
        assert_eq!(out.data, vec![2.0 - 10.0 + 0.5, 4.0 - 20.0 + 0.5]);
    }

    #[test]
    fn channel_max_breaks_ties_at_first_occurrence() {
        let mut t = Tensor3::new(1, 2, 3);
        t.data = vec![1.0, 7.0, 3.0, 7.0, 2.0, 0.0];
        let (v, (r, c)) = t.channel_max(0);
        assert_eq!(v, 7.0);
        assert_eq!((r, c), (0, 1));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = seeded_rng(31);
        let mut layer = ConvLayer::zeros(2, 3, 3, 2);
        for w in &mut layer.weights {
            *w = rng.random_range(-0.5..0.5);
        }
        for b in &mut layer.bias {
            *b = rng.random_range(-0.1..0.1);
        }
        let mut x = Tensor3::new(2, 5, 6);
        for v in &mut x.data {
            *v = rng.random_range(-1.0..1.0);
        }
        // Scalar objective: weighted sum of outputs.
        let mut coef = Tensor3::new(3, 3, 3);
        for v in &mut coef.data {
            *v = rng.random_range(-1.0..1.0);
        }
        let objective = |layer: &ConvLayer, x: &Tensor3| -> f64 {
            layer
                .forward(x)
                .data
                .iter()
                .zip(&coef.data)
                .map(|(o, c)| o * c)
                .sum()
        };

        let mut gw = vec![0.0; layer.weights.len()];
        let mut gb = vec![0.0; layer.bias.len()];
        let gin = layer.backward(&x, &coef, &mut gw, &mut gb);

        let h = 1e-5;
        let check = |analytic: f64, fd: f64, what: &str| {
            let rel = (analytic - fd).abs() / (analytic.abs() + 1e-8);
            assert!(rel < 1e-6, "{what}: analytic {analytic}, fd {fd}");
        };
        for i in 0..layer.weights.len() {
            let mut lp = layer.clone();
            lp.weights[i] += h;
            let mut lm = layer.clone();
            lm.weights[i] -= h;
            check(
                gw[i],
                (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h),
                "w",
            );
        }
        for i in 0..layer.bias.len() {
            let mut lp = layer.clone();
            lp.bias[i] += h;
            let mut lm = layer.clone();
            lm.bias[i] -= h;
            check(
                gb[i],
                (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h),
                "b",
            );
        }
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            check(
                gin.data[i],
                (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h),
                "x",
            );
        }
    }
}
