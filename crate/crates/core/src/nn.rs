//! Small building blocks for the two convolutional networks.
//!
//! Feature maps are stored as zero-bordered planes of `(w + 2b) * (h + 2b)`
//! values, one plane per channel. With a border `b` at least the dilation,
//! a 3×3 "same" convolution tap is a single shifted multiply-add over one
//! contiguous range, which the compiler vectorizes. Border cells of conv
//! outputs are scratch and are zeroed after every layer.

use rand::Rng as _;

use crate::image::Image;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Planes {
    pub w: usize,
    pub h: usize,
    pub border: usize,
}

impl Planes {
    /// Planes with a one-cell border, enough for undilated 3×3 kernels.
    pub fn new(w: usize, h: usize) -> Self {
        Self::with_border(w, h, 1)
    }

    pub fn with_border(w: usize, h: usize, border: usize) -> Self {
        assert!(border >= 1, "border must be at least one cell");
        Self { w, h, border }
    }

    pub fn stride(&self) -> usize {
        self.w + 2 * self.border
    }

    pub fn plane_len(&self) -> usize {
        self.stride() * (self.h + 2 * self.border)
    }

    /// Contiguous index range covering every interior cell.
    fn interior(&self) -> std::ops::Range<usize> {
        let (s, b) = (self.stride(), self.border);
        b * s + b..(self.h + b - 1) * s + b + self.w
    }

    fn offset(&self, tap: usize, dilation: usize) -> isize {
        let d = dilation as isize;
        let (ky, kx) = ((tap / 3) as isize - 1, (tap % 3) as isize - 1);
        d * (ky * self.stride() as isize + kx)
    }

    fn index(&self, x: usize, y: usize) -> usize {
        (y + self.border) * self.stride() + x + self.border
    }

    pub fn pad(&self, img: &Image) -> Vec<f64> {
        let mut out = vec![0.0; self.plane_len()];
        for y in 0..self.h {
            let i = self.index(0, y);
            out[i..i + self.w].copy_from_slice(&img.pixels()[y * self.w..(y + 1) * self.w]);
        }
        out
    }

    pub fn unpad(&self, plane: &[f64]) -> Image {
        Image::from_fn(self.w, self.h, |x, y| plane[self.index(x, y)])
    }

    /// Zero the border cells of every plane in `buf`.
    pub fn zero_border(&self, buf: &mut [f64]) {
        let (s, b) = (self.stride(), self.border);
        for plane in buf.chunks_exact_mut(self.plane_len()) {
            plane[..b * s].fill(0.0);
            plane[(self.h + b) * s..].fill(0.0);
            for y in b..self.h + b {
                plane[y * s..y * s + b].fill(0.0);
                plane[y * s + b + self.w..(y + 1) * s].fill(0.0);
            }
        }
    }

    /// Sum of interior cells of one plane (border assumed zero).
    pub fn plane_sum(&self, plane: &[f64]) -> f64 {
        plane.iter().sum()
    }
}

/// Shape of one 3×3 convolution; weights are `[cout][cin][3][3]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    /// Spacing between kernel taps; must not exceed the plane border.
    pub dilation: usize,
}

impl Conv {
    pub fn new(cin: usize, cout: usize) -> Self {
        Self::dilated(cin, cout, 1)
    }

    pub fn dilated(cin: usize, cout: usize, dilation: usize) -> Self {
        assert!(dilation >= 1, "dilation must be at least 1");
        Self { cin, cout, dilation }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * 9
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.cout
    }

    /// `out[co] = bias[co] + sum_ci w[co][ci] * in[ci]`.
    pub fn forward(&self, g: Planes, input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
        debug_assert!(self.dilation <= g.border);
        let pl = g.plane_len();
        let range = g.interior();
        let mut out = vec![0.0; self.cout * pl];
        for co in 0..self.cout {
            let dst = &mut out[co * pl..(co + 1) * pl];
            dst[range.clone()].fill(bias[co]);
            for ci in 0..self.cin {
                let src = &input[ci * pl..(ci + 1) * pl];
                for tap in 0..9 {
                    let wv = weights[(co * self.cin + ci) * 9 + tap];
                    let off = g.offset(tap, self.dilation);
                    let lo = (range.start as isize + off) as usize;
                    let shifted = &src[lo..lo + range.len()];
                    for (d, s) in dst[range.clone()].iter_mut().zip(shifted) {
                        *d += wv * s;
                    }
                }
            }
        }
        g.zero_border(&mut out);
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when `want_input` is set. `grad_out` must have zero borders.
    pub fn backward(
        &self,
        g: Planes,
        input: &[f64],
        grad_out: &[f64],
        weights: &[f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let pl = g.plane_len();
        let range = g.interior();
        let mut grad_in = want_input.then(|| vec![0.0; self.cin * pl]);
        for co in 0..self.cout {
            let go = &grad_out[co * pl..(co + 1) * pl];
            grad_b[co] += g.plane_sum(go);
            let go = &go[range.clone()];
            for ci in 0..self.cin {
                let src = &input[ci * pl..(ci + 1) * pl];
                for tap in 0..9 {
                    let idx = (co * self.cin + ci) * 9 + tap;
                    let off = g.offset(tap, self.dilation);
                    let lo = (range.start as isize + off) as usize;
                    let shifted = &src[lo..lo + range.len()];
                    grad_w[idx] += go.iter().zip(shifted).map(|(a, b)| a * b).sum::<f64>();
                    if let Some(gi) = grad_in.as_mut() {
                        let wv = weights[idx];
                        let dst = &mut gi[ci * pl + lo..ci * pl + lo + range.len()];
                        for (d, s) in dst.iter_mut().zip(go) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            g.zero_border(gi);
        }
        grad_in
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of an integer step: `[sin(t w_0), cos(t w_0), ...]`
/// with `w_i = 10000^(-2i/dim)`. An odd `dim` ends with a lone sine.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim + 1);
    for i in 0..dim.div_ceil(2) {
        let freq = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out.truncate(dim);
    out
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` values.
pub fn fan_in_uniform(rng: &mut seed::Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Heavy-ball momentum SGD with a fixed learning rate.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64, n: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}
