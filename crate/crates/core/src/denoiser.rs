//! Time-conditioned noise predictor `eps(x_t, t)`.
//!
//! Two hidden 3×3 convolutions with SiLU activations, each shifted per
//! channel by a linear projection of a sinusoidal step embedding, and a 3×3
//! output convolution back to one channel. The convolutions may be dilated to
//! widen the receptive field at no parameter cost; by default they are not.
//! The output layer starts at zero, so a fresh network predicts zero noise
//! everywhere.
//!
//! With `data_stats = Some(DataStats { mean: m, std: d })` the network only
//! learns a residual. Writing `a = alpha_bar_t` and `v = 1 - a`, the
//! prediction becomes
//!
//! ```text
//! eps = sqrt(v) / (a d^2 + v) * (x_t - sqrt(a) m) + sqrt(a d^2 / (a d^2 + v)) * F(x_t, t)
//! ```
//!
//! The first term is `E[eps | x_t]` for independent pixels with mean `m` and
//! deviation `d`. The second factor is the deviation of what that term
//! leaves unexplained, so `F` has a target of unit scale at every step. An
//! additive step embedding cannot produce a gain that changes by a factor of
//! tens across steps, so a bare network cannot fit near-constant data at
//! small `t`.
//!
//! Training minimizes the mean squared error between injected and predicted
//! noise with momentum SGD.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::forward_closed;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, Conv, Momentum, Planes};
use crate::schedule::NoiseSchedule;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub embed_dim: usize,
    /// Tap spacing of the two hidden convolutions and the output one.
    #[serde(default = "default_dilations")]
    pub dilations: [usize; 3],
    /// Pixel statistics for the residual form; `None` uses the bare
    /// network output.
    #[serde(default)]
    pub data_stats: Option<DataStats>,
}

/// Per-pixel mean and deviation of the training images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub mean: f64,
    pub std: f64,
}

impl DataStats {
    /// Pooled statistics over every pixel of `images`.
    pub fn of(images: &[Image]) -> Result<Self> {
        let n: usize = images.iter().map(|i| i.pixels().len()).sum();
        if n == 0 {
            return Err(Error::config("no pixels to summarize"));
        }
        let all = || images.iter().flat_map(|i| i.pixels().iter().copied());
        let mean = all().sum::<f64>() / n as f64;
        let var = all().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Ok(Self { mean, std: var.sqrt() })
    }
}

fn default_dilations() -> [usize; 3] {
    [1, 1, 1]
}

impl DenoiserArch {
    /// Side of the square window of input pixels that one output sees.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 || self.embed_dim == 0 {
            return Err(Error::config("denoiser sizes must be positive"));
        }
        if self.dilations.contains(&0) {
            return Err(Error::config("denoiser dilations must be at least 1"));
        }
        if self
            .data_stats
            .is_some_and(|d| !(d.std > 0.0 && d.std.is_finite() && d.mean.is_finite()))
        {
            return Err(Error::config("denoiser data deviation must be positive"));
        }
        Ok(())
    }
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            channels: 8,
            embed_dim: 16,
            dilations: default_dilations(),
            data_stats: None,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    conv1: Conv,
    conv2: Conv,
    out: Conv,
    w1: usize,
    b1: usize,
    p1: usize,
    w2: usize,
    b2: usize,
    p2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(arch: &DenoiserArch) -> Self {
        let c = arch.channels;
        let e = arch.embed_dim;
        let [d1, d2, d3] = arch.dilations;
        let conv1 = Conv::dilated(1, c, d1);
        let conv2 = Conv::dilated(c, c, d2);
        let out = Conv::dilated(c, 1, d3);
        let w1 = 0;
        let b1 = w1 + conv1.weight_len();
        let p1 = b1 + c;
        let w2 = p1 + c * e;
        let b2 = w2 + conv2.weight_len();
        let p2 = b2 + c;
        let w3 = p2 + c * e;
        let b3 = w3 + out.weight_len();
        Self {
            conv1,
            conv2,
            out,
            w1,
            b1,
            p1,
            w2,
            b2,
            p2,
            w3,
            b3,
            len: b3 + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub arch: DenoiserArch,
    pub seed: u64,
    pub steps_trained: u64,
    pub values: Vec<f64>,
}

/// Anything that predicts the injected noise from a noisy image and step.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Image, t: usize) -> Result<Image>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&Image, usize) -> Result<Image>,
{
    fn predict_noise(&self, x_t: &Image, t: usize) -> Result<Image> {
        self(x_t, t)
    }
}

struct Activations {
    input: Vec<f64>,
    embed: Vec<f64>,
    h1: Vec<f64>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

/// One training example: clean image, injected noise and step.
#[derive(Debug, Clone)]
pub struct NoisedSample {
    pub x0: Image,
    pub eps: Image,
    pub t: usize,
}

impl DenoiserParams {
    /// Seeded fan-in uniform weights, zero biases, zero output layer.
    pub fn init(arch: DenoiserArch, seed: u64) -> Self {
        let l = Layout::new(&arch);
        let c = arch.channels;
        let mut rng = seed::rng(seed);
        let mut values = vec![0.0; l.len];
        values[l.w1..l.b1].copy_from_slice(&nn::fan_in_uniform(&mut rng, l.conv1.weight_len(), 9));
        values[l.p1..l.w2].copy_from_slice(&nn::fan_in_uniform(&mut rng, c * arch.embed_dim, arch.embed_dim));
        values[l.w2..l.b2].copy_from_slice(&nn::fan_in_uniform(&mut rng, l.conv2.weight_len(), 9 * c));
        values[l.p2..l.w3].copy_from_slice(&nn::fan_in_uniform(&mut rng, c * arch.embed_dim, arch.embed_dim));
        Self {
            arch,
            seed,
            steps_trained: 0,
            values,
        }
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    fn planes(&self) -> Planes {
        let border = self.arch.dilations.iter().copied().max().unwrap_or(1);
        Planes::with_border(self.arch.width, self.arch.height, border)
    }

    fn forward(&self, x_t: &Image, t: usize) -> Result<Activations> {
        x_t.ensure_shape((self.arch.width, self.arch.height))?;
        let l = Layout::new(&self.arch);
        let g = self.planes();
        let (c, e) = (self.arch.channels, self.arch.embed_dim);
        let v = &self.values;
        let embed = nn::time_embedding(t, e);
        let shift = |p: usize| -> Vec<f64> {
            (0..c)
                .map(|ch| (0..e).map(|j| v[p + ch * e + j] * embed[j]).sum())
                .collect()
        };
        let (s1, s2) = (shift(l.p1), shift(l.p2));
        let bias1: Vec<f64> = (0..c).map(|ch| v[l.b1 + ch] + s1[ch]).collect();
        let bias2: Vec<f64> = (0..c).map(|ch| v[l.b2 + ch] + s2[ch]).collect();

        let input = g.pad(x_t);
        let h1 = l.conv1.forward(g, &input, &v[l.w1..l.b1], &bias1);
        let mut a1: Vec<f64> = h1.iter().map(|&x| nn::silu(x)).collect();
        g.zero_border(&mut a1);
        let h2 = l.conv2.forward(g, &a1, &v[l.w2..l.b2], &bias2);
        let mut a2: Vec<f64> = h2.iter().map(|&x| nn::silu(x)).collect();
        g.zero_border(&mut a2);
        let out = l.out.forward(g, &a2, &v[l.w3..l.b3], &v[l.b3..l.b3 + 1]);
        Ok(Activations {
            input,
            embed,
            h1,
            a1,
            h2,
            a2,
            out,
        })
    }

    /// Predicted noise. `t` must lie in `1..=T` of `schedule`.
    pub fn predict_eps(&self, x_t: &Image, t: usize, schedule: &NoiseSchedule) -> Result<Image> {
        let res = residual(&self.arch, schedule, t)?;
        let act = self.forward(x_t, t)?;
        let mut eps = self.planes().unpad(&act.out);
        if let Some(r) = res {
            for (e, x) in eps.pixels_mut().iter_mut().zip(x_t.pixels()) {
                *e = r.apply(*x, *e);
            }
        }
        Ok(eps)
    }

    /// These parameters paired with the schedule they predict noise for.
    pub fn with_schedule<'a>(&'a self, schedule: &'a NoiseSchedule) -> Denoiser<'a> {
        Denoiser {
            params: self,
            schedule,
        }
    }

    /// Accumulate `d loss / d params` for one sample, where `grad_out` is the
    /// loss gradient with respect to the (padded) output plane.
    fn backward(&self, act: &Activations, grad_out: &[f64], grad: &mut [f64]) {
        let l = Layout::new(&self.arch);
        let g = self.planes();
        let (c, e) = (self.arch.channels, self.arch.embed_dim);
        let v = &self.values;
        let pl = g.plane_len();

        let (gw3, rest) = grad[l.w3..].split_at_mut(l.out.weight_len());
        let ga2 = l
            .out
            .backward(g, &act.a2, grad_out, &v[l.w3..l.b3], gw3, &mut rest[..1], true)
            .expect("input gradient");
        let gh2: Vec<f64> = ga2.iter().zip(&act.h2).map(|(g, &h)| g * nn::silu_grad(h)).collect();
        for ch in 0..c {
            let s = g.plane_sum(&gh2[ch * pl..(ch + 1) * pl]);
            for j in 0..e {
                grad[l.p2 + ch * e + j] += s * act.embed[j];
            }
        }
        let (gw2, rest) = grad[l.w2..].split_at_mut(l.conv2.weight_len());
        let ga1 = l
            .conv2
            .backward(g, &act.a1, &gh2, &v[l.w2..l.b2], gw2, &mut rest[..c], true)
            .expect("input gradient");
        let gh1: Vec<f64> = ga1.iter().zip(&act.h1).map(|(g, &h)| g * nn::silu_grad(h)).collect();
        for ch in 0..c {
            let s = g.plane_sum(&gh1[ch * pl..(ch + 1) * pl]);
            for j in 0..e {
                grad[l.p1 + ch * e + j] += s * act.embed[j];
            }
        }
        let (gw1, rest) = grad[l.w1..].split_at_mut(l.conv1.weight_len());
        l.conv1
            .backward(g, &act.input, &gh1, &v[l.w1..l.b1], gw1, &mut rest[..c], false);
    }

    /// Mean squared noise-prediction error over batch and pixels, and its
    /// gradient. Each `x_t` is formed from `(x0, eps, t)` by the closed-form
    /// forward process.
    pub fn loss_and_grad(&self, batch: &[NoisedSample], schedule: &NoiseSchedule) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let g = self.planes();
        let n_total = (batch.len() * self.arch.width * self.arch.height) as f64;
        let per_sample: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_iter()
            .map(|s| {
                let res = residual(&self.arch, schedule, s.t)?;
                let x_t = forward_closed(&s.x0, s.t, &s.eps, schedule)?;
                let act = self.forward(&x_t, s.t)?;
                let target = g.pad(&s.eps);
                let r = res.unwrap_or(Residual::BARE);
                let x_pad = g.pad(&x_t);
                let mut grad_out: Vec<f64> = act
                    .out
                    .iter()
                    .zip(&x_pad)
                    .zip(&target)
                    .map(|((o, x), e)| r.apply(*x, *o) - e)
                    .collect();
                g.zero_border(&mut grad_out);
                let sq: f64 = grad_out.iter().map(|d| d * d).sum();
                for d in &mut grad_out {
                    *d *= 2.0 * r.out / n_total;
                }
                let mut grad = vec![0.0; self.values.len()];
                self.backward(&act, &grad_out, &mut grad);
                Ok((sq, grad))
            })
            .collect();
        // Fixed-order reduction keeps results independent of thread count.
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.values.len()];
        for r in per_sample {
            let (sq, gs) = r?;
            loss += sq;
            for (a, b) in grad.iter_mut().zip(&gs) {
                *a += b;
            }
        }
        Ok((loss / n_total, grad))
    }

    pub fn loss(&self, batch: &[NoisedSample], schedule: &NoiseSchedule) -> Result<f64> {
        let n_total = (batch.len() * self.arch.width * self.arch.height) as f64;
        let sq: Result<Vec<f64>> = batch
            .par_iter()
            .map(|s| {
                let x_t = forward_closed(&s.x0, s.t, &s.eps, schedule)?;
                let pred = self.predict_eps(&x_t, s.t, schedule)?;
                Ok(pred
                    .pixels()
                    .iter()
                    .zip(s.eps.pixels())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum())
            })
            .collect();
        Ok(sq?.iter().sum::<f64>() / n_total)
    }

    /// Single-file format: one JSON header line, then the parameters as
    /// little-endian `f32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ParamHeader {
            kind: "denoiser".into(),
            arch: serde_json::to_value(self.arch)?,
            seed: self.seed,
            steps_trained: self.steps_trained,
            param_count: self.values.len(),
        };
        write_params(path, &header, &self.values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, values) = read_params(path, "denoiser")?;
        let arch: DenoiserArch = serde_json::from_value(header.arch)?;
        arch.validate()?;
        if Layout::new(&arch).len != values.len() {
            return Err(Error::format("denoiser", "parameter count does not match architecture"));
        }
        Ok(Self {
            arch,
            seed: header.seed,
            steps_trained: header.steps_trained,
            values,
        })
    }
}

/// Per-step coefficients of the residual form; see the module docs.
#[derive(Debug, Clone, Copy)]
struct Residual {
    skip: f64,
    shift: f64,
    out: f64,
}

impl Residual {
    const BARE: Self = Self {
        skip: 0.0,
        shift: 0.0,
        out: 1.0,
    };

    fn apply(&self, x: f64, net: f64) -> f64 {
        self.skip * (x - self.shift) + self.out * net
    }
}

fn residual(arch: &DenoiserArch, schedule: &NoiseSchedule, t: usize) -> Result<Option<Residual>> {
    schedule.check_t(t)?;
    Ok(arch.data_stats.map(|DataStats { mean, std }| {
        let a = schedule.alpha_bar(t);
        let v = 1.0 - a;
        let signal = a * std * std;
        Residual {
            skip: v.sqrt() / (signal + v),
            shift: a.sqrt() * mean,
            out: (signal / (signal + v)).sqrt(),
        }
    }))
}

/// Trained parameters bound to their noise schedule; the form the samplers
/// consume.
#[derive(Debug, Clone, Copy)]
pub struct Denoiser<'a> {
    pub params: &'a DenoiserParams,
    pub schedule: &'a NoiseSchedule,
}

impl NoisePredictor for Denoiser<'_> {
    fn predict_noise(&self, x_t: &Image, t: usize) -> Result<Image> {
        self.params.predict_eps(x_t, t, self.schedule)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ParamHeader {
    pub kind: String,
    pub arch: serde_json::Value,
    pub seed: u64,
    pub steps_trained: u64,
    pub param_count: usize,
}

pub(crate) fn write_params(path: &Path, header: &ParamHeader, values: &[f64]) -> Result<()> {
    let mut buf = serde_json::to_vec(header)?;
    buf.push(b'\n');
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_params(path: &Path, kind: &str) -> Result<(ParamHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("parameter file", "missing header line"))?;
    let header: ParamHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.kind != kind {
        return Err(Error::format("parameter file", format!("expected {kind}, found {}", header.kind)));
    }
    let body = &bytes[nl + 1..];
    if body.len() != header.param_count * 4 {
        return Err(Error::format("parameter file", "body length does not match param_count"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config("batch_size must be >= 1 and learning_rate > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
}

/// Draw `(x0, eps, t)` triples for the given image indices.
pub fn noised_batch(images: &[Image], indices: &[usize], schedule: &NoiseSchedule, rng: &mut seed::Rng) -> Vec<NoisedSample> {
    indices
        .iter()
        .map(|&i| {
            let x0 = images[i].clone();
            let t = rng.random_range(1..=schedule.len());
            let eps = Image::new(x0.width(), x0.height(), seed::normals(rng, x0.len())).expect("shape");
            NoisedSample { x0, eps, t }
        })
        .collect()
}

/// Train from a fresh initialization seeded by `config.seed`.
///
/// An epoch is `ceil(n / batch_size)` steps. Each step takes the next
/// `batch_size` indices from a cyclic stream that is reshuffled whenever it
/// wraps, so datasets smaller than a batch still yield full batches.
pub fn train(
    images: &[Image],
    arch: DenoiserArch,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<(DenoiserParams, TrainReport)> {
    let params = DenoiserParams::init(arch, seed::derive(config.seed, 0));
    train_from(params, images, config, schedule)
}

pub fn train_from(
    mut params: DenoiserParams,
    images: &[Image],
    config: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<(DenoiserParams, TrainReport)> {
    if images.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    config.validate()?;
    let mut probe_rng = seed::rng(seed::derive(config.seed, 1));
    let probe_idx: Vec<usize> = (0..16).map(|i| i % images.len()).collect();
    let probe = noised_batch(images, &probe_idx, schedule, &mut probe_rng);
    let initial = params.loss(&probe, schedule)?;

    let mut rng = seed::rng(seed::derive(config.seed, 2));
    let mut opt = Momentum::new(config.learning_rate, config.momentum, params.values.len());
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let steps_per_epoch = images.len().div_ceil(config.batch_size);
    // A zero prediction scores about 1, so ten times that is divergence
    // even when the residual form starts near the optimum.
    let limit = 10.0 * initial.max(1.0);
    let mut step = 0u64;
    for _ in 0..config.epochs {
        for _ in 0..steps_per_epoch {
            let mut idx = Vec::with_capacity(config.batch_size);
            while idx.len() < config.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                idx.push(order[cursor]);
                cursor += 1;
            }
            let batch = noised_batch(images, &idx, schedule, &mut rng);
            let (loss, grad) = params.loss_and_grad(&batch, schedule)?;
            step += 1;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "denoiser training",
                    step: step as usize,
                });
            }
            if loss > limit {
                return Err(Error::Diverged {
                    step: step as usize,
                    loss,
                    limit,
                });
            }
            opt.step(&mut params.values, &grad);
        }
    }
    params.steps_trained += step;
    let final_loss = params.loss(&probe, schedule)?;
    log::debug!("denoiser: {step} steps, probe loss {initial:.4} -> {final_loss:.4}");
    Ok((
        params,
        TrainReport {
            steps: step,
            initial_probe_loss: initial,
            final_probe_loss: final_loss,
        },
    ))
}
