//! Per-pixel mine segmenter: three 3×3 convolutions (1 → C → C → 1) with
//! SiLU between them and a sigmoid on the output.
//!
//! The loss is binary cross-entropy plus focal loss, averaged over pixels
//! and batch. Gradients are taken with respect to the output logit `z`:
//!
//! ```text
//! BCE' = p - y
//! FL'  = -alpha * s * (-gamma * (1 - p_t)^gamma * p_t * ln p_t + (1 - p_t)^(gamma + 1))
//! ```
//!
//! with `s = +1` for `y = 1`, `s = -1` for `y = 0`, and `p_t = sigmoid(s z)`.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{read_params, write_params, ParamHeader};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::nn::{self, Conv, Momentum, Planes};
use crate::seed;

/// Prior foreground probability the output bias starts at.
const PRIOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegArch {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Default for SegArch {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            channels: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// BCE + focal loss of one pixel with logit `z` and label `y`, and its
/// derivative with respect to `z`.
pub fn pixel_loss(z: f64, y: bool, focal: FocalParams) -> (f64, f64) {
    let s = if y { 1.0 } else { -1.0 };
    let log_pt = -softplus(-s * z);
    let pt = nn::sigmoid(s * z);
    let q = 1.0 - pt;
    let bce = -log_pt;
    let fl = -focal.alpha * q.powf(focal.gamma) * log_pt;
    let p = nn::sigmoid(z);
    let d_bce = p - if y { 1.0 } else { 0.0 };
    let d_fl = -focal.alpha * s * (-focal.gamma * q.powf(focal.gamma) * pt * log_pt + q.powf(focal.gamma + 1.0));
    (bce + fl, d_bce + d_fl)
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    conv1: Conv,
    conv2: Conv,
    out: Conv,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    fn new(arch: &SegArch) -> Self {
        let c = arch.channels;
        let conv1 = Conv::new(1, c);
        let conv2 = Conv::new(c, c);
        let out = Conv::new(c, 1);
        let w1 = 0;
        let b1 = conv1.weight_len();
        let w2 = b1 + c;
        let b2 = w2 + conv2.weight_len();
        let w3 = b2 + c;
        let b3 = w3 + out.weight_len();
        Self {
            conv1,
            conv2,
            out,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + 1,
        }
    }
}

struct Activations {
    input: Vec<f64>,
    h1: Vec<f64>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    a2: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub arch: SegArch,
    pub seed: u64,
    pub epochs_trained: u64,
    pub values: Vec<f64>,
}

/// One training example.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image: Image,
    pub mask: Mask,
}

impl SegModel {
    pub fn init(arch: SegArch, seed: u64) -> Self {
        let l = Layout::new(&arch);
        let c = arch.channels;
        let mut rng = seed::rng(seed);
        let mut values = vec![0.0; l.len];
        values[l.w1..l.b1].copy_from_slice(&nn::fan_in_uniform(&mut rng, l.conv1.weight_len(), 9));
        values[l.w2..l.b2].copy_from_slice(&nn::fan_in_uniform(&mut rng, l.conv2.weight_len(), 9 * c));
        values[l.w3..l.b3].copy_from_slice(&nn::fan_in_uniform(&mut rng, l.out.weight_len(), 9 * c));
        values[l.b3] = (PRIOR / (1.0 - PRIOR)).ln();
        Self {
            arch,
            seed,
            epochs_trained: 0,
            values,
        }
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    fn planes(&self) -> Planes {
        Planes::new(self.arch.width, self.arch.height)
    }

    fn forward(&self, img: &Image) -> Result<Activations> {
        img.ensure_shape((self.arch.width, self.arch.height))?;
        let l = Layout::new(&self.arch);
        let g = self.planes();
        let v = &self.values;
        let input = g.pad(img);
        let h1 = l.conv1.forward(g, &input, &v[l.w1..l.b1], &v[l.b1..l.w2]);
        let mut a1: Vec<f64> = h1.iter().map(|&x| nn::silu(x)).collect();
        g.zero_border(&mut a1);
        let h2 = l.conv2.forward(g, &a1, &v[l.w2..l.b2], &v[l.b2..l.w3]);
        let mut a2: Vec<f64> = h2.iter().map(|&x| nn::silu(x)).collect();
        g.zero_border(&mut a2);
        let logits = l.out.forward(g, &a2, &v[l.w3..l.b3], &v[l.b3..l.b3 + 1]);
        Ok(Activations {
            input,
            h1,
            a1,
            h2,
            a2,
            logits,
        })
    }

    /// Per-pixel foreground probability.
    pub fn predict(&self, img: &Image) -> Result<Image> {
        let act = self.forward(img)?;
        Ok(self.planes().unpad(&act.logits).map(nn::sigmoid))
    }

    fn backward(&self, act: &Activations, grad_logits: &[f64], grad: &mut [f64]) {
        let l = Layout::new(&self.arch);
        let g = self.planes();
        let c = self.arch.channels;
        let v = &self.values;

        let (gw3, rest) = grad[l.w3..].split_at_mut(l.out.weight_len());
        let ga2 = l
            .out
            .backward(g, &act.a2, grad_logits, &v[l.w3..l.b3], gw3, &mut rest[..1], true)
            .expect("input gradient");
        let gh2: Vec<f64> = ga2.iter().zip(&act.h2).map(|(g, &h)| g * nn::silu_grad(h)).collect();
        let (gw2, rest) = grad[l.w2..].split_at_mut(l.conv2.weight_len());
        let ga1 = l
            .conv2
            .backward(g, &act.a1, &gh2, &v[l.w2..l.b2], gw2, &mut rest[..c], true)
            .expect("input gradient");
        let gh1: Vec<f64> = ga1.iter().zip(&act.h1).map(|(g, &h)| g * nn::silu_grad(h)).collect();
        let (gw1, rest) = grad[l.w1..].split_at_mut(l.conv1.weight_len());
        l.conv1
            .backward(g, &act.input, &gh1, &v[l.w1..l.b1], gw1, &mut rest[..c], false);
    }

    fn sample_loss(&self, s: &SegSample, focal: FocalParams, scale: f64, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        s.mask.ensure_shape((self.arch.width, self.arch.height))?;
        let act = self.forward(&s.image)?;
        let g = self.planes();
        let stride = g.stride();
        let mut grad_logits = vec![0.0; g.plane_len()];
        let mut loss = 0.0;
        for y in 0..self.arch.height {
            for x in 0..self.arch.width {
                let i = (y + 1) * stride + x + 1;
                let (li, di) = pixel_loss(act.logits[i], s.mask.get(x, y), focal);
                loss += li;
                grad_logits[i] = di * scale;
            }
        }
        if !want_grad {
            return Ok((loss, None));
        }
        let mut grad = vec![0.0; self.values.len()];
        self.backward(&act, &grad_logits, &mut grad);
        Ok((loss, Some(grad)))
    }

    /// Mean per-pixel loss over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[SegSample], focal: FocalParams) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let n_total = (batch.len() * self.arch.width * self.arch.height) as f64;
        let per_sample: Vec<Result<(f64, Option<Vec<f64>>)>> = batch
            .par_iter()
            .map(|s| self.sample_loss(s, focal, 1.0 / n_total, true))
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.values.len()];
        for r in per_sample {
            let (l, gs) = r?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&gs.expect("gradient")) {
                *a += b;
            }
        }
        Ok((loss / n_total, grad))
    }

    pub fn loss(&self, batch: &[SegSample], focal: FocalParams) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let n_total = (batch.len() * self.arch.width * self.arch.height) as f64;
        let losses: Result<Vec<f64>> = batch
            .par_iter()
            .map(|s| self.sample_loss(s, focal, 1.0, false).map(|r| r.0))
            .collect();
        Ok(losses?.iter().sum::<f64>() / n_total)
    }

    /// Fraction of pixels where `p > 0.5` agrees with the mask.
    pub fn pixel_accuracy(&self, sample: &SegSample) -> Result<f64> {
        let p = self.predict(&sample.image)?;
        let hits = p
            .pixels()
            .iter()
            .zip(sample.mask.bits())
            .filter(|(&p, &m)| (p > 0.5) == m)
            .count();
        Ok(hits as f64 / p.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ParamHeader {
            kind: "segmenter".into(),
            arch: serde_json::to_value(self.arch)?,
            seed: self.seed,
            steps_trained: self.epochs_trained,
            param_count: self.values.len(),
        };
        write_params(path, &header, &self.values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, values) = read_params(path, "segmenter")?;
        let arch: SegArch = serde_json::from_value(header.arch)?;
        if Layout::new(&arch).len != values.len() {
            return Err(Error::format("parameter file", "parameter count does not match architecture"));
        }
        Ok(Self {
            arch,
            seed: header.seed,
            epochs_trained: header.steps_trained,
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegTrainConfig {
    pub arch: SegArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub focal: FocalParams,
    pub seed: u64,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            arch: SegArch::default(),
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.05,
            momentum: 0.9,
            focal: FocalParams::default(),
            seed: 0,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("segmenter: batch_size >= 1, learning_rate > 0, momentum in [0, 1) required"));
        }
        if self.arch.channels == 0 || self.arch.width == 0 || self.arch.height == 0 {
            return Err(Error::config("segmenter: empty architecture"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegTrainReport {
    pub steps: u64,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
}

impl SegTrainReport {
    pub fn relative_decrease(&self) -> f64 {
        1.0 - self.final_probe_loss / self.initial_probe_loss
    }
}

/// Mini-batch momentum SGD from a fresh initialization.
///
/// Each epoch visits every sample once in a reshuffled order; the last batch
/// of an epoch may be short. The probe set is the first `min(n, 16)`
/// samples. Training aborts when the loss stops being finite or exceeds ten
/// times the initial probe loss.
pub fn train_seg(samples: &[SegSample], config: &SegTrainConfig) -> Result<(SegModel, SegTrainReport)> {
    if samples.is_empty() {
        return Err(Error::config("cannot train the segmenter on an empty dataset"));
    }
    config.validate()?;
    let mut model = SegModel::init(config.arch, seed::derive(config.seed, 0));
    let probe = &samples[..samples.len().min(16)];
    let initial = model.loss(probe, config.focal)?;
    let limit = 10.0 * initial.max(1e-12);

    let mut rng = seed::rng(seed::derive(config.seed, 1));
    let mut opt = Momentum::new(config.learning_rate, config.momentum, model.values.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<SegSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grad) = model.loss_and_grad(&batch, config.focal)?;
            step += 1;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "segmenter training",
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
            opt.step(&mut model.values, &grad);
        }
        model.epochs_trained += 1;
    }
    let final_loss = model.loss(probe, config.focal)?;
    log::debug!("segmenter: {step} steps, probe loss {initial:.4} -> {final_loss:.4}");
    Ok((
        model,
        SegTrainReport {
            steps: step,
            initial_probe_loss: initial,
            final_probe_loss: final_loss,
        },
    ))
}
