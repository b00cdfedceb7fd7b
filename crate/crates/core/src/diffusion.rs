//! Forward noising process and the DDPM / DDIM reverse samplers.
//!
//! Every reverse update is affine in the current state, the predicted noise
//! and a fresh Gaussian draw:
//!
//! ```text
//! x_prev = x_coef * x_t + eps_coef * eps_hat + noise_std * z
//! ```
//!
//! Both samplers are expressed through [`StepCoefficients`], which is what
//! makes the DDIM(eta = 1, S = T) / DDPM equivalence directly checkable.
//! Intermediate states are never clamped; the final image is clamped to
//! `[0, 1]` once.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::orr::HighlightDetector;
use crate::scene::{Dataset, LabeledImage, MineClass, Provenance};
use crate::schedule::NoiseSchedule;
use crate::seed;

/// One step of the Markov chain: `sqrt(1 - beta_t) x_prev + sqrt(beta_t) eps`.
pub fn forward_step(x_prev: &Image, t: usize, eps: &Image, schedule: &NoiseSchedule) -> Result<Image> {
    schedule.check_t(t)?;
    eps.ensure_shape(x_prev.shape())?;
    let beta = schedule.beta(t);
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    combine(x_prev, a, eps, b)
}

/// Closed form: `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_closed(x0: &Image, t: usize, eps: &Image, schedule: &NoiseSchedule) -> Result<Image> {
    schedule.check_t(t)?;
    eps.ensure_shape(x0.shape())?;
    let ab = schedule.alpha_bar(t);
    combine(x0, ab.sqrt(), eps, (1.0 - ab).sqrt())
}

fn combine(x: &Image, a: f64, y: &Image, b: f64) -> Result<Image> {
    let data = x.pixels().iter().zip(y.pixels()).map(|(p, q)| a * p + b * q).collect();
    Image::new(x.width(), x.height(), data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub x_coef: f64,
    pub eps_coef: f64,
    pub noise_std: f64,
}

/// DDPM update from `t` to `t - 1` with posterior variance `beta_tilde_t`.
/// At `t = 1`, `beta_tilde` is exactly zero, so no noise is added.
pub fn ddpm_coefficients(schedule: &NoiseSchedule, t: usize) -> StepCoefficients {
    let alpha = schedule.alpha(t);
    let beta = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    StepCoefficients {
        x_coef: 1.0 / alpha.sqrt(),
        eps_coef: -beta / (alpha.sqrt() * (1.0 - ab).sqrt()),
        noise_std: schedule.posterior_variance(t).max(0.0).sqrt(),
    }
}

/// DDIM update from `t` to `t_prev` (`t_prev = 0` for the final step).
pub fn ddim_coefficients(schedule: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> StepCoefficients {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
    let mut dir = 1.0 - ab_prev - sigma * sigma;
    if dir < 0.0 {
        log::warn!("DDIM step {t}->{t_prev}: clamping negative direction variance {dir:e} to 0");
        dir = 0.0;
    }
    let x0_scale = ab_prev.sqrt() / ab.sqrt();
    StepCoefficients {
        x_coef: x0_scale,
        eps_coef: -x0_scale * (1.0 - ab).sqrt() + dir.sqrt(),
        noise_std: sigma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplerKind {
    #[serde(rename = "DDPM")]
    Ddpm,
    #[serde(rename = "DDIM")]
    Ddim,
}

impl SamplerKind {
    pub fn provenance(self) -> Provenance {
        match self {
            SamplerKind::Ddpm => Provenance::Ddpm,
            SamplerKind::Ddim => Provenance::Ddim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Number of reverse steps; ignored by DDPM, which always walks all `T`.
    pub steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn ddpm(seed: u64) -> Self {
        Self {
            kind: SamplerKind::Ddpm,
            steps: 0,
            eta: 1.0,
            seed,
        }
    }

    pub fn ddim(steps: usize, eta: f64, seed: u64) -> Self {
        Self {
            kind: SamplerKind::Ddim,
            steps,
            eta,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Denoiser evaluations per generated image.
    pub fn evaluations(&self, schedule: &NoiseSchedule) -> usize {
        match self.kind {
            SamplerKind::Ddpm => schedule.len(),
            SamplerKind::Ddim => self.steps,
        }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.kind == SamplerKind::Ddim && (self.steps == 0 || self.steps > schedule.len()) {
            return Err(Error::config(format!(
                "DDIM steps {} outside 1..={}",
                self.steps,
                schedule.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }

    /// `(t, coefficients)` for every reverse step in execution order.
    pub fn plan(&self, schedule: &NoiseSchedule) -> Result<Vec<(usize, StepCoefficients)>> {
        self.validate(schedule)?;
        Ok(match self.kind {
            SamplerKind::Ddpm => (1..=schedule.len())
                .rev()
                .map(|t| (t, ddpm_coefficients(schedule, t)))
                .collect(),
            SamplerKind::Ddim => {
                let seq = schedule.subsequence(self.steps)?;
                (0..seq.len())
                    .rev()
                    .map(|i| {
                        let t_prev = if i == 0 { 0 } else { seq[i - 1] };
                        (seq[i], ddim_coefficients(schedule, seq[i], t_prev, self.eta))
                    })
                    .collect()
            }
        })
    }
}

/// Wraps a predictor and counts its evaluations.
pub struct CountingPredictor<'a, M: ?Sized> {
    inner: &'a M,
    count: AtomicUsize,
}

impl<'a, M: NoisePredictor + ?Sized> CountingPredictor<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<M: NoisePredictor + ?Sized> NoisePredictor for CountingPredictor<'_, M> {
    fn predict_noise(&self, x_t: &Image, t: usize) -> Result<Image> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_noise(x_t, t)
    }
}

/// Standard normal image of the model's resolution.
pub fn gaussian_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = seed::rng(seed);
    Image::new(width, height, seed::normals(&mut rng, width * height)).expect("shape")
}

/// Run a reverse chain from `x_start`, drawing `z` from `z_seed`'s stream.
/// `observer` sees every intermediate `(t, x_t)`, starting with the input.
pub fn reverse_chain<M: NoisePredictor + ?Sized>(
    model: &M,
    plan: &[(usize, StepCoefficients)],
    x_start: Image,
    z_seed: u64,
    mut observer: Option<&mut dyn FnMut(usize, &Image)>,
) -> Result<Image> {
    let mut z_rng = seed::rng(z_seed);
    let mut x = x_start;
    let n = x.len();
    for &(t, c) in plan {
        if let Some(obs) = observer.as_mut() {
            obs(t, &x);
        }
        let eps = model.predict_noise(&x, t)?;
        eps.ensure_shape(x.shape())?;
        let z = (c.noise_std > 0.0).then(|| seed::normals(&mut z_rng, n));
        let px = x.pixels_mut();
        for (i, (v, e)) in px.iter_mut().zip(eps.pixels()).enumerate() {
            let mut next = c.x_coef * *v + c.eps_coef * e;
            if let Some(z) = &z {
                next += c.noise_std * z[i];
            }
            *v = next;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite {
                stage: "reverse sampling",
                step: t,
            });
        }
    }
    if let Some(obs) = observer.as_mut() {
        obs(0, &x);
    }
    Ok(x.clamped())
}

/// Full-length ancestral DDPM sampling from `x_T ~ N(0, I)`.
pub fn sample_ddpm<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    seed: u64,
) -> Result<Image> {
    sample(model, schedule, shape, &SamplerConfig::ddpm(seed))
}

pub fn sample_ddim<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    config: &SamplerConfig,
) -> Result<Image> {
    if config.kind != SamplerKind::Ddim {
        return Err(Error::config("sample_ddim needs a DDIM sampler config"));
    }
    sample(model, schedule, shape, config)
}

/// Sample one image. `x_T` comes from stream 0 of `config.seed`, the
/// per-step noise from stream 1.
pub fn sample<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    (w, h): (usize, usize),
    config: &SamplerConfig,
) -> Result<Image> {
    let plan = config.plan(schedule)?;
    let x_t = gaussian_image(w, h, seed::derive(config.seed, 0));
    reverse_chain(model, &plan, x_t, seed::derive(config.seed, 1), None)
}

/// Like [`sample`], recording every intermediate state.
pub fn sample_with_trajectory<M: NoisePredictor + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    (w, h): (usize, usize),
    config: &SamplerConfig,
) -> Result<(Image, Vec<(usize, Image)>)> {
    let plan = config.plan(schedule)?;
    let x_t = gaussian_image(w, h, seed::derive(config.seed, 0));
    let mut traj = Vec::with_capacity(plan.len() + 1);
    let mut obs = |t: usize, x: &Image| traj.push((t, x.clone()));
    let out = reverse_chain(model, &plan, x_t, seed::derive(config.seed, 1), Some(&mut obs))?;
    Ok((out, traj))
}

/// Generate `n` images; image `i` uses sampler seed `derive(config.seed, i)`.
/// Each image is labelled by `annotator`: the detected highlight becomes the
/// mask and the image takes `class`, or `MineClass::None` if nothing is found.
pub fn generate_set<M: NoisePredictor + Sync + ?Sized>(
    model: &M,
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    config: &SamplerConfig,
    n: usize,
    class: MineClass,
    annotator: &HighlightDetector,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("generate_set needs n >= 1"));
    }
    config.validate(schedule)?;
    let items: Result<Vec<LabeledImage>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive(config.seed, i as u64);
            let pixels = sample(model, schedule, shape, &config.with_seed(s))?;
            let mask = annotator.annotate(&pixels);
            let class = if mask.is_empty() { MineClass::None } else { class };
            Ok(LabeledImage {
                pixels,
                mask,
                class,
                provenance: config.kind.provenance(),
                seed: s,
            })
        })
        .collect();
    Ok(Dataset {
        seed: config.seed,
        items: items?,
    })
}
