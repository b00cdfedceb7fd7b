//! Synthetic side-scan sonar data, small diffusion generators and a
//! segmentation study of how generated data mixes with original data.
//!
//! The pipeline, module by module:
//!
//! - [`scene`] renders labeled sonar-like scenes with a mine highlight,
//!   acoustic shadow and speckle.
//! - [`schedule`] holds the forward noise schedule.
//! - [`denoiser`] is the time-conditioned noise predictor and its trainer.
//! - [`diffusion`] has the forward process and the DDPM and DDIM samplers.
//! - [`metrics`] scores generated sets (FID, KID, SNR, ORR, timing).
//! - [`seg`] has the per-pixel segmenter and AP/AUPC evaluation.
//! - [`harness`] runs the whole experiment and writes the tables.
//!
//! ```
//! use syn2real::diffusion::{sample, SamplerConfig};
//! use syn2real::image::Image;
//! use syn2real::schedule::linear_schedule;
//!
//! let schedule = linear_schedule(200, 5e-4, 0.1)?;
//! // Any closure can stand in for a trained network.
//! let predictor = |x: &Image, _t: usize| Ok(Image::zeros(x.width(), x.height()));
//! let img = sample(&predictor, &schedule, (32, 32), &SamplerConfig::ddim(50, 0.0, 9))?;
//! assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
//! # Ok::<(), syn2real::Error>(())
//! ```
//!
//! A guide with more worked examples lives in `book/`; its code blocks run
//! as doctests of this crate.

pub mod components;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod scene;
pub mod schedule;
pub mod seed;
pub mod seg;

pub use error::{Error, Result};

// Each chapter becomes a module so a failing snippet names its chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenes.md")]
    mod scenes {}
    #[doc = include_str!("../../../book/src/schedule.md")]
    mod schedule {}
    #[doc = include_str!("../../../book/src/denoiser.md")]
    mod denoiser {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/experiment.md")]
    mod experiment {}
}
