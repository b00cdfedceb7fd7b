use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::combos::Combination;
use crate::denoiser::{DenoiserArch, TrainConfig};
use crate::diffusion::{SamplerConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::scene::{MineClass, SceneForge};
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::seg::{InstanceConfig, SegTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Counts {
    /// Raw originals per class; they train the diffusion models.
    pub originals_per_class: usize,
    /// Fraction of the segmentation "Original" set that is augmented copies.
    pub augment_fraction: f64,
    /// Images generated per sampler and class.
    pub generated_per_model: usize,
    /// Held-out originals per class for segmentation testing.
    pub test_per_class: usize,
    /// Timed single-image sampler runs after one warm-up.
    pub timing_runs: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Self {
            originals_per_class: 100,
            augment_fraction: 0.5,
            generated_per_model: 200,
            test_per_class: 100,
            timing_runs: 3,
        }
    }
}

impl Counts {
    /// Number of augmented copies added to `n` raw originals.
    pub fn augmented(&self) -> usize {
        let n = self.originals_per_class as f64;
        (n * self.augment_fraction / (1.0 - self.augment_fraction)).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub classes: Vec<MineClass>,
    pub scene: SceneForge,
    pub schedule: ScheduleSpec,
    pub denoiser: DenoiserArch,
    pub diffusion_train: TrainConfig,
    pub ddpm: SamplerConfig,
    pub ddim: SamplerConfig,
    pub counts: Counts,
    pub seg: SegTrainConfig,
    pub instances: InstanceConfig,
    pub metrics: MetricsConfig,
    pub combinations: Vec<Combination>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            classes: vec![MineClass::Conical],
            scene: SceneForge::default(),
            schedule: ScheduleSpec {
                steps: 200,
                beta_start: 5e-4,
                beta_end: 0.1,
                kind: ScheduleKind::Linear,
            },
            denoiser: DenoiserArch::default(),
            diffusion_train: TrainConfig::default(),
            ddpm: SamplerConfig::ddpm(0),
            ddim: SamplerConfig::ddim(50, 0.0, 0),
            counts: Counts::default(),
            seg: SegTrainConfig::default(),
            instances: InstanceConfig::default(),
            metrics: MetricsConfig::default(),
            combinations: Combination::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Small configuration that exercises every stage in seconds.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.out_dir = PathBuf::from("runs/smoke");
        c.counts.originals_per_class = 16;
        c.counts.generated_per_model = 8;
        c.counts.test_per_class = 8;
        c.counts.timing_runs = 1;
        c.schedule.steps = 50;
        c.ddim.steps = 12;
        c.diffusion_train.epochs = 2;
        c.seg.epochs = 2;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.classes.contains(&MineClass::None) {
            return Err(Error::config("classes must list at least one mine class and no `none`"));
        }
        let c = &self.counts;
        if c.originals_per_class == 0 || c.generated_per_model < 2 || c.test_per_class == 0 {
            return Err(Error::config("counts: need >= 1 original, >= 2 generated and >= 1 test image"));
        }
        if !(0.0..1.0).contains(&c.augment_fraction) {
            return Err(Error::config("augment_fraction must lie in [0, 1)"));
        }
        if self.ddpm.kind != SamplerKind::Ddpm || self.ddim.kind != SamplerKind::Ddim {
            return Err(Error::config("ddpm/ddim sampler kinds are swapped"));
        }
        self.denoiser.validate()?;
        if (self.scene.width, self.scene.height) != (self.denoiser.width, self.denoiser.height)
            || (self.scene.width, self.scene.height) != (self.seg.arch.width, self.seg.arch.height)
        {
            return Err(Error::config("scene, denoiser and segmenter resolutions differ"));
        }
        if self.combinations.is_empty() {
            return Err(Error::config("no dataset combinations selected"));
        }
        let schedule = self.schedule.build()?;
        self.ddpm.validate(&schedule)?;
        self.ddim.validate(&schedule)?;
        self.diffusion_train.validate()?;
        self.seg.validate()?;
        Ok(())
    }

    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
