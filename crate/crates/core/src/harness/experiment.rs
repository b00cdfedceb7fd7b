//! End-to-end run: synthesize originals, train a denoiser per class, sample
//! DDPM and DDIM sets, score them, train one segmenter per dataset
//! combination and evaluate each on held-out originals.
//!
//! Seeds of every stage derive from the global seed, so a run is a pure
//! function of its configuration apart from the wall-clock timings.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::claims::{verify_dir, ClaimsReport};
use super::combos::{build_combination, Combination};
use super::config::ExperimentConfig;
use super::tables::{noise_rows, quality_rows, write_csv, write_precision_vs_iou, NoiseRow, QualityRow, TimingRow};
use crate::components::components;
use crate::denoiser::{self, DenoiserParams, TrainConfig, TrainReport};
use crate::diffusion::{generate_set, sample, SamplerConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{evaluate_generated, time_inference, GenEvalReport, GenEvalRow};
use crate::scene::{augment, random_augmentation, Dataset, MineClass};
use crate::schedule::NoiseSchedule;
use crate::seed;
use crate::seg::{
    evaluate_set, predict_instances, train_seg, EvalRow, ImageEval, SegModel, SegSample, SegTrainConfig,
    SegTrainReport, SetEvaluation,
};

/// Stream identifiers under the global seed.
mod streams {
    pub const ORIGINALS: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const TEST: u64 = 3;
    pub const DENOISER: u64 = 4;
    pub const DDPM: u64 = 5;
    pub const DDIM: u64 = 6;
    pub const SEG: u64 = 7;
    pub const TIMING: u64 = 8;
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Raw originals (diffusion training data), the segmentation "Original"
/// set (raw plus augmented copies) and the held-out test set.
#[derive(Debug, Clone)]
pub struct Originals {
    pub raw: Dataset,
    pub seg_set: Dataset,
    pub test: Dataset,
}

pub fn synth_originals(config: &ExperimentConfig) -> Result<Originals> {
    let c = &config.counts;
    let raw = config
        .scene
        .synth_dataset(c.originals_per_class, &config.classes, seed::derive(config.seed, streams::ORIGINALS))?;
    let aug_seed = seed::derive(config.seed, streams::AUGMENT);
    let mut seg_items = raw.items.clone();
    for i in 0..c.augmented() * config.classes.len() {
        let src = &raw.items[i % raw.len()];
        let ops = random_augmentation(src, seed::derive(aug_seed, i as u64));
        seg_items.push(augment(src, &ops)?);
    }
    let test = config
        .scene
        .synth_dataset(c.test_per_class, &config.classes, seed::derive(config.seed, streams::TEST))?;
    Ok(Originals {
        seg_set: Dataset {
            seed: aug_seed,
            items: seg_items,
        },
        raw,
        test,
    })
}

fn class_images(d: &Dataset, class: MineClass) -> Vec<Image> {
    d.items.iter().filter(|i| i.class == class).map(|i| i.pixels.clone()).collect()
}

pub fn denoiser_config(config: &ExperimentConfig, class: MineClass) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(seed::derive(config.seed, streams::DENOISER), class.stream()),
        ..config.diffusion_train
    }
}

pub fn sampler_config(config: &ExperimentConfig, base: &SamplerConfig, class: MineClass) -> SamplerConfig {
    let stream = match base.kind {
        crate::diffusion::SamplerKind::Ddpm => streams::DDPM,
        crate::diffusion::SamplerKind::Ddim => streams::DDIM,
    };
    base.with_seed(seed::derive(seed::derive(config.seed, stream), class.stream()))
}

pub fn seg_config(config: &ExperimentConfig) -> SegTrainConfig {
    SegTrainConfig {
        seed: seed::derive(config.seed, streams::SEG),
        ..config.seg
    }
}

pub fn seg_samples(d: &Dataset) -> Vec<SegSample> {
    d.items
        .iter()
        .map(|i| SegSample {
            image: i.pixels.clone(),
            mask: i.mask.clone(),
        })
        .collect()
}

/// Predict on every test image and pair the predictions with the ground
/// truth instances (connected components of each mask).
pub fn test_predictions(model: &SegModel, test: &Dataset, config: &ExperimentConfig) -> Result<Vec<ImageEval>> {
    test.items
        .par_iter()
        .map(|item| {
            Ok(ImageEval {
                preds: predict_instances(model, &item.pixels, config.instances)?,
                gts: components(&item.mask),
            })
        })
        .collect()
}

/// Quality metrics of one generated set plus the sampler's timing.
pub fn score_generated(
    config: &ExperimentConfig,
    params: &DenoiserParams,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    real: &[Image],
    fake: &[Image],
    class: MineClass,
) -> Result<(GenEvalRow, usize)> {
    let shape = (config.scene.width, config.scene.height);
    let timed = sampler.with_seed(seed::derive(config.seed, streams::TIMING));
    let it = time_inference(|| sample(&params.with_schedule(schedule), schedule, shape, &timed).map(|_| ()), config.counts.timing_runs)?;
    let name = sampler.kind.provenance().name();
    let row = evaluate_generated(name, class.name(), real, fake, it, &config.metrics)?;
    Ok((row, sampler.evaluations(schedule)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegSummary {
    pub combination: String,
    pub train_size: usize,
    pub train: SegTrainReport,
    /// Thresholds where the model made no predictions; recorded as 0.
    pub undefined_thresholds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub gen_report: GenEvalReport,
    pub quality: Vec<QualityRow>,
    pub noise: Vec<NoiseRow>,
    pub timing: Vec<TimingRow>,
    pub denoiser_reports: Vec<TrainReport>,
    pub seg: Vec<(Combination, SetEvaluation)>,
    pub seg_summaries: Vec<SegSummary>,
    pub claims: Option<ClaimsReport>,
}

impl ExperimentOutput {
    pub fn table3(&self) -> Vec<EvalRow> {
        self.seg.iter().map(|(_, e)| e.row.clone()).collect()
    }

    pub fn row(&self, c: Combination) -> Option<&EvalRow> {
        self.seg.iter().find(|(k, _)| *k == c).map(|(_, e)| &e.row)
    }
}

/// Run every stage and write all outputs into `config.out_dir`.
///
/// Layout: `config.json`, `stages/*.json` (per-stage config echoes),
/// `datasets/{original,test,ddpm,ddim}/`, `models/`, `matches/*.jsonl`,
/// `gen_eval.{csv,json}`, `timing.csv`, `table1.csv`, `table2.csv`,
/// `table3.csv`, `precision_vs_iou.csv`, `seg_eval.json` and `claims.json`.
/// Claims are only evaluated when all seven combinations were run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let dir = config.out_dir.clone();
    let schedule = stage("setup", || {
        config.validate()?;
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("config.json"), config)?;
        config.schedule.build()
    })?;
    let shape = (config.scene.width, config.scene.height);

    let originals = stage("synth", || {
        let o = synth_originals(config)?;
        write_json(&dir.join("stages/synth.json"), &(&config.scene, &config.counts, &config.classes))?;
        o.raw.save(&dir.join("datasets/raw"), "raw")?;
        o.seg_set.save(&dir.join("datasets/original"), "original")?;
        o.test.save(&dir.join("datasets/test"), "test")?;
        Ok(o)
    })?;

    let mut denoisers = Vec::new();
    let mut denoiser_reports = Vec::new();
    stage("train-diffusion", || {
        for &class in &config.classes {
            let tc = denoiser_config(config, class);
            write_json(&dir.join(format!("stages/train-diffusion_{}.json", class.name())), &(&config.schedule, &config.denoiser, &tc))?;
            let images = class_images(&originals.raw, class);
            let (params, report) = denoiser::train(&images, config.denoiser, &tc, &schedule)?;
            log::info!(
                "denoiser {}: probe loss {:.4} -> {:.4}",
                class.name(),
                report.initial_probe_loss,
                report.final_probe_loss
            );
            let models = dir.join("models");
            fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
            params.save(&models.join(format!("denoiser_{}.params", class.name())))?;
            denoisers.push(params);
            denoiser_reports.push(report);
        }
        Ok(())
    })?;

    // Generated sets per sampler, one dataset per class.
    let generated: Vec<Vec<Dataset>> = stage("sample", || {
        let mut out = Vec::new();
        for base in [&config.ddpm, &config.ddim] {
            let mut per_class = Vec::new();
            for (&class, params) in config.classes.iter().zip(&denoisers) {
                let sc = sampler_config(config, base, class);
                let name = sc.kind.provenance().name().to_lowercase();
                write_json(&dir.join(format!("stages/sample_{name}_{}.json", class.name())), &sc)?;
                per_class.push(generate_set(
                    &params.with_schedule(&schedule),
                    &schedule,
                    shape,
                    &sc,
                    config.counts.generated_per_model,
                    class,
                    &config.metrics.orr,
                )?);
            }
            out.push(per_class);
        }
        Ok(out)
    })?;
    let concat = |sets: &[Dataset]| Dataset {
        seed: sets[0].seed,
        items: sets.iter().flat_map(|d| d.items.iter().cloned()).collect(),
    };
    let ddpm_set = concat(&generated[0]);
    let ddim_set = concat(&generated[1]);
    stage("sample", || {
        ddpm_set.save(&dir.join("datasets/ddpm"), "ddpm")?;
        ddim_set.save(&dir.join("datasets/ddim"), "ddim")?;
        Ok(())
    })?;

    let (gen_report, quality, noise, timing) = stage("eval-gen", || {
        write_json(&dir.join("stages/eval-gen.json"), &config.metrics)?;
        let mut rows = Vec::new();
        let mut evals = Vec::new();
        for (base, sets) in [&config.ddpm, &config.ddim].into_iter().zip(&generated) {
            for ((&class, params), set) in config.classes.iter().zip(&denoisers).zip(sets) {
                let sc = sampler_config(config, base, class);
                let real = class_images(&originals.raw, class);
                let (row, e) = score_generated(config, params, &schedule, &sc, &real, &set.images(), class)?;
                rows.push(row);
                evals.push(e);
            }
        }
        let report = GenEvalReport { rows };
        report.write_csv(&dir.join("gen_eval.csv"))?;
        report.write_json(&dir.join("gen_eval.json"))?;
        let quality = quality_rows(&report.rows, &evals);
        let noise = noise_rows(&report.rows);
        let timing: Vec<TimingRow> = report
            .rows
            .iter()
            .zip(&evals)
            .map(|(r, &e)| TimingRow {
                model: r.model.clone(),
                class: r.class.clone(),
                it_seconds: r.it_seconds,
                evals_per_image: e,
            })
            .collect();
        write_csv(&dir.join("table1.csv"), &quality)?;
        write_csv(&dir.join("table2.csv"), &noise)?;
        write_csv(&dir.join("timing.csv"), &timing)?;
        Ok((report, quality, noise, timing))
    })?;

    let mut seg = Vec::new();
    let mut seg_summaries = Vec::new();
    stage("train-seg", || {
        let sc = seg_config(config);
        write_json(&dir.join("stages/train-seg.json"), &(&sc, &config.instances))?;
        let models = dir.join("models");
        let matches = dir.join("matches");
        fs::create_dir_all(&matches).map_err(|e| Error::io(&matches, e))?;
        for &c in &config.combinations {
            let data = build_combination(c, &originals.seg_set, &ddpm_set, &ddim_set);
            let (model, report) = train_seg(&seg_samples(&data), &sc)?;
            if report.relative_decrease() < 0.5 {
                log::warn!("{}: probe loss fell only {:.0}%", c.name(), 100.0 * report.relative_decrease());
            }
            let slug = c.name().replace('+', "_").to_lowercase();
            model.save(&models.join(format!("seg_{slug}.params")))?;
            let images = test_predictions(&model, &originals.test, config)?;
            let eval = evaluate_set(c.name(), &images)?;
            crate::seg::eval::write_match_details(
                &matches.join(format!("{slug}.jsonl")),
                c.name(),
                &images,
                &crate::seg::coco_thresholds(),
            )?;
            log::info!("{}: AP50 {:.3} AP50:95 {:.3}", c.name(), eval.row.ap50, eval.row.ap50_95);
            seg_summaries.push(SegSummary {
                combination: c.name().to_string(),
                train_size: data.len(),
                train: report,
                undefined_thresholds: eval.undefined.clone(),
            });
            seg.push((c, eval));
        }
        Ok(())
    })?;

    stage("eval-seg", || {
        let rows: Vec<EvalRow> = seg.iter().map(|(_, e)| e.row.clone()).collect();
        crate::seg::eval::write_rows_csv(&dir.join("table3.csv"), &rows)?;
        let names: Vec<&str> = seg.iter().map(|(c, _)| c.name()).collect();
        let curves: Vec<Vec<(f64, f64)>> = seg.iter().map(|(_, e)| e.curve.clone()).collect();
        write_precision_vs_iou(&dir.join("precision_vs_iou.csv"), &names, &curves)?;
        write_json(&dir.join("seg_eval.json"), &seg_summaries)
    })?;

    let claims = stage("verify", || {
        if Combination::ALL.iter().all(|c| config.combinations.contains(c)) {
            let claims = verify_dir(&dir)?;
            claims.write(&dir.join("claims.json"))?;
            Ok(Some(claims))
        } else {
            log::warn!("claims need all seven combinations; skipped");
            Ok(None)
        }
    })?;

    Ok(ExperimentOutput {
        dir,
        gen_report,
        quality,
        noise,
        timing,
        denoiser_reports,
        seg,
        seg_summaries,
        claims,
    })
}
