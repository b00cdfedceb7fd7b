use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use syn2real::denoiser::{self, DenoiserParams};
use syn2real::diffusion::{generate_set, sample_with_trajectory, SamplerConfig};
use syn2real::harness::experiment::{
    denoiser_config, sampler_config, score_generated, seg_config, seg_samples, synth_originals, test_predictions,
};
use syn2real::harness::{run_experiment, verify_dir, ExperimentConfig};
use syn2real::metrics::{evaluate_generated, GenEvalReport};
use syn2real::scene::{Dataset, MineClass};
use syn2real::seg::eval::{write_match_details, write_rows_csv};
use syn2real::seg::{coco_thresholds, evaluate_set, train_seg, SegModel};
use syn2real::{Error, Result};

#[derive(Parser)]
#[command(name = "syn2real", version, about = "Synthetic sonar data, diffusion samplers and segmentation study")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON, or TOML by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Use the small smoke configuration as the base instead of the default.
    #[arg(long, global = true)]
    smoke: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    Ddpm,
    Ddim,
}

#[derive(Clone, Copy, ValueEnum)]
enum Class {
    Conical,
    Cylindrical,
}

impl From<Class> for MineClass {
    fn from(c: Class) -> Self {
        match c {
            Class::Conical => MineClass::Conical,
            Class::Cylindrical => MineClass::Cylindrical,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render original, augmented and held-out scenes.
    Synth,
    /// Train the noise predictor on the raw originals of one class.
    TrainDiffusion {
        #[arg(long, value_enum, default_value = "conical")]
        class: Class,
    },
    /// Draw images from a trained noise predictor.
    Sample {
        #[arg(long, value_enum)]
        sampler: Sampler,
        #[arg(long, value_enum, default_value = "conical")]
        class: Class,
        /// Number of images; defaults to the configured count.
        #[arg(long)]
        n: Option<usize>,
        /// Write every intermediate state of the first image here.
        #[arg(long)]
        dump_trajectory: Option<PathBuf>,
    },
    /// Score generated sets against the raw originals.
    EvalGen {
        #[arg(long, value_enum, default_value = "conical")]
        class: Class,
    },
    /// Train a segmenter on a dataset manifest.
    TrainSeg {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        name: String,
    },
    /// Evaluate a trained segmenter on the held-out test set.
    EvalSeg {
        #[arg(long)]
        name: String,
    },
    /// Run the whole pipeline.
    Experiment,
    /// Recompute the claims from the tables in the output directory.
    Verify,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if common.smoke => ExperimentConfig::smoke(),
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        config.out_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn denoiser_path(dir: &Path, class: MineClass) -> PathBuf {
    dir.join("models").join(format!("denoiser_{}.params", class.name()))
}

fn sampler_for(config: &ExperimentConfig, s: Sampler, class: MineClass) -> SamplerConfig {
    let base = match s {
        Sampler::Ddpm => &config.ddpm,
        Sampler::Ddim => &config.ddim,
    };
    sampler_config(config, base, class)
}

fn sampler_dir(s: Sampler) -> &'static str {
    match s {
        Sampler::Ddpm => "ddpm",
        Sampler::Ddim => "ddim",
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let shape = (config.scene.width, config.scene.height);
    match cli.command {
        Command::Synth => {
            let o = synth_originals(&config)?;
            o.raw.save(&dir.join("datasets/raw"), "raw")?;
            o.seg_set.save(&dir.join("datasets/original"), "original")?;
            let p = o.test.save(&dir.join("datasets/test"), "test")?;
            println!("wrote {} + {} + {} images; test manifest {}", o.raw.len(), o.seg_set.len(), o.test.len(), p.display());
        }
        Command::TrainDiffusion { class } => {
            let class = MineClass::from(class);
            let raw = Dataset::load(&dir.join("datasets/raw/manifest.json"))?;
            let images: Vec<_> = raw.items.iter().filter(|i| i.class == class).map(|i| i.pixels.clone()).collect();
            let schedule = config.schedule.build()?;
            let (params, report) = denoiser::train(&images, config.denoiser, &denoiser_config(&config, class), &schedule)?;
            let path = denoiser_path(&dir, class);
            fs::create_dir_all(path.parent().expect("models dir")).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            params.save(&path)?;
            println!(
                "{} steps, probe loss {} -> {}; saved {}",
                report.steps,
                report.initial_probe_loss,
                report.final_probe_loss,
                path.display()
            );
        }
        Command::Sample {
            sampler,
            class,
            n,
            dump_trajectory,
        } => {
            let class = MineClass::from(class);
            let params = DenoiserParams::load(&denoiser_path(&dir, class))?;
            let schedule = config.schedule.build()?;
            let sc = sampler_for(&config, sampler, class);
            let n = n.unwrap_or(config.counts.generated_per_model);
            let set = generate_set(&params.with_schedule(&schedule), &schedule, shape, &sc, n, class, &config.metrics.orr)?;
            let p = set.save(&dir.join("datasets").join(sampler_dir(sampler)), sampler_dir(sampler))?;
            println!("wrote {n} images; manifest {}", p.display());
            if let Some(tdir) = dump_trajectory {
                let first = sc.with_seed(syn2real::seed::derive(sc.seed, 0));
                let (_, traj) = sample_with_trajectory(&params.with_schedule(&schedule), &schedule, shape, &first)?;
                fs::create_dir_all(&tdir).map_err(|e| Error::Io {
                    path: tdir.clone(),
                    source: e,
                })?;
                for (t, x) in &traj {
                    x.write_raw(&tdir.join(format!("t{t:04}.f32")))?;
                    x.clamped().write_pgm(&tdir.join(format!("t{t:04}.pgm")))?;
                }
                println!("trajectory: {} states in {}", traj.len(), tdir.display());
            }
        }
        Command::EvalGen { class } => {
            let class = MineClass::from(class);
            let raw = Dataset::load(&dir.join("datasets/raw/manifest.json"))?;
            let real: Vec<_> = raw.items.iter().filter(|i| i.class == class).map(|i| i.pixels.clone()).collect();
            let schedule = config.schedule.build()?;
            let params = DenoiserParams::load(&denoiser_path(&dir, class)).ok();
            let mut rows = Vec::new();
            for s in [Sampler::Ddpm, Sampler::Ddim] {
                let fake = Dataset::load(&dir.join("datasets").join(sampler_dir(s)).join("manifest.json"))?.images();
                let sc = sampler_for(&config, s, class);
                let row = match &params {
                    Some(p) => score_generated(&config, p, &schedule, &sc, &real, &fake, class)?.0,
                    None => evaluate_generated(sc.kind.provenance().name(), class.name(), &real, &fake, f64::NAN, &config.metrics)?,
                };
                rows.push(row);
            }
            let report = GenEvalReport { rows };
            report.write_csv(&dir.join("gen_eval.csv"))?;
            report.write_json(&dir.join("gen_eval.json"))?;
            for r in &report.rows {
                println!("{} {}: FID {} KID {} noise {} SNR {} dB ORR {} IT {} s", r.model, r.class, r.fid, r.kid, r.avg_noise, r.avg_snr_db, r.orr, r.it_seconds);
            }
        }
        Command::TrainSeg { data, name } => {
            let d = Dataset::load(&data)?;
            let (model, report) = train_seg(&seg_samples(&d), &seg_config(&config))?;
            let path = dir.join("models").join(format!("seg_{name}.params"));
            fs::create_dir_all(path.parent().expect("models dir")).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            model.save(&path)?;
            println!(
                "{} steps, probe loss {} -> {}; saved {}",
                report.steps,
                report.initial_probe_loss,
                report.final_probe_loss,
                path.display()
            );
        }
        Command::EvalSeg { name } => {
            let model = SegModel::load(&dir.join("models").join(format!("seg_{name}.params")))?;
            let test = Dataset::load(&dir.join("datasets/test/manifest.json"))?;
            let images = test_predictions(&model, &test, &config)?;
            let eval = evaluate_set(&name, &images)?;
            write_rows_csv(&dir.join(format!("eval_{name}.csv")), &[eval.row.clone()])?;
            write_match_details(&dir.join(format!("matches_{name}.jsonl")), &name, &images, &coco_thresholds())?;
            let r = &eval.row;
            println!("{}: AP50 {} AP75 {} AP90 {} AP50:95 {} Avg {} AUPC {}", r.name, r.ap50, r.ap75, r.ap90, r.ap50_95, r.avg, r.aupc);
        }
        Command::Experiment => {
            let out = run_experiment(&config)?;
            for row in out.table3() {
                println!("{:<20} AP50 {:.3}  AP50:95 {:.3}  AUPC {:.3}", row.name, row.ap50, row.ap50_95, row.aupc);
            }
            if let Some(claims) = &out.claims {
                for c in &claims.claims {
                    println!("{} {:?} margin {}", c.id, c.verdict, c.margin);
                }
            }
        }
        Command::Verify => {
            let claims = verify_dir(&dir)?;
            claims.write(&dir.join("claims.json"))?;
            for c in &claims.claims {
                println!("{} {:?} margin {}: {}", c.id, c.verdict, c.margin, c.statement);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
