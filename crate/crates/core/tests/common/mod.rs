//! Checks shared by the per-topic test targets and the acceptance runner.
//!
//! Each `criterion_*` function returns `Ok(summary)` or `Err(reason)` so the
//! acceptance target can report every criterion instead of stopping at the
//! first failure.

#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use syn2real::denoiser::{DataStats, DenoiserArch, DenoiserParams, NoisedSample, TrainConfig};
use syn2real::diffusion::{
    forward_closed, forward_step, reverse_chain, sample, CountingPredictor, SamplerConfig,
};
use syn2real::harness::{run_experiment, ExperimentConfig, ExperimentOutput};
use syn2real::image::{Image, Mask};
use syn2real::metrics::snr::snr_of_values;
use syn2real::metrics::{embed_stats, fid, kid, rbf_kernel, sqrtm_psd, time_inference, EmbedderConfig, FeatureEmbedder, FeatureStats, KidEstimator};
use syn2real::scene::{MineClass, SceneForge};
use syn2real::schedule::{linear_schedule, NoiseSchedule};
use syn2real::seed;
use syn2real::seg::{
    ap_at, match_greedy, train_seg, trapezoid, FocalParams, ImageEval, InstancePrediction, SegArch, SegModel, SegSample,
    SegTrainConfig,
};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn err(e: syn2real::Error) -> String {
    e.to_string()
}

pub fn default_schedule() -> NoiseSchedule {
    linear_schedule(200, 5e-4, 0.1).unwrap()
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took <= limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

/// Adds Gaussian noise of scale `s` to every parameter so no layer is zero.
pub fn perturbed_denoiser(arch: DenoiserArch, seed: u64, s: f64) -> DenoiserParams {
    let mut p = DenoiserParams::init(arch, seed);
    let mut rng = seed::rng(seed::derive(seed, 99));
    for v in &mut p.values {
        *v += s * seed::normal(&mut rng);
    }
    p
}

pub fn perturbed_segmenter(arch: SegArch, seed: u64, s: f64) -> SegModel {
    let mut m = SegModel::init(arch, seed);
    let mut rng = seed::rng(seed::derive(seed, 99));
    for v in &mut m.values {
        *v += s * seed::normal(&mut rng);
    }
    m
}

pub fn scene_image(seed: u64) -> Image {
    SceneForge::default().scene(MineClass::Conical, seed).unwrap().pixels
}

// ---------------------------------------------------------------- forward

/// Largest gap over all `t` between iterated zero-noise steps and the
/// closed form.
pub fn zero_noise_gap(schedule: &NoiseSchedule, x0: &Image) -> f64 {
    let zero = Image::zeros(x0.width(), x0.height());
    let mut x = x0.clone();
    let mut worst = 0.0f64;
    for t in 1..=schedule.len() {
        x = forward_step(&x, t, &zero, schedule).unwrap();
        let closed = forward_closed(x0, t, &zero, schedule).unwrap();
        worst = worst.max(x.max_abs_diff(&closed));
    }
    worst
}

/// Runs `draws` stochastic chains from `x0` and compares per-pixel sample
/// moments at each `t` in `probe` against `N(sqrt(abar) x0, 1 - abar)`.
/// Returns the worst mean deviation in standard errors and the worst
/// relative variance error.
pub fn monte_carlo_moments(schedule: &NoiseSchedule, x0: &[f64], probe: &[usize], draws: usize, seed: u64) -> (f64, f64) {
    let n = x0.len();
    let mut sum = vec![vec![0.0; n]; probe.len()];
    let mut sq = vec![vec![0.0; n]; probe.len()];
    let mut rng = seed::rng(seed);
    let last = *probe.iter().max().unwrap();
    for _ in 0..draws {
        let mut x = x0.to_vec();
        for t in 1..=last {
            let b = schedule.beta(t);
            for v in &mut x {
                *v = (1.0 - b).sqrt() * *v + b.sqrt() * seed::normal(&mut rng);
            }
            if let Some(k) = probe.iter().position(|&p| p == t) {
                for i in 0..n {
                    sum[k][i] += x[i];
                    sq[k][i] += x[i] * x[i];
                }
            }
        }
    }
    let d = draws as f64;
    let (mut worst_se, mut worst_var) = (0.0f64, 0.0f64);
    for (k, &t) in probe.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let var = 1.0 - ab;
        for i in 0..n {
            let mean = sum[k][i] / d;
            let sample_var = (sq[k][i] - d * mean * mean) / (d - 1.0);
            worst_se = worst_se.max((mean - ab.sqrt() * x0[i]).abs() / (var / d).sqrt());
            worst_var = worst_var.max((sample_var / var - 1.0).abs());
        }
    }
    (worst_se, worst_var)
}

pub fn criterion_1() -> Check {
    let start = Instant::now();
    let schedule = default_schedule();
    let gap = zero_noise_gap(&schedule, &scene_image(3));
    ensure!(gap <= 1e-6, "zero-noise iteration differs from closed form by {gap:e}");
    let (se, var) = monte_carlo_moments(&schedule, &[0.0, 0.25, 0.6, 1.0], &[50, 200], 10_000, 17);
    ensure!(se <= 3.0, "Monte Carlo mean off by {se:.2} standard errors");
    ensure!(var <= 0.05, "Monte Carlo variance off by {:.1}%", 100.0 * var);
    within(start, Duration::from_secs(30), "criterion 1")?;
    Ok(format!("L_inf gap {gap:.1e}, mean within {se:.2} SE, variance within {:.2}%", 100.0 * var))
}

// ---------------------------------------------------------------- samplers

pub fn bits(img: &Image) -> Vec<u64> {
    img.pixels().iter().map(|v| v.to_bits()).collect()
}

/// Largest coefficient gap between DDIM(eta = 1, S = T) and DDPM.
pub fn ddim_ddpm_coefficient_gap(schedule: &NoiseSchedule) -> Result<f64, String> {
    let ddim = SamplerConfig::ddim(schedule.len(), 1.0, 0).plan(schedule).map_err(err)?;
    let ddpm = SamplerConfig::ddpm(0).plan(schedule).map_err(err)?;
    ensure!(ddim.len() == ddpm.len(), "plan lengths {} vs {}", ddim.len(), ddpm.len());
    let mut worst = 0.0f64;
    for ((ti, a), (tp, b)) in ddim.iter().zip(&ddpm) {
        ensure!(ti == tp, "step order differs: {ti} vs {tp}");
        worst = worst
            .max((a.x_coef - b.x_coef).abs())
            .max((a.eps_coef - b.eps_coef).abs())
            .max((a.noise_std - b.noise_std).abs());
    }
    Ok(worst)
}

pub fn criterion_2() -> Check {
    let start = Instant::now();
    let schedule = default_schedule();
    let arch = DenoiserArch::default();
    let params = perturbed_denoiser(arch, 5, 0.05);
    let model = params.with_schedule(&schedule);
    let shape = (arch.width, arch.height);

    let cfg = SamplerConfig::ddim(50, 0.0, 11);
    let a = sample(&model, &schedule, shape, &cfg).map_err(err)?;
    let b = sample(&model, &schedule, shape, &cfg).map_err(err)?;
    ensure!(bits(&a) == bits(&b), "DDIM eta = 0 differs between runs");
    let plan = cfg.plan(&schedule).map_err(err)?;
    let x_t = syn2real::diffusion::gaussian_image(shape.0, shape.1, 4);
    let c = reverse_chain(&model, &plan, x_t.clone(), 1, None).map_err(err)?;
    let d = reverse_chain(&model, &plan, x_t, 2, None).map_err(err)?;
    ensure!(bits(&c) == bits(&d), "DDIM eta = 0 depends on the noise stream");

    let gap = ddim_ddpm_coefficient_gap(&schedule)?;
    ensure!(gap <= 1e-10, "DDIM(1, T) vs DDPM coefficients differ by {gap:e}");

    let counting = CountingPredictor::new(&model);
    sample(&counting, &schedule, shape, &cfg).map_err(err)?;
    let ddim_evals = counting.count();
    let counting = CountingPredictor::new(&model);
    sample(&counting, &schedule, shape, &SamplerConfig::ddpm(11)).map_err(err)?;
    let ddpm_evals = counting.count();
    ensure!(ddim_evals == 50 && ddpm_evals == 200, "evaluations DDIM {ddim_evals}, DDPM {ddpm_evals}");

    let ddpm_time = time_inference(|| sample(&model, &schedule, shape, &SamplerConfig::ddpm(3)).map(drop), 3).map_err(err)?;
    let ddim_time = time_inference(|| sample(&model, &schedule, shape, &cfg).map(drop), 3).map_err(err)?;
    let ratio = ddpm_time / ddim_time;
    ensure!(ratio >= 3.0, "DDPM/DDIM time ratio {ratio:.2} < 3");
    within(start, Duration::from_secs(60), "criterion 2")?;
    Ok(format!(
        "bit-identical, coefficient gap {gap:.1e}, evaluations {ddim_evals} vs {ddpm_evals}, time ratio {ratio:.2}"
    ))
}

// ---------------------------------------------------------------- gradients

/// Compares `analytic[i]` with a central difference of `loss` at `coords`.
/// Agreement means `|a - n| <= rel * max(|a|, |n|) + 1e-8`; the absolute
/// floor only matters for coordinates whose gradient is near zero.
pub fn gradient_check(
    values: &[f64],
    analytic: &[f64],
    coords: &[usize],
    rel: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut v = values.to_vec();
    for &i in coords {
        let h = 1e-5 * values[i].abs().max(1.0);
        v[i] = values[i] + h;
        let up = loss(&v);
        v[i] = values[i] - h;
        let down = loss(&v);
        v[i] = values[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        ensure!(
            (a - numeric).abs() <= rel * scale + 1e-8,
            "coordinate {i}: analytic {a:e} vs numeric {numeric:e}"
        );
        if scale > 1e-6 {
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

/// `count` distinct coordinates out of `len`, seeded.
pub fn coordinates(len: usize, count: usize, seed: u64) -> Vec<usize> {
    use rand::seq::index::sample as pick;
    let mut rng = seed::rng(seed);
    let mut c = pick(&mut rng, len, count.min(len)).into_vec();
    c.sort_unstable();
    c
}

pub fn denoiser_batch(arch: DenoiserArch, seed: u64) -> Vec<NoisedSample> {
    let mut rng = seed::rng(seed);
    [1usize, 37, 120, 200]
        .iter()
        .enumerate()
        .map(|(i, &t)| NoisedSample {
            x0: scene_image(seed + i as u64),
            eps: Image::new(arch.width, arch.height, seed::normals(&mut rng, arch.width * arch.height)).unwrap(),
            t,
        })
        .collect()
}

pub fn seg_batch(seed: u64) -> Vec<SegSample> {
    let forge = SceneForge::default();
    (0..3)
        .map(|i| {
            let s = forge.scene(MineClass::Cylindrical, seed + i).unwrap();
            SegSample {
                image: s.pixels,
                mask: s.mask,
            }
        })
        .collect()
}

pub fn criterion_3() -> Check {
    let start = Instant::now();
    let schedule = default_schedule();
    let arch = DenoiserArch::default();
    let params = perturbed_denoiser(arch, 8, 0.05);
    let batch = denoiser_batch(arch, 21);
    let (_, grad) = params.loss_and_grad(&batch, &schedule).map_err(err)?;
    let coords = coordinates(grad.len(), 150, 1);
    let mut probe = params.clone();
    let worst_d = gradient_check(&params.values, &grad, &coords, 1e-3, |v| {
        probe.values.copy_from_slice(v);
        probe.loss(&batch, &schedule).unwrap()
    })?;

    let model = perturbed_segmenter(SegArch::default(), 9, 0.05);
    let samples = seg_batch(40);
    let focal = FocalParams::default();
    let (_, grad) = model.loss_and_grad(&samples, focal).map_err(err)?;
    let coords_s = coordinates(grad.len(), 150, 2);
    let mut probe = model.clone();
    let worst_s = gradient_check(&model.values, &grad, &coords_s, 1e-3, |v| {
        probe.values.copy_from_slice(v);
        probe.loss(&samples, focal).unwrap()
    })?;
    within(start, Duration::from_secs(120), "criterion 3")?;
    Ok(format!(
        "{} denoiser and {} segmenter coordinates, worst relative error {worst_d:.1e} / {worst_s:.1e}",
        coords.len(),
        coords_s.len()
    ))
}

// ---------------------------------------------------------------- metrics

pub fn stats(mean: &[f64], cov: DMatrix<f64>) -> FeatureStats {
    FeatureStats::new(DVector::from_column_slice(mean), cov, 100).unwrap()
}

pub fn random_psd(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let b = DMatrix::from_fn(d, d, |_, _| seed::normal(&mut rng));
    &b * b.transpose() + DMatrix::identity(d, d) * 1e-3
}

pub fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| seed::normals(&mut rng, d)).collect()
}

pub fn criterion_4() -> Check {
    let start = Instant::now();
    let images: Vec<Image> = (0..24).map(scene_image).collect();
    let real = embed_stats(&images, &FeatureEmbedder::new(EmbedderConfig::default())).map_err(err)?;
    let same = fid(&real, &real).map_err(err)?;
    ensure!(same.abs() <= 1e-9, "FID(a, a) = {same:e}");

    // 1-D: (mu1 - mu2)^2 + (s1 - s2)^2.
    for &(m1, s1, m2, s2) in &[(0.0, 1.0, 1.0, 1.0), (0.0, 1.0, 0.0, 2.0), (-1.5, 0.5, 2.0, 3.0), (0.3, 2.0, 0.3, 2.0)] {
        let v = fid(
            &stats(&[m1], DMatrix::from_element(1, 1, s1 * s1)),
            &stats(&[m2], DMatrix::from_element(1, 1, s2 * s2)),
        )
        .map_err(err)?;
        let expect: f64 = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
        ensure!((v - expect).abs() <= 1e-9, "1-D FID {v} vs {expect}");
    }

    let cov = random_psd(12, 4);
    let base: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
    let delta: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
    let shifted: Vec<f64> = base.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let v = fid(&stats(&base, cov.clone()), &stats(&shifted, cov.clone())).map_err(err)?;
    let shift: f64 = delta.iter().map(|d| d * d).sum();
    ensure!((v - shift).abs() <= 1e-6, "mean shift: FID {v} vs |delta|^2 {shift}");

    let a = random_psd(48, 6);
    let s = sqrtm_psd(&a).map_err(err)?;
    let recon = (&s * &s - &a).norm() / a.norm();
    ensure!(recon < 1e-8, "sqrtm reconstruction error {recon:e}");

    let x = random_points(30, 6, 7);
    let k0 = kid(&x, &x, 1.3, KidEstimator::Paper).map_err(err)?;
    ensure!(k0 == 0.0, "paper-form KID(X, X) = {k0:e}");
    let (p, q) = (vec![0.2, -1.0, 0.5], vec![1.0, 0.4, -0.3]);
    let single = kid(&[p.clone()], &[q.clone()], 0.8, KidEstimator::Paper).map_err(err)?;
    let expect = 2.0 - 2.0 * rbf_kernel(&p, &q, 0.8).map_err(err)?;
    ensure!((single - expect).abs() <= 1e-12, "n = m = 1 KID {single} vs {expect}");

    let (noise, db) = snr_of_values(&[90.0, 110.0]).map_err(err)?;
    ensure!(noise == 10.0 && db == 10.0, "P_s = 10 P_n gave ({noise}, {db} dB)");
    let (noise, db) = snr_of_values(&[0.0, 2.0]).map_err(err)?;
    ensure!(noise == 1.0 && db == 0.0, "P_s = P_n gave ({noise}, {db} dB)");
    within(start, Duration::from_secs(60), "criterion 4")?;
    Ok(format!("FID(a,a) {same:.1e}, mean shift {v:.6} vs {shift:.6}, sqrtm {recon:.1e}, KID and SNR exact"))
}

// ---------------------------------------------------------------- AP / AUPC

pub fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
    Mask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
}

/// Random fixture with up to `max` predictions and ground truths, built
/// from overlapping rectangles on a 16×16 grid so IoUs cover (0, 1].
pub fn random_fixture(seed: u64, max: usize) -> ImageEval {
    use rand::Rng;
    let mut rng = seed::rng(seed);
    let boxes = |n: usize, rng: &mut seed::Rng| -> Vec<Mask> {
        (0..n)
            .map(|_| {
                let x0 = rng.random_range(0..12);
                let y0 = rng.random_range(0..12);
                let x1 = rng.random_range(x0 + 1..=16);
                let y1 = rng.random_range(y0 + 1..=16);
                rect(16, 16, x0, y0, x1, y1)
            })
            .collect()
    };
    let np = rng.random_range(0..=max);
    let ng = rng.random_range(0..=max);
    let gts = boxes(ng, &mut rng);
    let mut preds: Vec<InstancePrediction> = Vec::new();
    for _ in 0..np {
        // Half the predictions perturb a ground truth so high IoUs occur.
        let mask = if !gts.is_empty() && rng.random_bool(0.5) {
            let g = &gts[rng.random_range(0..gts.len())];
            let dx: usize = rng.random_range(0..2);
            Mask::from_fn(16, 16, |x, y| g.get(x.saturating_sub(dx), y) && x >= dx)
        } else {
            boxes(1, &mut rng).remove(0)
        };
        let mask = if mask.is_empty() { rect(16, 16, 0, 0, 1, 1) } else { mask };
        preds.push(InstancePrediction {
            mask,
            score: rng.random::<f64>(),
        });
    }
    ImageEval { preds, gts }
}

/// Maximum number of prediction/ground-truth pairs with IoU >= k in any
/// one-to-one assignment, by exhaustive search.
pub fn exhaustive_tp(table: &[Vec<f64>], k: f64) -> usize {
    fn go(i: usize, table: &[Vec<f64>], k: f64, used: &mut Vec<bool>) -> usize {
        if i == table.len() {
            return 0;
        }
        let mut best = go(i + 1, table, k, used);
        for j in 0..used.len() {
            if !used[j] && table[i][j] >= k {
                used[j] = true;
                best = best.max(1 + go(i + 1, table, k, used));
                used[j] = false;
            }
        }
        best
    }
    let ng = table.first().map_or(0, |r| r.len());
    go(0, table, k, &mut vec![false; ng])
}

pub fn greedy_tp(img: &ImageEval, k: f64) -> usize {
    match_greedy(img, k).unwrap().iter().filter(|m| m.tp).count()
}

/// Published Table III row for DDPM+DDIM+Original: AP_50, AP_75, AP_90, AUPC.
pub const PUBLISHED_FULL_ROW: (f64, f64, f64, f64) = (0.833, 0.737, 0.167, 0.264);

pub fn criterion_5() -> Check {
    let start = Instant::now();
    let ks: Vec<f64> = syn2real::seg::coco_thresholds();
    let mut fixtures = 0;
    for s in 0..400 {
        let img = random_fixture(s, 5);
        let table = img.iou_table().map_err(err)?;
        for &k in &ks {
            let (g, e) = (greedy_tp(&img, k), exhaustive_tp(&table, k));
            ensure!(g == e, "fixture {s} at k = {k}: greedy {g} vs exhaustive {e}");
        }
        fixtures += 1;
    }

    let fine: Vec<f64> = (0..=90).map(|i| 0.05 + 0.01 * i as f64).collect();
    for s in 0..100 {
        let mut img = random_fixture(1000 + s, 5);
        if img.preds.is_empty() {
            img.preds.push(InstancePrediction {
                mask: rect(16, 16, 0, 0, 4, 4),
                score: 0.5,
            });
        }
        let mut prev = f64::INFINITY;
        for &k in &fine {
            let p = ap_at(&img.preds, &img.gts, k).map_err(err)?;
            ensure!(p <= prev, "fixture {s}: ap_at rose from {prev} to {p} at k = {k}");
            prev = p;
        }
    }

    for &p in &[0.0, 0.25, 0.6, 1.0] {
        let pts: Vec<(f64, f64)> = ks.iter().map(|&k| (k, p)).collect();
        let area = trapezoid(&pts);
        ensure!((area - 0.45 * p).abs() <= 1e-12, "constant precision {p}: AUPC {area} vs {}", 0.45 * p);
    }

    let (a50, a75, a90, published) = PUBLISHED_FULL_ROW;
    let avg = (a50 + a75 + a90) / 3.0;
    let product = 0.45 * (avg * 1000.0).round() / 1000.0;
    ensure!((product - published).abs() <= 0.01, "0.45 * {avg:.3} = {product:.4}, published {published}");
    within(start, Duration::from_secs(60), "criterion 5")?;
    Ok(format!(
        "{fixtures} matching fixtures, 100 monotone curves, 0.45 * {avg:.3} = {product:.4} vs {published}"
    ))
}

// ---------------------------------------------------------------- overfit

pub fn overfit_denoiser_image() -> Image {
    Image::filled(32, 32, 0.6)
}

/// Default network in residual form, with statistics for data of (almost)
/// no spread.
pub fn overfit_arch() -> DenoiserArch {
    DenoiserArch {
        data_stats: Some(DataStats { mean: 0.6, std: 0.01 }),
        ..DenoiserArch::default()
    }
}

/// Trains on one constant image and samples it back with DDPM. Returns the
/// worst L_inf error over three sampler seeds.
pub fn diffusion_overfit_error() -> Result<f64, String> {
    let schedule = default_schedule();
    let img = overfit_denoiser_image();
    let config = TrainConfig {
        epochs: 400,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (params, _) = syn2real::denoiser::train(&[img.clone()], overfit_arch(), &config, &schedule).map_err(err)?;
    let model = params.with_schedule(&schedule);
    let mut worst = 0.0f64;
    for s in 0..3 {
        let out = sample(&model, &schedule, (32, 32), &SamplerConfig::ddpm(s)).map_err(err)?;
        worst = worst.max(out.max_abs_diff(&img));
    }
    Ok(worst)
}

pub fn segmenter_overfit_accuracy() -> Result<f64, String> {
    let s = SceneForge::default().scene(MineClass::Cylindrical, 5).map_err(err)?;
    let sample = SegSample {
        image: s.pixels,
        mask: s.mask,
    };
    let config = SegTrainConfig {
        epochs: 300,
        batch_size: 1,
        ..SegTrainConfig::default()
    };
    let (model, _) = train_seg(std::slice::from_ref(&sample), &config).map_err(err)?;
    model.pixel_accuracy(&sample).map_err(err)
}

pub fn criterion_6() -> Check {
    let start = Instant::now();
    let linf = diffusion_overfit_error()?;
    ensure!(linf <= 0.15, "diffusion overfit L_inf {linf:.3} > 0.15");
    let acc = segmenter_overfit_accuracy()?;
    ensure!(acc > 0.95, "segmenter overfit accuracy {acc:.4} <= 0.95");
    within(start, Duration::from_secs(300), "criterion 6")?;
    Ok(format!("diffusion L_inf {linf:.3}, segmenter accuracy {acc:.4}"))
}

// ---------------------------------------------------------------- experiment

pub fn run_default(dir: &Path) -> Result<(ExperimentOutput, Duration), String> {
    let config = ExperimentConfig {
        out_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let out = run_experiment(&config).map_err(err)?;
    Ok((out, start.elapsed()))
}

pub fn criterion_7(out: &ExperimentOutput, took: Duration) -> Check {
    use syn2real::harness::Combination;
    let rows = syn2real::seg::eval::read_rows_csv(&out.dir.join("table3.csv")).map_err(err)?;
    ensure!(rows.len() == 7, "table3.csv has {} rows", rows.len());
    for r in &rows {
        ensure!(r.is_consistent(), "row {} is inconsistent: {r:?}", r.name);
    }
    let find = |c: Combination| rows.iter().find(|r| r.name == c.name()).cloned();
    let orig = find(Combination::Original).ok_or("no Original row")?;
    let full = find(Combination::All).ok_or("no DDPM+DDIM+Original row")?;
    for r in &out.denoiser_reports {
        let drop = 1.0 - r.final_probe_loss / r.initial_probe_loss;
        ensure!(drop >= 0.5, "denoiser probe loss fell only {:.0}%", 100.0 * drop);
    }
    ensure!(took <= Duration::from_secs(900), "experiment took {took:?}");
    ensure!(
        full.ap50 >= orig.ap50 && full.ap50_95 >= orig.ap50_95,
        "DDPM+DDIM+Original AP_50 {:.3} / AP_50:95 {:.3} below Original {:.3} / {:.3}",
        full.ap50,
        full.ap50_95,
        orig.ap50,
        orig.ap50_95
    );
    Ok(format!(
        "AP_50 {:.3} vs {:.3}, AP_50:95 {:.3} vs {:.3}, {took:.0?}",
        full.ap50, orig.ap50, full.ap50_95, orig.ap50_95
    ))
}

pub fn criterion_8(out: &ExperimentOutput, per_sampler: usize) -> Check {
    let rows = syn2real::harness::tables::read_table2(&out.dir.join("table2.csv")).map_err(err)?;
    let get = |m: &str| rows.iter().find(|r| r.model == m).cloned();
    let ddpm = get("DDPM").ok_or("no DDPM row in table2.csv")?;
    let ddim = get("DDIM").ok_or("no DDIM row in table2.csv")?;
    ensure!(per_sampler >= 100, "only {per_sampler} samples per sampler");
    ensure!(ddim.avg_noise >= ddpm.avg_noise, "DDIM noise {} < DDPM {}", ddim.avg_noise, ddpm.avg_noise);
    let ratio = ddim.avg_noise / ddpm.avg_noise;
    ensure!((ddim.noise_ratio - ratio).abs() <= 1e-12, "table2 ratio {} vs {ratio}", ddim.noise_ratio);
    Ok(format!("DDIM noise {:.3} vs DDPM {:.3}, ratio {ratio:.3}", ddim.avg_noise, ddpm.avg_noise))
}

pub const DETERMINISTIC_OUTPUTS: [&str; 4] = ["table1.csv", "table2.csv", "table3.csv", "claims.json"];

pub fn criterion_9(a: &Path, b: &Path) -> Check {
    for f in DETERMINISTIC_OUTPUTS {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure!(x == y, "{f} differs between runs");
    }
    Ok(format!("{} files byte-identical", DETERMINISTIC_OUTPUTS.len()))
}
