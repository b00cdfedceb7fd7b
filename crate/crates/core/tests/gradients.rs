mod common;

use syn2real::denoiser::{DataStats, DenoiserArch};
use syn2real::seg::{FocalParams, SegArch};

#[test]
fn default_networks_match_finite_differences() {
    match common::criterion_3() {
        Ok(s) => println!("{s}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn odd_shapes_and_dilations() {
    let s = common::default_schedule();
    let arch = DenoiserArch {
        width: 9,
        height: 7,
        channels: 3,
        embed_dim: 5,
        dilations: [2, 1, 3],
        data_stats: Some(DataStats { mean: -0.1, std: 0.2 }),
    };
    let params = common::perturbed_denoiser(arch, 4, 0.2);
    let mut rng = syn2real::seed::rng(3);
    let batch: Vec<_> = [1usize, 90, 200]
        .iter()
        .map(|&t| syn2real::denoiser::NoisedSample {
            x0: syn2real::image::Image::new(9, 7, syn2real::seed::normals(&mut rng, 63)).unwrap(),
            eps: syn2real::image::Image::new(9, 7, syn2real::seed::normals(&mut rng, 63)).unwrap(),
            t,
        })
        .collect();
    let (_, grad) = params.loss_and_grad(&batch, &s).unwrap();
    // Every coordinate of the small network.
    let coords: Vec<usize> = (0..grad.len()).collect();
    let mut probe = params.clone();
    common::gradient_check(&params.values, &grad, &coords, 1e-3, |v| {
        probe.values.copy_from_slice(v);
        probe.loss(&batch, &s).unwrap()
    })
    .unwrap();
}

#[test]
fn segmenter_with_plain_bce_weighting() {
    let arch = SegArch {
        width: 32,
        height: 32,
        channels: 4,
    };
    let model = common::perturbed_segmenter(arch, 6, 0.3);
    let samples = common::seg_batch(8);
    let focal = FocalParams { gamma: 0.0, alpha: 0.5 };
    let (_, grad) = model.loss_and_grad(&samples, focal).unwrap();
    let coords = common::coordinates(grad.len(), 120, 3);
    let mut probe = model.clone();
    common::gradient_check(&model.values, &grad, &coords, 1e-3, |v| {
        probe.values.copy_from_slice(v);
        probe.loss(&samples, focal).unwrap()
    })
    .unwrap();
}
