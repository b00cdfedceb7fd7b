//! Fixed random-filter feature embedder and Gaussian feature statistics.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

const KERNEL: usize = 5;

/// `dim` seeded 5×5 filters; each feature is the spatial mean of
/// `relu(filter * image + bias)` over the valid region.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedder {
    seed: u64,
    filters: Vec<[f64; KERNEL * KERNEL]>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub seed: u64,
    pub dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { seed: 2024, dim: 64 }
    }
}

impl FeatureEmbedder {
    pub fn new(config: EmbedderConfig) -> Self {
        let mut rng = seed::rng(config.seed);
        let mut filters = Vec::with_capacity(config.dim);
        let mut biases = Vec::with_capacity(config.dim);
        for _ in 0..config.dim {
            let mut f = [0.0; KERNEL * KERNEL];
            for v in &mut f {
                *v = seed::normal(&mut rng) / KERNEL as f64;
            }
            filters.push(f);
            biases.push(rng.random_range(-0.2..0.2));
        }
        Self {
            seed: config.seed,
            filters,
            biases,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.filters.len()
    }

    pub fn embed(&self, img: &Image) -> Vec<f64> {
        let (w, h) = img.shape();
        let (ow, oh) = (w.saturating_sub(KERNEL - 1), h.saturating_sub(KERNEL - 1));
        let px = img.pixels();
        let count = (ow * oh).max(1) as f64;
        self.filters
            .iter()
            .zip(&self.biases)
            .map(|(f, &b)| {
                let mut acc = 0.0;
                for y in 0..oh {
                    for x in 0..ow {
                        let mut r = b;
                        for ky in 0..KERNEL {
                            let row = &px[(y + ky) * w + x..(y + ky) * w + x + KERNEL];
                            for (kx, &p) in row.iter().enumerate() {
                                r += f[ky * KERNEL + kx] * p;
                            }
                        }
                        acc += r.max(0.0);
                    }
                }
                acc / count
            })
            .collect()
    }

    pub fn embed_all(&self, images: &[Image]) -> Vec<Vec<f64>> {
        use rayon::prelude::*;
        images.par_iter().map(|i| self.embed(i)).collect()
    }
}

/// Mean and unbiased covariance of a feature sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(mean.len(), cov.nrows()));
        }
        Ok(Self { mean, cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let d = features[0].len();
        if let Some(f) = features.iter().find(|f| f.len() != d) {
            return Err(Error::Dimension(d, f.len()));
        }
        // Centered on the first sample, so identical inputs give exact zeros.
        let origin = &features[0];
        let mut shift = DVector::zeros(d);
        for f in features {
            for i in 0..d {
                shift[i] += f[i] - origin[i];
            }
        }
        shift /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for f in features {
            for i in 0..d {
                let di = f[i] - origin[i] - shift[i];
                for j in i..d {
                    cov[(i, j)] += di * (f[j] - origin[j] - shift[j]);
                }
            }
        }
        let mean = DVector::from_fn(d, |i, _| origin[i] + shift[i]);
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(Self { mean, cov, n })
    }
}

pub fn embed_stats(images: &[Image], embedder: &FeatureEmbedder) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: images.len(),
        });
    }
    FeatureStats::from_features(&embedder.embed_all(images))
}
