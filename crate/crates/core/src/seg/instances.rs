use serde::{Deserialize, Serialize};

use super::model::SegModel;
use crate::components::components;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrediction {
    pub mask: Mask,
    /// Mean probability over the component.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceConfig {
    pub p_thresh: f64,
    pub min_area: usize,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            p_thresh: 0.5,
            min_area: 4,
        }
    }
}

/// 4-connected components of `prob > p_thresh` with at least `min_area`
/// pixels, scored by mean probability and sorted by score, highest first.
/// Ties keep raster order of the components' first pixels.
pub fn instances_from_probability(prob: &Image, config: InstanceConfig) -> Result<Vec<InstancePrediction>> {
    if !(config.p_thresh > 0.0 && config.p_thresh < 1.0) {
        return Err(Error::config(format!("p_thresh must lie in (0, 1), got {}", config.p_thresh)));
    }
    let (w, h) = prob.shape();
    let above = Mask::from_fn(w, h, |x, y| prob.get(x, y) > config.p_thresh);
    let mut out: Vec<InstancePrediction> = components(&above)
        .into_iter()
        .filter(|c| c.count() >= config.min_area.max(1))
        .map(|mask| {
            let sum: f64 = prob
                .pixels()
                .iter()
                .zip(mask.bits())
                .filter(|(_, &m)| m)
                .map(|(p, _)| p)
                .sum();
            let score = sum / mask.count() as f64;
            InstancePrediction { mask, score }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

pub fn predict_instances(model: &SegModel, img: &Image, config: InstanceConfig) -> Result<Vec<InstancePrediction>> {
    instances_from_probability(&model.predict(img)?, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_above_threshold() {
        let p = Image::filled(8, 8, 0.3);
        assert!(instances_from_probability(&p, InstanceConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn two_blobs_sorted_by_score() {
        let p = Image::from_fn(10, 6, |x, y| match (x, y) {
            (0..=2, 0..=2) => 0.7,
            (6..=8, 2..=4) => 0.9,
            _ => 0.1,
        });
        let inst = instances_from_probability(&p, InstanceConfig::default()).unwrap();
        assert_eq!(inst.len(), 2);
        assert!((inst[0].score - 0.9).abs() < 1e-12);
        assert!(inst[0].mask.get(7, 3));
        assert!((inst[1].score - 0.7).abs() < 1e-12);
    }

    #[test]
    fn small_components_are_dropped_and_threshold_checked() {
        let p = Image::from_fn(6, 6, |x, y| if x == 1 && y == 1 { 0.9 } else { 0.0 });
        assert!(instances_from_probability(&p, InstanceConfig::default()).unwrap().is_empty());
        let bad = InstanceConfig {
            p_thresh: 1.0,
            min_area: 1,
        };
        assert!(instances_from_probability(&p, bad).is_err());
    }
}
