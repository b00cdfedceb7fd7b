use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::{embed_stats, EmbedderConfig, FeatureEmbedder};
use super::fid::fid;
use super::kid::{kid, median_bandwidth, KidEstimator};
use super::orr::{orr_proxy, HighlightDetector};
use super::snr::average_snr;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub embedder: EmbedderConfig,
    /// Fixed KID bandwidth; the median heuristic is used when absent.
    pub kid_sigma: Option<f64>,
    pub kid_estimator: KidEstimator,
    pub orr: HighlightDetector,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderConfig::default(),
            kid_sigma: None,
            kid_estimator: KidEstimator::Paper,
            orr: HighlightDetector::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEvalRow {
    pub model: String,
    pub class: String,
    pub fid: f64,
    pub kid: f64,
    pub avg_noise: f64,
    pub avg_snr_db: f64,
    pub orr: f64,
    pub it_seconds: f64,
}

/// Distribution and image-quality metrics of `fake` against `real`.
///
/// KID is computed on the first `min(n, m)` feature vectors of each set so
/// that both normalizations agree.
pub fn evaluate_generated(
    model: &str,
    class: &str,
    real: &[Image],
    fake: &[Image],
    it_seconds: f64,
    config: &MetricsConfig,
) -> Result<GenEvalRow> {
    let embedder = FeatureEmbedder::new(config.embedder);
    let real_feats = embedder.embed_all(real);
    let fake_feats = embedder.embed_all(fake);
    let fid = fid(&embed_stats(real, &embedder)?, &embed_stats(fake, &embedder)?)?;
    let k = real_feats.len().min(fake_feats.len());
    let (rx, fx) = (&real_feats[..k], &fake_feats[..k]);
    let sigma = config.kid_sigma.unwrap_or_else(|| median_bandwidth(rx, fx));
    let kid = kid(rx, fx, sigma, config.kid_estimator)?;
    let (avg_noise, avg_snr_db) = average_snr(fake)?;
    Ok(GenEvalRow {
        model: model.to_string(),
        class: class.to_string(),
        fid,
        kid,
        avg_noise,
        avg_snr_db,
        orr: orr_proxy(fake, &config.orr),
        it_seconds,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenEvalReport {
    pub rows: Vec<GenEvalRow>,
}

impl GenEvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<GenEvalRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str) -> GenEvalRow {
        GenEvalRow {
            model: model.into(),
            class: "conical".into(),
            fid: 1.5,
            kid: 0.01,
            avg_noise: 23.285,
            avg_snr_db: 7.17,
            orr: 0.78,
            it_seconds: 0.25,
        }
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = GenEvalReport { rows: vec![row("DDPM"), row("DDIM")] };
        let csv_path = dir.path().join("gen.csv");
        report.write_csv(&csv_path).unwrap();
        let header = std::fs::read_to_string(&csv_path).unwrap();
        assert!(header.starts_with("model,class,fid,kid,avg_noise,avg_snr_db,orr,it_seconds\n"));
        assert_eq!(GenEvalReport::read_csv(&csv_path).unwrap(), report);
        let json_path = dir.path().join("gen.json");
        report.write_json(&json_path).unwrap();
        assert_eq!(GenEvalReport::read_json(&json_path).unwrap(), report);
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let forge = crate::scene::SceneForge::default();
        let imgs: Vec<Image> = (0..6)
            .map(|i| forge.scene(crate::scene::MineClass::Conical, i).unwrap().pixels)
            .collect();
        let r = evaluate_generated("x", "conical", &imgs, &imgs, 0.0, &MetricsConfig::default()).unwrap();
        assert!(r.fid.abs() < 1e-6);
        assert_eq!(r.kid, 0.0);
        assert!((0.0..=1.0).contains(&r.orr));
    }
}
