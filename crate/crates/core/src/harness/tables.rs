//! CSV layouts of the experiment outputs.
//!
//! `table1.csv` and `table2.csv` hold only deterministic quantities.
//! Wall-clock inference times go to `timing.csv` and the full generation
//! report, so that reruns reproduce the tables byte for byte.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::GenEvalRow;

/// Table I shape; evaluation count stands in for inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub model: String,
    pub class: String,
    pub fid: f64,
    pub kid: f64,
    pub orr: f64,
    pub evals_per_image: usize,
}

/// Table II shape plus the noise ratio against DDPM for the same class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub model: String,
    pub class: String,
    pub avg_noise: f64,
    pub avg_snr_db: f64,
    pub noise_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    pub class: String,
    pub it_seconds: f64,
    pub evals_per_image: usize,
}

pub fn quality_rows(rows: &[GenEvalRow], evals: &[usize]) -> Vec<QualityRow> {
    rows.iter()
        .zip(evals)
        .map(|(r, &e)| QualityRow {
            model: r.model.clone(),
            class: r.class.clone(),
            fid: r.fid,
            kid: r.kid,
            orr: r.orr,
            evals_per_image: e,
        })
        .collect()
}

pub fn noise_rows(rows: &[GenEvalRow]) -> Vec<NoiseRow> {
    rows.iter()
        .map(|r| {
            let reference = rows
                .iter()
                .find(|d| d.model == "DDPM" && d.class == r.class)
                .map_or(f64::NAN, |d| d.avg_noise);
            NoiseRow {
                model: r.model.clone(),
                class: r.class.clone(),
                avg_noise: r.avg_noise,
                avg_snr_db: r.avg_snr_db,
                noise_ratio: r.avg_noise / reference,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

pub fn read_table2(path: &Path) -> Result<Vec<NoiseRow>> {
    read_csv(path)
}

/// Plot data: one row per threshold, one precision column per combination.
pub fn write_precision_vs_iou(path: &Path, names: &[&str], curves: &[Vec<(f64, f64)>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    let n = curves.first().map_or(0, Vec::len);
    for i in 0..n {
        let mut rec = vec![curves[0][i].0.to_string()];
        rec.extend(curves.iter().map(|c| c[i].1.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(model: &str, noise: f64) -> GenEvalRow {
        GenEvalRow {
            model: model.into(),
            class: "conical".into(),
            fid: 1.0,
            kid: 0.1,
            avg_noise: noise,
            avg_snr_db: 7.0,
            orr: 0.5,
            it_seconds: 0.3,
        }
    }

    #[test]
    fn noise_ratio_is_relative_to_ddpm() {
        let rows = noise_rows(&[gen("DDPM", 20.0), gen("DDIM", 22.0)]);
        assert_eq!(rows[0].noise_ratio, 1.0);
        assert!((rows[1].noise_ratio - 1.1).abs() < 1e-15);
    }

    #[test]
    fn table2_round_trip_and_plot_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t2.csv");
        let rows = noise_rows(&[gen("DDPM", 20.0), gen("DDIM", 22.0)]);
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_table2(&p).unwrap(), rows);

        let q = dir.path().join("piou.csv");
        let curves = vec![vec![(0.5, 1.0), (0.55, 0.5)], vec![(0.5, 0.25), (0.55, 0.0)]];
        write_precision_vs_iou(&q, &["Original", "DDPM"], &curves).unwrap();
        let text = std::fs::read_to_string(&q).unwrap();
        assert_eq!(text, "k,Original,DDPM\n0.5,1,0.25\n0.55,0.5,0\n");
    }
}
