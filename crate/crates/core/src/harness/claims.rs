//! Directional checks on a finished run. Only orderings are judged; the
//! size of each difference is reported as a margin.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::combos::Combination;
use super::tables::{read_table2, NoiseRow};
use crate::error::{Error, Result};
use crate::seg::eval::{read_rows_csv, EvalRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Tie,
}

impl Verdict {
    /// `Pass` for a positive margin, `Tie` for zero.
    pub fn from_margin(margin: f64) -> Self {
        if margin > 0.0 {
            Verdict::Pass
        } else if margin == 0.0 {
            Verdict::Tie
        } else {
            Verdict::Fail
        }
    }

    /// Whether the claim holds as a non-strict inequality.
    pub fn holds_weakly(self) -> bool {
        self != Verdict::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub statement: String,
    pub verdict: Verdict,
    pub margin: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl Claim {
    fn new(id: &str, statement: &str, lhs: f64, rhs: f64) -> Self {
        let margin = lhs - rhs;
        Self {
            id: id.into(),
            statement: statement.into(),
            verdict: Verdict::from_margin(margin),
            margin,
            lhs,
            rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimsReport {
    pub claims: Vec<Claim>,
}

impl ClaimsReport {
    pub fn get(&self, id: &str) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn row<'a>(rows: &'a [EvalRow], c: Combination) -> Result<&'a EvalRow> {
    rows.iter()
        .find(|r| r.name == c.name())
        .ok_or_else(|| Error::MissingField(format!("table3 row {}", c.name())))
}

/// Mean noise over the rows of one sampler.
fn mean_noise(rows: &[NoiseRow], model: &str) -> Result<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.model == model).map(|r| r.avg_noise).collect();
    if v.is_empty() {
        return Err(Error::MissingField(format!("table2 rows for {model}")));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluate the claims from Table II- and Table III-shaped rows. Every one
/// of the seven combinations must be present.
pub fn verify_claims(noise: &[NoiseRow], seg: &[EvalRow]) -> Result<ClaimsReport> {
    let original = row(seg, Combination::Original)?;
    let mut best = f64::NEG_INFINITY;
    for c in Combination::ALL.into_iter().filter(|&c| c != Combination::Original) {
        best = best.max(row(seg, c)?.ap50_95);
    }
    let ddpm_noise = mean_noise(noise, "DDPM")?;
    let ddim_noise = mean_noise(noise, "DDIM")?;
    let ddpm_aupc = row(seg, Combination::Ddpm)?.aupc;
    let mut ddim_min = f64::INFINITY;
    for c in Combination::ALL.into_iter().filter(|c| c.contains_ddim()) {
        ddim_min = ddim_min.min(row(seg, c)?.aupc);
    }
    let all = row(seg, Combination::All)?;
    // Both orderings must hold; the one with the smaller margin is reported.
    let (lhs, rhs) = if all.ap50 - original.ap50 <= all.ap50_95 - original.ap50_95 {
        (all.ap50, original.ap50)
    } else {
        (all.ap50_95, original.ap50_95)
    };
    Ok(ClaimsReport {
        claims: vec![
            Claim::new(
                "C1",
                "best mixed-source AP_50:95 exceeds the Original-only AP_50:95",
                best,
                original.ap50_95,
            ),
            Claim::new(
                "C2",
                "DDIM samples are at least as noisy as DDPM samples",
                ddim_noise,
                ddpm_noise,
            ),
            Claim::new(
                "C3",
                "every DDIM-containing combination has AUPC at least that of DDPM alone",
                ddim_min,
                ddpm_aupc,
            ),
            Claim::new(
                "C4",
                "DDPM+DDIM+Original matches or beats Original on both AP_50 and AP_50:95",
                lhs,
                rhs,
            ),
        ],
    })
}

/// Recompute the claims from `table2.csv` and `table3.csv` in `dir`.
pub fn verify_dir(dir: &Path) -> Result<ClaimsReport> {
    let noise = read_table2(&dir.join("table2.csv"))?;
    let seg = read_rows_csv(&dir.join("table3.csv"))?;
    verify_claims(&noise, &seg)
}
