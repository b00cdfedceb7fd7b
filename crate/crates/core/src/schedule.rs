//! Diffusion noise schedules.
//!
//! Time is 1-based: `t = 1..=T`, with `t = 0` standing for the clean image
//! (`alpha_bar(0) = 1`). `alpha_bar` is accumulated as a running `f64`
//! product and stored, never recomputed from `betas` on the fly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

/// Serialized form of a schedule; the derived arrays are rebuilt on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind {
            ScheduleKind::Linear => linear_schedule(self.steps, self.beta_start, self.beta_end),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// `beta_t` linearly interpolated from `beta_start` (t = 1) to `beta_end`
/// (t = T).
pub fn linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs T >= 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    if steps == 1 && beta_start != beta_end {
        return Err(Error::config("a one-step schedule needs beta_start == beta_end"));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let schedule = NoiseSchedule::from_betas(
        ScheduleSpec {
            steps,
            beta_start,
            beta_end,
            kind: ScheduleKind::Linear,
        },
        betas,
    );
    schedule.check()?;
    Ok(schedule)
}

impl NoiseSchedule {
    fn from_betas(spec: ScheduleSpec, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0f64;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self {
            spec,
            betas,
            alphas,
            alpha_bars,
        }
    }

    /// Schedule with caller-supplied betas. Only the invariants that make the
    /// forward process well-defined are checked (`0 <= beta < 1`), so
    /// degenerate `beta = 0` schedules are allowed here.
    pub fn from_raw_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::config("betas must be nonempty and lie in [0, 1)"));
        }
        let spec = ScheduleSpec {
            steps: betas.len(),
            beta_start: betas[0],
            beta_end: betas[betas.len() - 1],
            kind: ScheduleKind::Linear,
        };
        Ok(Self::from_betas(spec, betas))
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        for (i, &b) in self.betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("beta_{} = {b} outside (0,1)", i + 1));
            }
            if i > 0 && b < self.betas[i - 1] {
                return bad(format!("beta decreases at t = {}", i + 1));
            }
        }
        for w in self.alpha_bars.windows(2) {
            if !(w[1] < w[0]) {
                return bad("alpha_bar is not strictly decreasing".into());
            }
        }
        let last = *self.alpha_bars.last().expect("nonempty");
        if !(last > 0.0 && self.alpha_bars[0] < 1.0) {
            return bad(format!("alpha_bar_T = {last} outside (0, alpha_bar_1)"));
        }
        Ok(())
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::TimeStep { t, max: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior variance `(1 - abar_{t-1}) / (1 - abar_t) * beta_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `S` evenly spaced steps ending at `T`: `t_i = floor(i * T / S)` for
    /// `i = 1..=S`.
    pub fn subsequence(&self, s: usize) -> Result<Vec<usize>> {
        let t = self.len();
        if s == 0 || s > t {
            return Err(Error::config(format!("subsequence length {s} outside 1..={t}")));
        }
        Ok((1..=s).map(|i| i * t / s).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScheduleSpec = serde_json::from_str(text)?;
        spec.build()
    }
}
