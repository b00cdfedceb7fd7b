//! Experiment configuration, dataset combinations, orchestration and claim
//! checks.

pub mod claims;
pub mod combos;
pub mod config;
pub mod experiment;
pub mod tables;

pub use claims::{verify_claims, verify_dir, Claim, ClaimsReport, Verdict};
pub use combos::{build_combination, build_combinations, Combination};
pub use config::{Counts, ExperimentConfig};
pub use experiment::{run_experiment, synth_originals, ExperimentOutput, Originals, SegSummary};
pub use tables::{NoiseRow, QualityRow, TimingRow};
