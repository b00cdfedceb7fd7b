//! Quality metrics for generated image sets.

pub mod embed;
pub mod fid;
pub mod kid;
pub mod orr;
pub mod report;
pub mod snr;
pub mod timing;

pub use embed::{embed_stats, EmbedderConfig, FeatureEmbedder, FeatureStats};
pub use fid::{fid, sqrtm_psd};
pub use kid::{kid, median_bandwidth, rbf_kernel, KidEstimator};
pub use orr::{orr_proxy, HighlightDetector};
pub use report::{evaluate_generated, GenEvalReport, GenEvalRow, MetricsConfig};
pub use snr::{average_snr, snr};
pub use timing::time_inference;
