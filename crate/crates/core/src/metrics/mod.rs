//! Privacy, quality and utility evaluation.

pub mod privacy;
pub mod quality;
pub mod utility;

pub use privacy::{
    calibrate_threshold, privacy_report, CalibrationMode, PairSet, PrivacyReport, Threshold,
    ThresholdProvenance,
};
pub use quality::{fid, frechet_distance, psnr, ssim, ssim_with_grad, FeatureStats};
pub use utility::{utility_report, PredictionTable, UtilityMetric, UtilityReport};
