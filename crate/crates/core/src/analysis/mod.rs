//! Image-quality metrics and spectral diagnostics: amplitude/phase swaps,
//! radial and sub-band deviation profiles, and log-magnitude error maps.

mod metrics;
pub mod report;
mod spectral;

pub use metrics::{psnr, rmse, ssim, suv_max, ImageMetrics};
pub use report::Table;
pub use spectral::{
    deviation_profile, freq_error_map, swap_hybrid, swap_study, BandDeviation, DeviationProfile, RingDeviation,
    SwapHybrid, SwapRow, SwapStudy, LOG_EPS,
};
