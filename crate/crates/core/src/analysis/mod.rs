//! Loss accounting and EN 15757 relative-humidity fluctuation analysis.

mod fluctuation;
mod loss;
mod resample;
mod series;

use thiserror::Error;

pub use fluctuation::{
    analyze, arithmetic_mean, centered_moving_average, flag_out_of_band, fluctuations,
    nearest_rank, percentile_band, AnalysisOptions, FluctuationAnalysis, PercentileBand, SafeBand,
    CMA_HALF_WINDOW_MS, RELAXED_HALF_WIDTH,
};
pub use loss::{expected_samples, loss_rate, LossReport};
pub use resample::{
    median_resample, uniform_resample, uniform_resample_over, DISPLAY_POINTS, MEDIAN_BUCKET_MS,
};
pub use series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("duration {duration_s} s is not a whole number of {period_s} s periods")]
    MisalignedWindow { duration_s: u64, period_s: u64 },
    #[error("sampling period must be positive")]
    InvalidPeriod,
    #[error("loss rate is undefined when no samples are expected")]
    UndefinedRate,
    #[error("{actual} samples collected but only {expected} expected (duplicate delivery?)")]
    OvercountDetected { expected: u64, actual: u64 },
    #[error("series is empty")]
    EmptySeries,
    #[error("timestamps must be strictly increasing (index {index})")]
    NotIncreasing { index: usize },
    #[error(
        "moving average needs data {missing_before_ms} ms earlier and {missing_after_ms} ms later than available"
    )]
    InsufficientContext {
        missing_before_ms: i64,
        missing_after_ms: i64,
    },
    #[error(
        "series and moving average disagree at index {index}: {series_ms} ms vs {cma_ms:?} ms"
    )]
    AlignmentError {
        index: usize,
        series_ms: i64,
        cma_ms: Option<i64>,
    },
}
