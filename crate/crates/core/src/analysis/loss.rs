use serde::Serialize;

use super::AnalysisError;

/// Number of samples a box should produce over `duration_s`.
pub fn expected_samples(duration_s: u64, period_s: u64) -> Result<u64, AnalysisError> {
    if period_s == 0 {
        return Err(AnalysisError::InvalidPeriod);
    }
    if duration_s % period_s != 0 {
        return Err(AnalysisError::MisalignedWindow {
            duration_s,
            period_s,
        });
    }
    Ok(duration_s / period_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub expected: u64,
    pub actual: u64,
    pub lost: u64,
    /// Full precision; use [`LossReport::display_percent`] for tables.
    pub loss_rate_percent: f64,
}

impl LossReport {
    /// Loss rate at two decimals, e.g. `"1.96"`.
    pub fn display_percent(&self) -> String {
        format!("{:.2}", self.loss_rate_percent)
    }
}

/// `(expected - actual) / expected × 100`.
pub fn loss_rate(expected: u64, actual: u64) -> Result<LossReport, AnalysisError> {
    if expected == 0 {
        return Err(AnalysisError::UndefinedRate);
    }
    if actual > expected {
        return Err(AnalysisError::OvercountDetected { expected, actual });
    }
    let lost = expected - actual;
    Ok(LossReport {
        expected,
        actual,
        lost,
        loss_rate_percent: lost as f64 / expected as f64 * 100.0,
    })
}
