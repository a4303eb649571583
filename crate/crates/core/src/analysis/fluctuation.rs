//! Short-term fluctuation analysis of relative humidity following
//! EN 15757:2010.
//!
//! Readings are despiked with a 5-minute median, a 30-day centered moving
//! average (±15 days around each reading) gives the seasonal cycle, and the
//! fluctuations (reading minus average) are summarised by their 7th and 93rd
//! nearest-rank percentiles. When both percentiles lie strictly within
//! ±10 % RH the permissible band is relaxed to a symmetric ±10 % RH around
//! the moving average.

use std::ops::Range;

use serde::Serialize;

use super::resample::{median_resample, MEDIAN_BUCKET_MS};
use super::{AnalysisError, TimeSeries};
use crate::store::DAY_MS;

pub const CMA_HALF_WINDOW_MS: i64 = 15 * DAY_MS;
/// Half width of the relaxed band, in % RH.
pub const RELAXED_HALF_WIDTH: f64 = 10.0;
const LOWER_PERCENT: u32 = 7;
const UPPER_PERCENT: u32 = 93;

/// Compensated running sum (Neumaier), usable with negative terms.
#[derive(Debug, Default, Clone, Copy)]
struct RunningSum {
    sum: f64,
    carry: f64,
}

impl RunningSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn arithmetic_mean(series: &TimeSeries) -> Result<f64, AnalysisError> {
    if series.is_empty() {
        return Err(AnalysisError::EmptySeries);
    }
    let mut acc = RunningSum::default();
    series.values().for_each(|v| acc.add(v));
    Ok(acc.value() / series.len() as f64)
}

/// Mean of all `source` points within `[t - half_window, t + half_window]`
/// for every source timestamp `t` in `period`.
///
/// The source must extend a full half window beyond the first and last
/// evaluated point; otherwise the shortfall on each side is reported.
pub fn centered_moving_average(
    source: &TimeSeries,
    period: Range<i64>,
    half_window_ms: i64,
) -> Result<TimeSeries, AnalysisError> {
    let targets = source.window(period);
    let (Some((first_t, _)), Some((last_t, _))) = (targets.first(), targets.last()) else {
        return Err(AnalysisError::EmptySeries);
    };
    let (src_first, _) = source.first().expect("targets are a subset");
    let (src_last, _) = source.last().expect("targets are a subset");
    let missing_before_ms = (src_first - (first_t - half_window_ms)).max(0);
    let missing_after_ms = ((last_t + half_window_ms) - src_last).max(0);
    if missing_before_ms > 0 || missing_after_ms > 0 {
        return Err(AnalysisError::InsufficientContext {
            missing_before_ms,
            missing_after_ms,
        });
    }

    let pts = source.points();
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut acc = RunningSum::default();
    let mut out = Vec::with_capacity(targets.len());
    for t in targets.timestamps() {
        while hi < pts.len() && pts[hi].0 <= t + half_window_ms {
            acc.add(pts[hi].1);
            hi += 1;
        }
        while pts[lo].0 < t - half_window_ms {
            acc.add(-pts[lo].1);
            lo += 1;
        }
        out.push((t, acc.value() / (hi - lo) as f64));
    }
    Ok(TimeSeries::from_sorted(out, source.unit()))
}

fn check_aligned(series: &TimeSeries, cma: &TimeSeries) -> Result<(), AnalysisError> {
    for (index, &(t, _)) in series.points().iter().enumerate() {
        let other = cma.points().get(index).map(|p| p.0);
        if other != Some(t) {
            return Err(AnalysisError::AlignmentError {
                index,
                series_ms: t,
                cma_ms: other,
            });
        }
    }
    if cma.len() > series.len() {
        let (t, _) = cma.points()[series.len()];
        return Err(AnalysisError::AlignmentError {
            index: series.len(),
            series_ms: t,
            cma_ms: Some(t),
        });
    }
    Ok(())
}

/// Pointwise `series - cma`; both must share timestamps.
pub fn fluctuations(series: &TimeSeries, cma: &TimeSeries) -> Result<TimeSeries, AnalysisError> {
    check_aligned(series, cma)?;
    let pts = series
        .points()
        .iter()
        .zip(cma.points())
        .map(|(&(t, v), &(_, m))| (t, v - m))
        .collect();
    Ok(TimeSeries::from_sorted(pts, series.unit()))
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(percent · n / 100)`.
pub fn nearest_rank(values: &[f64], percent: u32) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Some(sorted[rank(sorted.len(), percent) - 1])
}

fn rank(n: usize, percent: u32) -> usize {
    (percent as usize * n).div_ceil(100).clamp(1, n)
}

/// Permissible range around the moving average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafeBand {
    /// Symmetric band of fixed half width.
    Relaxed { half_width: f64 },
    /// Offsets taken directly from the percentiles.
    Percentile { lower: f64, upper: f64 },
}

impl SafeBand {
    pub fn bounds(&self, ma: f64) -> (f64, f64) {
        match *self {
            SafeBand::Relaxed { half_width } => (ma - half_width, ma + half_width),
            SafeBand::Percentile { lower, upper } => (ma + lower, ma + upper),
        }
    }

    pub fn half_width(&self) -> Option<f64> {
        match *self {
            SafeBand::Relaxed { half_width } => Some(half_width),
            SafeBand::Percentile { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PercentileBand {
    pub p7: f64,
    pub p93: f64,
    pub band: SafeBand,
}

pub fn percentile_band(fluctuations: &TimeSeries) -> Result<PercentileBand, AnalysisError> {
    let mut sorted: Vec<f64> = fluctuations.values().collect();
    if sorted.is_empty() {
        return Err(AnalysisError::EmptySeries);
    }
    sorted.sort_unstable_by(f64::total_cmp);
    let p7 = sorted[rank(sorted.len(), LOWER_PERCENT) - 1];
    let p93 = sorted[rank(sorted.len(), UPPER_PERCENT) - 1];
    let band = if p7.abs() < RELAXED_HALF_WIDTH && p93.abs() < RELAXED_HALF_WIDTH {
        SafeBand::Relaxed {
            half_width: RELAXED_HALF_WIDTH,
        }
    } else {
        SafeBand::Percentile {
            lower: p7,
            upper: p93,
        }
    };
    Ok(PercentileBand { p7, p93, band })
}

/// Points strictly below or above their band.
pub fn flag_out_of_band(
    series: &TimeSeries,
    cma: &TimeSeries,
    band: &SafeBand,
) -> Result<Vec<(i64, f64)>, AnalysisError> {
    check_aligned(series, cma)?;
    Ok(series
        .points()
        .iter()
        .zip(cma.points())
        .filter(|(&(_, v), &(_, m))| {
            let (lower, upper) = band.bounds(m);
            v < lower || v > upper
        })
        .map(|(&p, _)| p)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub median_bucket_ms: i64,
    pub half_window_ms: i64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            median_bucket_ms: MEDIAN_BUCKET_MS,
            half_window_ms: CMA_HALF_WINDOW_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationAnalysis {
    pub period: Range<i64>,
    /// Median-resampled readings inside the period.
    pub readings: TimeSeries,
    pub mean: f64,
    pub cma: TimeSeries,
    pub fluctuations: TimeSeries,
    pub p7: f64,
    pub p93: f64,
    pub band: SafeBand,
    /// `(lower, upper)` per reading.
    pub bounds: Vec<(f64, f64)>,
    pub out_of_band: Vec<(i64, f64)>,
}

impl FluctuationAnalysis {
    pub fn band_halfwidth(&self) -> Option<f64> {
        self.band.half_width()
    }

    pub fn is_flagged(&self, t: i64) -> bool {
        self.out_of_band.binary_search_by_key(&t, |p| p.0).is_ok()
    }
}

/// Full procedure over raw readings that include the ±half-window margins
/// around `period`.
pub fn analyze(
    raw: &TimeSeries,
    period: Range<i64>,
    options: AnalysisOptions,
) -> Result<FluctuationAnalysis, AnalysisError> {
    let resampled = median_resample(raw, options.median_bucket_ms);
    let readings = resampled.window(period.clone());
    if readings.is_empty() {
        return Err(AnalysisError::EmptySeries);
    }
    let cma = centered_moving_average(&resampled, period.clone(), options.half_window_ms)?;
    let mean = arithmetic_mean(&readings)?;
    let fluct = fluctuations(&readings, &cma)?;
    let PercentileBand { p7, p93, band } = percentile_band(&fluct)?;
    let bounds = cma.values().map(|m| band.bounds(m)).collect();
    let out_of_band = flag_out_of_band(&readings, &cma, &band)?;
    Ok(FluctuationAnalysis {
        period,
        readings,
        mean,
        cma,
        fluctuations: fluct,
        p7,
        p93,
        band,
        bounds,
        out_of_band,
    })
}
