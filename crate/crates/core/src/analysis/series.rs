use std::ops::Range;

use super::AnalysisError;

/// Strictly time-ordered `(utc_ms, value)` samples with a unit label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    points: Vec<(i64, f64)>,
    unit: String,
}

impl TimeSeries {
    pub fn new(points: Vec<(i64, f64)>, unit: impl Into<String>) -> Result<Self, AnalysisError> {
        if let Some(i) = points.windows(2).position(|w| w[0].0 >= w[1].0) {
            return Err(AnalysisError::NotIncreasing { index: i + 1 });
        }
        Ok(Self {
            points,
            unit: unit.into(),
        })
    }

    /// Builds a series from timestamps already known to be increasing.
    pub(crate) fn from_sorted(points: Vec<(i64, f64)>, unit: &str) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].0 < w[1].0));
        Self {
            points,
            unit: unit.to_string(),
        }
    }

    pub fn points(&self) -> &[(i64, f64)] {
        &self.points
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn first(&self) -> Option<(i64, f64)> {
        self.points.first().copied()
    }

    pub fn last(&self) -> Option<(i64, f64)> {
        self.points.last().copied()
    }

    /// Points with `start <= t < end`.
    pub fn window(&self, range: Range<i64>) -> TimeSeries {
        let lo = self.points.partition_point(|p| p.0 < range.start);
        let hi = self.points.partition_point(|p| p.0 < range.end);
        Self::from_sorted(self.points[lo..hi.max(lo)].to_vec(), &self.unit)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> TimeSeries {
        Self::from_sorted(
            self.points.iter().map(|&(t, v)| (t, f(v))).collect(),
            &self.unit,
        )
    }
}
