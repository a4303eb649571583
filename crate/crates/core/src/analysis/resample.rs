use std::ops::Range;

use super::TimeSeries;

/// Bucket width used to despike readings before fluctuation analysis.
pub const MEDIAN_BUCKET_MS: i64 = 5 * 60_000;
/// Points kept when thinning a series for display.
pub const DISPLAY_POINTS: usize = 720;

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// One point per non-empty epoch-aligned bucket, stamped with the bucket
/// start and valued at the bucket median.
pub fn median_resample(series: &TimeSeries, bucket_ms: i64) -> TimeSeries {
    assert!(bucket_ms > 0, "bucket width must be positive");
    let mut out = Vec::new();
    let mut bucket: Vec<f64> = Vec::new();
    let mut current: Option<i64> = None;
    for &(t, v) in series.points() {
        let start = t.div_euclid(bucket_ms) * bucket_ms;
        if current != Some(start) {
            if let Some(prev) = current {
                out.push((prev, median(&mut bucket)));
            }
            bucket.clear();
            current = Some(start);
        }
        bucket.push(v);
    }
    if let Some(prev) = current {
        out.push((prev, median(&mut bucket)));
    }
    TimeSeries::from_sorted(out, series.unit())
}

/// Thins `series` to `target` points on an even time grid.
///
/// The grid covers the series' own time span extended by one average
/// sampling step, so a day of 15 s samples maps onto a 2 min grid. Each grid
/// point takes the value of the nearest source sample (earlier on ties).
/// Series with at most `target` points are returned unchanged.
pub fn uniform_resample(series: &TimeSeries, target: usize) -> TimeSeries {
    let n = series.len();
    if n <= target {
        return series.clone();
    }
    let (first, _) = series.first().expect("non-empty");
    let (last, _) = series.last().expect("non-empty");
    // span = (last - first) * n / (n - 1), grid step = span / target
    let num = i128::from(last - first) * n as i128;
    let den = (n as i128 - 1) * target as i128;
    let grid = (0..target).map(|k| first + (k as i128 * num / den) as i64);
    sample_nearest(series, grid)
}

/// Like [`uniform_resample`] but over an explicit `[start, end)` range, as
/// when a user selects a date range.
pub fn uniform_resample_over(series: &TimeSeries, target: usize, range: Range<i64>) -> TimeSeries {
    if series.len() <= target || target == 0 {
        return series.clone();
    }
    let width = i128::from(range.end - range.start);
    let grid = (0..target).map(|k| range.start + (k as i128 * width / target as i128) as i64);
    sample_nearest(series, grid)
}

fn sample_nearest(series: &TimeSeries, grid: impl Iterator<Item = i64>) -> TimeSeries {
    let pts = series.points();
    let mut j = 0;
    let mut out = Vec::new();
    for t in grid {
        while j + 1 < pts.len() && pts[j + 1].0 <= t {
            j += 1;
        }
        let pick = if j + 1 < pts.len() && (pts[j + 1].0 - t) < (t - pts[j].0).abs() {
            j + 1
        } else {
            j
        };
        out.push((t, pts[pick].1));
    }
    TimeSeries::from_sorted(out, series.unit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(points: Vec<(i64, f64)>) -> TimeSeries {
        TimeSeries::new(points, "%").unwrap()
    }

    #[test]
    fn constant_series_stays_constant() {
        let s = series((0..600).map(|k| (k * 15_000, 25.7)).collect());
        let m = median_resample(&s, MEDIAN_BUCKET_MS);
        assert_eq!(m.len(), 30);
        assert!(m.values().all(|v| v == 25.7));
    }

    #[test]
    fn spike_is_removed() {
        let s = series(vec![(0, 10.0), (15_000, 10.0), (30_000, 999.0)]);
        assert_eq!(median_resample(&s, MEDIAN_BUCKET_MS).points(), &[(0, 10.0)]);
    }

    #[test]
    fn even_bucket_averages_middle_pair() {
        let s = series(vec![(0, 4.0), (1, 1.0), (2, 3.0), (3, 2.0)]);
        assert_eq!(median_resample(&s, MEDIAN_BUCKET_MS).points(), &[(0, 2.5)]);
    }

    #[test]
    fn empty_buckets_are_omitted() {
        let s = series(vec![(10, 1.0), (20, 3.0), (900_001, 7.0)]);
        let m = median_resample(&s, MEDIAN_BUCKET_MS);
        assert_eq!(m.points(), &[(0, 2.0), (900_000, 7.0)]);
    }

    #[test]
    fn one_day_becomes_two_minute_grid() {
        let day0 = 18_722 * 86_400_000i64;
        let s = series((0..5760).map(|k| (day0 + k * 15_000, k as f64)).collect());
        let r = uniform_resample(&s, DISPLAY_POINTS);
        assert_eq!(r.len(), 720);
        assert!(r.points().windows(2).all(|w| w[1].0 - w[0].0 == 120_000));
        // every 8th source sample
        assert!(r
            .points()
            .iter()
            .enumerate()
            .all(|(k, p)| p.1 == (8 * k) as f64));
    }

    #[test]
    fn short_series_is_identity() {
        let s = series((0..100).map(|k| (k * 1000, k as f64)).collect());
        assert_eq!(uniform_resample(&s, DISPLAY_POINTS), s);
    }

    #[test]
    fn doubled_density_keeps_every_second_point() {
        let s = series((0..1440).map(|k| (k * 60_000, (k * k) as f64)).collect());
        let r = uniform_resample(&s, DISPLAY_POINTS);
        let expected: Vec<(i64, f64)> = s.points().iter().step_by(2).copied().collect();
        assert_eq!(r.points(), expected.as_slice());
    }

    #[test]
    fn explicit_range_grid() {
        let s = series((0..5000).map(|k| (k * 20_000, k as f64)).collect());
        let r = uniform_resample_over(&s, 720, 0..86_400_000);
        assert_eq!(r.len(), 720);
        assert_eq!(r.points()[1], (120_000, 6.0));
    }

    proptest! {
        #[test]
        fn resampled_length_is_capped(steps in prop::collection::vec(1i64..100_000, 1..3000)) {
            let mut t = 0;
            let pts: Vec<(i64, f64)> = steps.iter().map(|d| { t += d; (t, *d as f64) }).collect();
            let s = series(pts);
            let r = uniform_resample(&s, DISPLAY_POINTS);
            prop_assert_eq!(r.len(), s.len().min(DISPLAY_POINTS));
            prop_assert!(r.points().windows(2).all(|w| w[0].0 < w[1].0));
        }

        #[test]
        fn median_within_bucket_extremes(vals in prop::collection::vec(-50.0f64..150.0, 1..200)) {
            let s = series(vals.iter().enumerate().map(|(i, v)| (i as i64 * 15_000, *v)).collect());
            let m = median_resample(&s, MEDIAN_BUCKET_MS);
            for &(start, med) in m.points() {
                let bucket: Vec<f64> = s.window(start..start + MEDIAN_BUCKET_MS).values().collect();
                let lo = bucket.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = bucket.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= med && med <= hi);
            }
        }
    }
}
