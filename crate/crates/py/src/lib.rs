//! Python bindings.
//!
//! Time series cross the boundary as lists of `(utc_ms, value)` tuples.
//!
//! ```python
//! import hbmon
//! run = hbmon.simulate(days=7, seed=1)
//! print(run.loss_rate_percent, run.edge_share, run.consumer_share)
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hbmon_core::analysis::{self, AnalysisError, AnalysisOptions, SafeBand, TimeSeries};
use hbmon_core::csv_io;
use hbmon_core::encoding;
use hbmon_core::hub::{HopCounts, ReliabilityTier, TierName};
use hbmon_core::sim::{self, PipelineConfig, SimError};
use hbmon_core::store;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn analysis_err(e: AnalysisError) -> PyErr {
    value_err(e)
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::InvalidConfig(_)
        | SimError::Window(_)
        | SimError::Tier(_)
        | SimError::Channel(_) => value_err(e),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn series(points: Vec<(i64, f64)>) -> PyResult<TimeSeries> {
    TimeSeries::new(points, "").map_err(analysis_err)
}

#[pyfunction]
fn encode_raw(value: f64) -> i64 {
    encoding::encode_raw(value)
}

#[pyfunction]
fn decode_raw(raw: i64) -> f64 {
    encoding::decode_raw(raw)
}

#[pyfunction]
fn aq_voltage_to_code(volts: f64) -> PyResult<i64> {
    encoding::aq_voltage_to_code(volts).map_err(value_err)
}

#[pyfunction]
fn dust_from_lpo(lpo: f64) -> PyResult<i64> {
    encoding::dust_from_lpo(lpo).map_err(value_err)
}

#[pyfunction]
fn partition_key(utc_ms: i64) -> i64 {
    store::partition_key(utc_ms)
}

#[pyfunction]
fn expected_samples(duration_s: u64, period_s: u64) -> PyResult<u64> {
    analysis::expected_samples(duration_s, period_s).map_err(analysis_err)
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "hbmon")]
#[derive(Debug, Clone)]
struct LossReport {
    expected: u64,
    actual: u64,
    lost: u64,
    loss_rate_percent: f64,
}

#[pymethods]
impl LossReport {
    /// Loss rate at two decimals.
    fn display_percent(&self) -> String {
        format!("{:.2}", self.loss_rate_percent)
    }

    fn __repr__(&self) -> String {
        format!(
            "LossReport(expected={}, actual={}, lost={}, loss_rate_percent={})",
            self.expected, self.actual, self.lost, self.loss_rate_percent
        )
    }
}

impl From<analysis::LossReport> for LossReport {
    fn from(r: analysis::LossReport) -> Self {
        Self {
            expected: r.expected,
            actual: r.actual,
            lost: r.lost,
            loss_rate_percent: r.loss_rate_percent,
        }
    }
}

#[pyfunction]
fn loss_rate(expected: u64, actual: u64) -> PyResult<LossReport> {
    analysis::loss_rate(expected, actual)
        .map(Into::into)
        .map_err(analysis_err)
}

#[pyfunction]
#[pyo3(signature = (points, bucket_ms = analysis::MEDIAN_BUCKET_MS))]
fn median_resample(points: Vec<(i64, f64)>, bucket_ms: i64) -> PyResult<Vec<(i64, f64)>> {
    if bucket_ms <= 0 {
        return Err(value_err("bucket_ms must be positive"));
    }
    Ok(analysis::median_resample(&series(points)?, bucket_ms)
        .points()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (points, target = analysis::DISPLAY_POINTS))]
fn uniform_resample(points: Vec<(i64, f64)>, target: usize) -> PyResult<Vec<(i64, f64)>> {
    Ok(analysis::uniform_resample(&series(points)?, target)
        .points()
        .to_vec())
}

#[pyfunction]
fn arithmetic_mean(points: Vec<(i64, f64)>) -> PyResult<f64> {
    analysis::arithmetic_mean(&series(points)?).map_err(analysis_err)
}

/// Moving average at every point of `points` inside `[start_ms, end_ms)`.
#[pyfunction]
#[pyo3(signature = (points, start_ms, end_ms, half_window_ms = analysis::CMA_HALF_WINDOW_MS))]
fn centered_moving_average(
    points: Vec<(i64, f64)>,
    start_ms: i64,
    end_ms: i64,
    half_window_ms: i64,
) -> PyResult<Vec<(i64, f64)>> {
    analysis::centered_moving_average(&series(points)?, start_ms..end_ms, half_window_ms)
        .map(|s| s.points().to_vec())
        .map_err(analysis_err)
}

#[pyfunction]
fn nearest_rank(values: Vec<f64>, percent: u32) -> PyResult<f64> {
    if percent > 100 {
        return Err(value_err("percent must be within 0..=100"));
    }
    analysis::nearest_rank(&values, percent).ok_or_else(|| analysis_err(AnalysisError::EmptySeries))
}

/// `(p7, p93, half_width)`; `half_width` is `None` when the band is not
/// relaxed and the bounds are `ma + p7` and `ma + p93`.
#[pyfunction]
fn percentile_band(fluctuations: Vec<(i64, f64)>) -> PyResult<(f64, f64, Option<f64>)> {
    let b = analysis::percentile_band(&series(fluctuations)?).map_err(analysis_err)?;
    Ok((b.p7, b.p93, b.band.half_width()))
}

#[pyclass(frozen, get_all, module = "hbmon")]
struct FluctuationAnalysis {
    start_ms: i64,
    end_ms: i64,
    mean: f64,
    p7: f64,
    p93: f64,
    /// `None` unless the band was relaxed.
    band_halfwidth: Option<f64>,
    readings: Vec<(i64, f64)>,
    cma: Vec<(i64, f64)>,
    fluctuations: Vec<(i64, f64)>,
    bounds: Vec<(f64, f64)>,
    out_of_band: Vec<(i64, f64)>,
}

#[pymethods]
impl FluctuationAnalysis {
    fn __repr__(&self) -> String {
        format!(
            "FluctuationAnalysis(mean={:.1}, p7={:.1}, p93={:.1}, band_halfwidth={:?}, out_of_band={})",
            self.mean,
            self.p7,
            self.p93,
            self.band_halfwidth,
            self.out_of_band.len()
        )
    }
}

/// Full EN 15757 procedure on raw readings that include the ±15-day margins.
#[pyfunction]
#[pyo3(signature = (points, start_ms, end_ms, median_bucket_ms = analysis::MEDIAN_BUCKET_MS, half_window_ms = analysis::CMA_HALF_WINDOW_MS))]
fn analyze(
    points: Vec<(i64, f64)>,
    start_ms: i64,
    end_ms: i64,
    median_bucket_ms: i64,
    half_window_ms: i64,
) -> PyResult<FluctuationAnalysis> {
    if median_bucket_ms <= 0 {
        return Err(value_err("median_bucket_ms must be positive"));
    }
    let options = AnalysisOptions {
        median_bucket_ms,
        half_window_ms,
    };
    let a = analysis::analyze(&series(points)?, start_ms..end_ms, options).map_err(analysis_err)?;
    Ok(FluctuationAnalysis {
        start_ms,
        end_ms,
        mean: a.mean,
        p7: a.p7,
        p93: a.p93,
        band_halfwidth: match a.band {
            SafeBand::Relaxed { half_width } => Some(half_width),
            SafeBand::Percentile { .. } => None,
        },
        readings: a.readings.points().to_vec(),
        cma: a.cma.points().to_vec(),
        fluctuations: a.fluctuations.points().to_vec(),
        bounds: a.bounds,
        out_of_band: a.out_of_band,
    })
}

fn hop_dict(c: &HopCounts) -> BTreeMap<&'static str, u64> {
    BTreeMap::from([
        ("expected", c.expected),
        ("generated", c.generated),
        ("sent", c.sent),
        ("hub_received", c.hub_received),
        ("rejected", c.rejected),
        ("consumed", c.consumed),
        ("stored", c.stored),
        ("uplink_dropped", c.uplink_dropped),
        ("consumer_dropped", c.consumer_dropped),
        ("source_missed", c.source_missed()),
        ("edge_loss", c.edge_loss()),
        ("consumer_loss", c.consumer_loss()),
        ("total_lost", c.total_lost()),
    ])
}

/// A finished pipeline run.
#[pyclass(module = "hbmon")]
#[derive(Debug)]
struct Run {
    outcome: sim::RunOutcome,
}

#[pymethods]
impl Run {
    /// Ledger counts per device id.
    #[getter]
    fn devices(&self) -> BTreeMap<u32, BTreeMap<&'static str, u64>> {
        self.outcome
            .ledger
            .devices
            .iter()
            .map(|(id, c)| (*id, hop_dict(c)))
            .collect()
    }

    #[getter]
    fn total(&self) -> BTreeMap<&'static str, u64> {
        hop_dict(&self.outcome.ledger.total())
    }

    #[getter]
    fn loss_rate_percent(&self) -> PyResult<f64> {
        self.loss_report().map(|r| r.loss_rate_percent)
    }

    fn loss_report(&self) -> PyResult<LossReport> {
        self.outcome
            .ledger
            .total()
            .loss_report()
            .map(Into::into)
            .map_err(analysis_err)
    }

    /// Share of lost samples lost on the uplink, `None` for a lossless run.
    #[getter]
    fn edge_share(&self) -> Option<f64> {
        self.outcome.ledger.total().edge_share()
    }

    #[getter]
    fn consumer_share(&self) -> Option<f64> {
        self.outcome.ledger.total().consumer_share()
    }

    /// `(hour_start_ms, messages_received, functions_executed)` per hour.
    #[getter]
    fn hourly_metrics(&self) -> Vec<(i64, u64, u64)> {
        self.outcome
            .metrics
            .iter()
            .map(|m| (m.hour_start_ms, m.messages_received, m.functions_executed))
            .collect()
    }

    #[getter]
    fn restarts(&self) -> usize {
        self.outcome.restarts.len()
    }

    /// Stored relative humidity of one collector over `[t0_ms, t1_ms)`.
    #[pyo3(signature = (device_id, t0_ms, t1_ms, collector_id = 1))]
    fn humidity(
        &self,
        device_id: u32,
        t0_ms: i64,
        t1_ms: i64,
        collector_id: u32,
    ) -> PyResult<Vec<(i64, f64)>> {
        self.outcome
            .store
            .humidity_series(device_id, collector_id, t0_ms, t1_ms)
            .map(|s| s.points().to_vec())
            .map_err(value_err)
    }

    /// Writes buildings.csv, devices.csv and sensing.csv into `dir`.
    fn export(&self, dir: PathBuf) -> PyResult<usize> {
        csv_io::export(&self.outcome.store, &dir)
            .map(|b| b.sensing.len())
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        let t = self.outcome.ledger.total();
        format!(
            "Run(expected={}, stored={}, tier={})",
            t.expected, t.stored, self.outcome.tier
        )
    }
}

/// Runs the three-box reference deployment.
#[pyfunction]
#[pyo3(signature = (days = 56, seed = 1, tier = "shared", consumer_drop = sim::REFERENCE_CONSUMER_DROP, edge_drop = sim::REFERENCE_EDGE_DROP, check_invariants = false))]
fn simulate(
    py: Python<'_>,
    days: i64,
    seed: u64,
    tier: &str,
    consumer_drop: f64,
    edge_drop: f64,
    check_invariants: bool,
) -> PyResult<Run> {
    let name = match tier {
        "shared" => TierName::Shared,
        "sla" => TierName::Sla,
        other => {
            return Err(value_err(format!(
                "unknown tier {other:?}; use \"shared\" or \"sla\""
            )))
        }
    };
    if days < 0 {
        return Err(value_err("days must be non-negative"));
    }
    let mut cfg = PipelineConfig::reference(days, seed)
        .with_tier(ReliabilityTier::new(name, consumer_drop).map_err(value_err)?);
    for d in &mut cfg.devices {
        d.edge_drop_probability = edge_drop;
    }
    cfg.check_invariants = check_invariants;
    let outcome = py.detach(|| sim::run(&cfg)).map_err(sim_err)?;
    Ok(Run { outcome })
}

#[pymodule]
fn hbmon(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LossReport>()?;
    m.add_class::<FluctuationAnalysis>()?;
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(encode_raw, m)?)?;
    m.add_function(wrap_pyfunction!(decode_raw, m)?)?;
    m.add_function(wrap_pyfunction!(aq_voltage_to_code, m)?)?;
    m.add_function(wrap_pyfunction!(dust_from_lpo, m)?)?;
    m.add_function(wrap_pyfunction!(partition_key, m)?)?;
    m.add_function(wrap_pyfunction!(expected_samples, m)?)?;
    m.add_function(wrap_pyfunction!(loss_rate, m)?)?;
    m.add_function(wrap_pyfunction!(median_resample, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_resample, m)?)?;
    m.add_function(wrap_pyfunction!(arithmetic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(centered_moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_rank, m)?)?;
    m.add_function(wrap_pyfunction!(percentile_band, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    #[test]
    fn module_round_trip() {
        Python::attach(|py| {
            let m = PyModule::new(py, "hbmon").unwrap();
            hbmon(&m).unwrap();
            let locals = PyDict::new(py);
            locals.set_item("hbmon", &m).unwrap();
            let check = |code: &str| {
                let c = std::ffi::CString::new(code).unwrap();
                py.eval(&c, None, Some(&locals))
                    .unwrap()
                    .extract::<bool>()
                    .unwrap()
            };
            assert!(check("hbmon.expected_samples(56 * 86400, 15) == 322560"));
            assert!(check(
                "hbmon.loss_rate(322560, 316251).display_percent() == '1.96'"
            ));
            assert!(check("hbmon.encode_raw(25.7) == 2570"));
            assert!(check("hbmon.partition_key(1617580800000) == 18722"));
            assert!(check(
                "hbmon.nearest_rank([float(v) for v in range(1, 101)], 93) == 93.0"
            ));
            assert!(check(
                "len(hbmon.uniform_resample([(k * 15000, 1.0) for k in range(5760)])) == 720"
            ));
            assert!(check("hbmon.simulate(days=1, edge_drop=0.0, tier='sla', consumer_drop=0.0).total['stored'] == 17280"));
        });
    }

    #[test]
    fn errors_map_to_python_exceptions() {
        Python::attach(|py| {
            let err = loss_rate(0, 0).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
            let err = simulate(py, 1, 1, "sla", 0.01, 0.0, false).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
            assert!(series(vec![(1, 0.0), (1, 0.0)]).is_err());
        });
    }
}
