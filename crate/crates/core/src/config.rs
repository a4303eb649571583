//! TOML run and scenario files.
//!
//! A run file names a scenario file (resolved relative to the run file),
//! the topology, the consumer tier and the time window:
//!
//! ```toml
//! scenario = "museum.toml"
//! start = "2021-04-05T00:00:00+01:00"
//! duration_days = 56
//! period_s = 15
//! seed = 1
//! output_dir = "out/reference"
//!
//! [tier]
//! name = "shared"
//! consume_drop_probability = 0.0168
//!
//! [[buildings]]
//! id = 1
//! name = "The City Museum"
//!
//! [[devices]]
//! id = 1
//! name = "sensor-box-1"
//! building_id = 1
//! edge_drop_probability = 0.00325
//! ```
//!
//! A scenario file uses the keys `kind`, `baseline`, `amplitude`,
//! `period_s`, `noise_stddev`, `seed`, `vibration_rate`, `trace` and
//! `trace_device`.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use chrono::DateTime;
use serde::Deserialize;
use thiserror::Error;

use crate::csv_io::{parse_sensing, CsvError};
use crate::hub::{ReliabilityTier, TierError, TierName};
use crate::sensor::{Climate, ClimateScenario, Trace, DEFAULT_PERIOD_MS};
use crate::sim::{
    DeviceSpec, PipelineConfig, Stall, DEFAULT_LINK_LATENCY_MS, DEFAULT_STALL_WINDOW_MS,
    DEFAULT_WATCHDOG_INTERVAL_MS,
};
use crate::store::{Building, DAY_MS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("invalid timestamp {value:?}: {source}")]
    Timestamp {
        value: String,
        #[source]
        source: chrono::ParseError,
    },
    #[error(transparent)]
    Tier(#[from] TierError),
    #[error("trace {path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: CsvError,
    },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an RFC 3339 timestamp into UTC milliseconds.
pub fn parse_timestamp(value: &str) -> Result<i64, ConfigError> {
    DateTime::parse_from_rfc3339(value)
        .map(|t| t.timestamp_millis())
        .map_err(|source| ConfigError::Timestamp {
            value: value.to_string(),
            source,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKindName {
    Constant,
    Sinusoid,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: ScenarioKindName,
    #[serde(default)]
    pub baseline: Climate,
    #[serde(default)]
    pub amplitude: Climate,
    pub period_s: Option<f64>,
    pub noise_stddev: Option<Climate>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vibration_rate: f64,
    /// sensing.csv file to replay, relative to the scenario file.
    pub trace: Option<PathBuf>,
    /// Device whose rows are replayed; required when the trace holds several.
    pub trace_device: Option<u32>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut file: Self = read_toml(path)?;
        if let (Some(trace), Some(dir)) = (file.trace.as_mut(), path.parent()) {
            *trace = dir.join(&*trace);
        }
        Ok(file)
    }

    /// Builds the scenario; `period_ms` sets how long a replayed sample holds.
    pub fn build(&self, period_ms: i64) -> Result<ClimateScenario, ConfigError> {
        if !(self.vibration_rate.is_finite() && self.vibration_rate >= 0.0) {
            return invalid(format!(
                "vibration_rate must be finite and non-negative, got {}",
                self.vibration_rate
            ));
        }
        let noise = self.noise_stddev.unwrap_or(Climate::DEFAULT_NOISE);
        let parts = [
            noise.temperature_c,
            noise.humidity_pct,
            noise.co2_ppm,
            noise.dust_lpo,
            noise.aq_voltage,
        ];
        if parts.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return invalid("noise_stddev entries must be finite and non-negative");
        }
        let scenario = match self.kind {
            ScenarioKindName::Constant => ClimateScenario::constant(self.baseline, self.seed),
            ScenarioKindName::Sinusoid => {
                let Some(period_s) = self.period_s.filter(|p| p.is_finite() && *p > 0.0) else {
                    return invalid("sinusoid scenario needs a positive period_s");
                };
                ClimateScenario::sinusoid(self.baseline, self.amplitude, period_s, self.seed)
            }
            ScenarioKindName::Trace => {
                let Some(path) = &self.trace else {
                    return invalid("trace scenario needs a trace file");
                };
                ClimateScenario::replay(self.load_trace(path, period_ms)?, self.seed)
            }
        };
        Ok(scenario
            .with_noise(noise)
            .with_vibration_rate(self.vibration_rate))
    }

    fn load_trace(&self, path: &Path, period_ms: i64) -> Result<Trace, ConfigError> {
        let trace_err = |source| ConfigError::Trace {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(|source| {
            trace_err(CsvError::Io {
                file: path.display().to_string(),
                source,
            })
        })?;
        let records = parse_sensing(path.display().to_string(), file).map_err(trace_err)?;
        let mut devices: Vec<u32> = records.iter().map(|r| r.device_id).collect();
        devices.sort_unstable();
        devices.dedup();
        let device = match (self.trace_device, devices.as_slice()) {
            (Some(d), _) => d,
            (None, [only]) => *only,
            (None, []) => return invalid(format!("trace {} has no rows", path.display())),
            (None, _) => {
                return invalid(format!(
                    "trace {} holds several devices; set trace_device",
                    path.display()
                ))
            }
        };
        let readings: Vec<_> = records
            .iter()
            .filter(|r| r.device_id == device)
            .map(|r| r.reading())
            .collect();
        if readings.is_empty() {
            return invalid(format!(
                "trace {} has no rows for device {device}",
                path.display()
            ));
        }
        Ok(Trace::new(readings, period_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSection {
    pub name: TierName,
    #[serde(default)]
    pub consume_drop_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallSection {
    pub at: String,
    pub duration_s: i64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub id: u32,
    pub name: String,
    pub building_id: u32,
    #[serde(default = "default_collectors")]
    pub collectors: Vec<u32>,
    #[serde(default)]
    pub edge_drop_probability: f64,
    pub stall_window_s: Option<i64>,
    /// Overrides the run-level scenario for this device.
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub stalls: Vec<StallSection>,
}

fn default_collectors() -> Vec<u32> {
    vec![1]
}

/// A run file as written on disk. Command-line flags patch these fields
/// before [`RunConfig::resolve`] is called.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub start: String,
    pub duration_days: Option<i64>,
    pub duration_s: Option<i64>,
    #[serde(default = "default_period_s")]
    pub period_s: i64,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub link_latency_ms: Option<i64>,
    pub watchdog_interval_s: Option<i64>,
    pub tier: TierSection,
    pub buildings: Vec<Building>,
    pub devices: Vec<DeviceSection>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_period_s() -> i64 {
    DEFAULT_PERIOD_MS / 1000
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = read_toml(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn duration_ms(&self) -> Result<i64, ConfigError> {
        match (self.duration_days, self.duration_s) {
            (Some(d), None) if d >= 0 => Ok(d * DAY_MS),
            (None, Some(s)) if s >= 0 => Ok(s * 1000),
            (Some(_), Some(_)) => invalid("set only one of duration_days and duration_s"),
            (None, None) => invalid("duration_days or duration_s is required"),
            _ => invalid("duration must be non-negative"),
        }
    }

    /// Output directory, resolved against the run file's directory.
    pub fn output_path(&self) -> PathBuf {
        self.base_dir.join(&self.output_dir)
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn resolve(&self) -> Result<PipelineConfig, ConfigError> {
        if self.period_s <= 0 {
            return invalid(format!("period_s must be positive, got {}", self.period_s));
        }
        let period_ms = self.period_s * 1000;
        let duration_ms = self.duration_ms()?;
        if duration_ms % period_ms != 0 {
            return invalid(format!(
                "duration of {} s is not a whole number of {} s periods",
                duration_ms / 1000,
                self.period_s
            ));
        }
        let start_ms = parse_timestamp(&self.start)?;
        if start_ms % period_ms != 0 {
            return invalid(format!(
                "start {} is not on the {} s sampling grid",
                self.start, self.period_s
            ));
        }
        let tier = ReliabilityTier::new(self.tier.name, self.tier.consume_drop_probability)?;
        let shared = self.load_scenario(&self.path(&self.scenario), period_ms)?;

        let mut devices = Vec::with_capacity(self.devices.len());
        for d in &self.devices {
            if !(0.0..=1.0).contains(&d.edge_drop_probability) {
                return invalid(format!(
                    "device {}: edge_drop_probability {} is outside [0, 1]",
                    d.id, d.edge_drop_probability
                ));
            }
            let scenario = match &d.scenario {
                Some(p) => self.load_scenario(&self.path(p), period_ms)?,
                None => shared.clone(),
            };
            let mut stalls = Vec::with_capacity(d.stalls.len());
            for s in &d.stalls {
                stalls.push(Stall {
                    at_ms: parse_timestamp(&s.at)?,
                    duration_ms: s.duration_s * 1000,
                });
            }
            devices.push(DeviceSpec {
                id: d.id,
                name: d.name.clone(),
                building_id: d.building_id,
                collectors: d.collectors.clone(),
                scenario,
                edge_drop_probability: d.edge_drop_probability,
                stall_window_ms: d
                    .stall_window_s
                    .map_or(DEFAULT_STALL_WINDOW_MS, |s| s * 1000),
                stalls,
            });
        }
        Ok(PipelineConfig {
            buildings: self.buildings.clone(),
            devices,
            tier,
            start_ms,
            duration_ms,
            period_ms,
            seed: self.seed,
            link_latency_ms: self.link_latency_ms.unwrap_or(DEFAULT_LINK_LATENCY_MS),
            watchdog_interval_ms: self
                .watchdog_interval_s
                .map_or(DEFAULT_WATCHDOG_INTERVAL_MS, |s| s * 1000),
            check_invariants: false,
        })
    }

    fn load_scenario(&self, path: &Path, period_ms: i64) -> Result<ClimateScenario, ConfigError> {
        if !path.is_file() {
            return invalid(format!("scenario file {} does not exist", path.display()));
        }
        ScenarioFile::load(path)?.build(period_ms)
    }
}
