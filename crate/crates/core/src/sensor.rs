//! Synthetic sensor boxes.
//!
//! A [`Collector`] owns a [`ClimateScenario`] and an explicit RNG state and
//! produces one [`Reading`] per sampling period. Values are drawn in physical
//! units, perturbed with gaussian noise, clamped to the sensor's measurement
//! range, and only then encoded to the integer form carried on the wire.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{aq_voltage_to_code, decode_raw, dust_from_lpo, encode_raw};

/// Default sampling period of a sensor box.
pub const DEFAULT_PERIOD_MS: i64 = 15_000;

/// Measurement ranges of the sensor suite fitted to each box.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSuite {
    pub temperature_c: RangeInclusive<f64>,
    pub humidity_pct: RangeInclusive<f64>,
    pub co2_ppm: RangeInclusive<i64>,
    pub dust_pcs_per_l: RangeInclusive<i64>,
    pub air_quality_code: RangeInclusive<i64>,
}

impl SensorSuite {
    pub const fn standard() -> Self {
        Self {
            temperature_c: -40.0..=80.0,
            humidity_pct: 5.0..=99.0,
            co2_ppm: 0..=2000,
            dust_pcs_per_l: 0..=28_000,
            air_quality_code: 0..=1023,
        }
    }

    /// Checks every field of `reading` against the suite's ranges.
    pub fn accepts(&self, reading: &Reading) -> bool {
        self.temperature_c
            .contains(&decode_raw(reading.temperature_raw))
            && self
                .humidity_pct
                .contains(&decode_raw(reading.humidity_raw))
            && self.co2_ppm.contains(&reading.co2_ppm)
            && self.dust_pcs_per_l.contains(&reading.dust_pcs_per_l)
            && self.air_quality_code.contains(&reading.air_quality_code)
            && reading.vibration_count >= 0
    }
}

impl Default for SensorSuite {
    fn default() -> Self {
        Self::standard()
    }
}

/// One sample of all environmental parameters, in raw integer encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reading {
    pub device_id: u32,
    pub collector_id: u32,
    pub utc_timestamp_ms: i64,
    /// Relative humidity in hundredths of a percent.
    pub humidity_raw: i64,
    /// Temperature in hundredths of a degree Celsius.
    pub temperature_raw: i64,
    pub co2_ppm: i64,
    pub dust_pcs_per_l: i64,
    pub air_quality_code: i64,
    /// Rising edges counted during the sampling window.
    pub vibration_count: i64,
}

impl Reading {
    pub fn humidity_pct(&self) -> f64 {
        decode_raw(self.humidity_raw)
    }

    pub fn temperature_c(&self) -> f64 {
        decode_raw(self.temperature_raw)
    }
}

/// Physical-unit value for each generated parameter.
///
/// Dust is expressed as the sensor's low-pulse-occupancy ratio and air
/// quality as the AQ sensor's output voltage, so the integer encodings are
/// produced the same way the collector firmware produces them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Climate {
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub co2_ppm: f64,
    pub dust_lpo: f64,
    pub aq_voltage: f64,
}

impl Climate {
    /// Half of each sensor's stated accuracy.
    pub const DEFAULT_NOISE: Climate = Climate {
        temperature_c: 0.25,
        humidity_pct: 1.0,
        co2_ppm: 100.0,
        dust_lpo: 0.0,
        aq_voltage: 0.0,
    };
}

/// A recorded stream of readings used by trace-replay scenarios.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// Keyed by timestamp.
    samples: BTreeMap<i64, Reading>,
    /// How long a sample stays valid after its timestamp.
    hold_ms: i64,
}

impl Trace {
    pub fn new(readings: impl IntoIterator<Item = Reading>, hold_ms: i64) -> Self {
        Self {
            samples: readings
                .into_iter()
                .map(|r| (r.utc_timestamp_ms, r))
                .collect(),
            hold_ms,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The latest sample at or before `t` that is still within its hold time.
    pub fn covering(&self, t: i64) -> Option<&Reading> {
        let (&ts, reading) = self.samples.range(..=t).next_back()?;
        (t - ts < self.hold_ms).then_some(reading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    Constant {
        baseline: Climate,
    },
    /// `baseline + amplitude * sin(2π t / period)` per parameter, `t` in
    /// seconds since the Unix epoch.
    Sinusoid {
        baseline: Climate,
        amplitude: Climate,
        period_s: f64,
    },
    TraceReplay {
        trace: Trace,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClimateScenario {
    pub kind: ScenarioKind,
    pub noise_stddev: Climate,
    /// Mean rising-edge count per sampling window (Poisson).
    pub vibration_rate: f64,
    pub seed: u64,
}

impl ClimateScenario {
    pub fn constant(baseline: Climate, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Constant { baseline },
            noise_stddev: Climate::default(),
            vibration_rate: 0.0,
            seed,
        }
    }

    pub fn sinusoid(baseline: Climate, amplitude: Climate, period_s: f64, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Sinusoid {
                baseline,
                amplitude,
                period_s,
            },
            noise_stddev: Climate::default(),
            vibration_rate: 0.0,
            seed,
        }
    }

    pub fn replay(trace: Trace, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::TraceReplay { trace },
            noise_stddev: Climate::default(),
            vibration_rate: 0.0,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_stddev: Climate) -> Self {
        self.noise_stddev = noise_stddev;
        self
    }

    pub fn with_vibration_rate(mut self, rate: f64) -> Self {
        self.vibration_rate = rate;
        self
    }

    /// Noise-free physical values at `t`.
    fn expected_climate(&self, t_ms: i64) -> Result<Climate, SensorError> {
        match &self.kind {
            ScenarioKind::Constant { baseline } => Ok(*baseline),
            ScenarioKind::Sinusoid {
                baseline,
                amplitude,
                period_s,
            } => {
                let phase = (std::f64::consts::TAU * (t_ms as f64 / 1000.0) / period_s).sin();
                Ok(Climate {
                    temperature_c: baseline.temperature_c + amplitude.temperature_c * phase,
                    humidity_pct: baseline.humidity_pct + amplitude.humidity_pct * phase,
                    co2_ppm: baseline.co2_ppm + amplitude.co2_ppm * phase,
                    dust_lpo: baseline.dust_lpo + amplitude.dust_lpo * phase,
                    aq_voltage: baseline.aq_voltage + amplitude.aq_voltage * phase,
                })
            }
            ScenarioKind::TraceReplay { trace } => {
                let r = trace
                    .covering(t_ms)
                    .ok_or(SensorError::MissingTraceData { t_ms })?;
                Ok(Climate {
                    temperature_c: r.temperature_c(),
                    humidity_pct: r.humidity_pct(),
                    co2_ppm: r.co2_ppm as f64,
                    dust_lpo: r.dust_pcs_per_l as f64 / crate::encoding::DUST_FULL_SCALE as f64,
                    aq_voltage: r.air_quality_code as f64 / crate::encoding::AQ_MAX_CODE as f64
                        * crate::encoding::AQ_FULL_SCALE_VOLTS,
                })
            }
        }
    }

    fn replayed_vibration(&self, t_ms: i64) -> Option<i64> {
        match &self.kind {
            ScenarioKind::TraceReplay { trace } => trace.covering(t_ms).map(|r| r.vibration_count),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("trace has no sample covering t = {t_ms} ms")]
    MissingTraceData { t_ms: i64 },
    #[error("t = {t_ms} ms is not aligned to the {period_ms} ms sampling period")]
    Misaligned { t_ms: i64, period_ms: i64 },
}

/// Draws one reading at `t` using `rng`.
///
/// Noise is drawn in a fixed order (temperature, humidity, CO2, dust, AQ)
/// followed by the vibration count, so equal RNG states give equal readings.
pub fn sample<R: Rng + ?Sized>(
    scenario: &ClimateScenario,
    device_id: u32,
    collector_id: u32,
    t_ms: i64,
    rng: &mut R,
) -> Result<Reading, SensorError> {
    let base = scenario.expected_climate(t_ms)?;
    let noise = &scenario.noise_stddev;
    let mut perturb = |value: f64, stddev: f64| {
        let z: f64 = StandardNormal.sample(rng);
        value + stddev * z
    };
    let temperature = perturb(base.temperature_c, noise.temperature_c);
    let humidity = perturb(base.humidity_pct, noise.humidity_pct);
    let co2 = perturb(base.co2_ppm, noise.co2_ppm);
    let lpo = perturb(base.dust_lpo, noise.dust_lpo);
    let volts = perturb(base.aq_voltage, noise.aq_voltage);

    let vibration_count = match scenario.replayed_vibration(t_ms) {
        Some(count) => count,
        None if scenario.vibration_rate > 0.0 => {
            // rate is finite and positive, so construction cannot fail
            let poisson = Poisson::new(scenario.vibration_rate).expect("valid Poisson rate");
            poisson.sample(rng) as i64
        }
        None => 0,
    };

    let suite = SensorSuite::standard();
    Ok(Reading {
        device_id,
        collector_id,
        utc_timestamp_ms: t_ms,
        humidity_raw: encode_raw(clamp(humidity, &suite.humidity_pct)),
        temperature_raw: encode_raw(clamp(temperature, &suite.temperature_c)),
        co2_ppm: crate::encoding::round_half_up_ratio(clamp(co2, &(0.0..=2000.0)), 1, 1),
        dust_pcs_per_l: dust_from_lpo(clamp(lpo, &(0.0..=1.0))).expect("clamped"),
        air_quality_code: aq_voltage_to_code(clamp(volts, &(0.0..=5.0))).expect("clamped"),
        vibration_count,
    })
}

fn clamp(value: f64, range: &RangeInclusive<f64>) -> f64 {
    if value.is_nan() {
        return *range.start();
    }
    value.clamp(*range.start(), *range.end())
}

/// RNG for one collector, derived from the scenario seed.
///
/// Each (device, collector) pair gets its own ChaCha stream so adding a
/// device never perturbs the readings of the others.
pub fn collector_rng(seed: u64, device_id: u32, collector_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(device_id) << 32) | u64::from(collector_id));
    rng
}

/// A collector attached to an edge device: scenario plus RNG state.
#[derive(Debug, Clone)]
pub struct Collector {
    pub device_id: u32,
    pub collector_id: u32,
    pub period_ms: i64,
    scenario: ClimateScenario,
    rng: ChaCha8Rng,
}

impl Collector {
    pub fn new(
        scenario: ClimateScenario,
        device_id: u32,
        collector_id: u32,
        period_ms: i64,
    ) -> Self {
        let rng = collector_rng(scenario.seed, device_id, collector_id);
        Self {
            device_id,
            collector_id,
            period_ms,
            scenario,
            rng,
        }
    }

    pub fn scenario(&self) -> &ClimateScenario {
        &self.scenario
    }

    /// Samples at `t`, which must lie on the sampling grid.
    pub fn read(&mut self, t_ms: i64) -> Result<Reading, SensorError> {
        if t_ms.rem_euclid(self.period_ms) != 0 {
            return Err(SensorError::Misaligned {
                t_ms,
                period_ms: self.period_ms,
            });
        }
        sample(
            &self.scenario,
            self.device_id,
            self.collector_id,
            t_ms,
            &mut self.rng,
        )
    }
}
