//! Edge platform: polls collectors, sequences readings into telemetry
//! messages, and pushes them toward the hub over a lossy uplink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor::{Collector, Reading, SensorError};

/// Device-to-cloud telemetry envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetryMessage {
    /// Per-device counter, gapless at the sender.
    pub sequence: u64,
    pub reading: Reading,
    pub sent_at_ms: i64,
}

impl TelemetryMessage {
    /// JSON payload as transmitted over the uplink.
    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("telemetry message serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    Dropped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ChannelCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Uplink that drops each message independently with a fixed probability.
#[derive(Debug, Clone)]
pub struct LossyChannel {
    drop_probability: f64,
    rng: ChaCha8Rng,
    counters: ChannelCounters,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("drop probability {0} is outside [0, 1]")]
pub struct InvalidProbability(pub f64);

impl LossyChannel {
    pub fn new(drop_probability: f64, rng: ChaCha8Rng) -> Result<Self, InvalidProbability> {
        if !(0.0..=1.0).contains(&drop_probability) {
            return Err(InvalidProbability(drop_probability));
        }
        Ok(Self {
            drop_probability,
            rng,
            counters: ChannelCounters::default(),
        })
    }

    pub fn seeded(drop_probability: f64, seed: u64) -> Result<Self, InvalidProbability> {
        Self::new(drop_probability, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn drop_probability(&self) -> f64 {
        self.drop_probability
    }

    pub fn counters(&self) -> ChannelCounters {
        self.counters
    }

    /// Decides the fate of one message.
    pub fn transmit(&mut self) -> Delivery {
        self.counters.sent += 1;
        // one draw per message, even at p = 0 or 1, keeps streams aligned
        let u: f64 = self.rng.random();
        if u < self.drop_probability {
            self.counters.dropped += 1;
            Delivery::Dropped
        } else {
            self.counters.delivered += 1;
            Delivery::Delivered
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Healthy,
    Restarted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RestartEvent {
    pub device_id: u32,
    pub at_ms: i64,
    /// Sequence number the next message will carry.
    pub next_sequence: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayCounters {
    /// Polls attempted on the sampling grid.
    pub polls: u64,
    /// Readings obtained from collectors.
    pub generated: u64,
    /// Messages handed to the uplink.
    pub sent: u64,
}

/// One edge device with its collectors and watchdog.
#[derive(Debug, Clone)]
pub struct Gateway {
    pub device_id: u32,
    collectors: Vec<Collector>,
    next_sequence: u64,
    stall_window_ms: i64,
    last_ok_poll_ms: Option<i64>,
    registered_at_ms: i64,
    stalled_until_ms: Option<i64>,
    restarts: Vec<RestartEvent>,
    counters: GatewayCounters,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("gateway {0} has no collectors")]
    NoCollectors(u32),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

impl Gateway {
    pub fn new(
        device_id: u32,
        collectors: Vec<Collector>,
        stall_window_ms: i64,
        registered_at_ms: i64,
    ) -> Result<Self, GatewayError> {
        if collectors.is_empty() {
            return Err(GatewayError::NoCollectors(device_id));
        }
        Ok(Self {
            device_id,
            collectors,
            next_sequence: 0,
            stall_window_ms,
            last_ok_poll_ms: None,
            registered_at_ms,
            stalled_until_ms: None,
            restarts: Vec::new(),
            counters: GatewayCounters::default(),
        })
    }

    pub fn collectors(&self) -> &[Collector] {
        &self.collectors
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn counters(&self) -> GatewayCounters {
        self.counters
    }

    pub fn restarts(&self) -> &[RestartEvent] {
        &self.restarts
    }

    /// Hangs the collector link until `until_ms` (or until a watchdog restart).
    pub fn inject_stall(&mut self, until_ms: i64) {
        self.stalled_until_ms = Some(until_ms);
    }

    fn is_stalled(&self, t_ms: i64) -> bool {
        self.stalled_until_ms.is_some_and(|until| t_ms < until)
    }

    /// Polls every collector at `t` and sends one message per reading.
    ///
    /// Returns the messages that the channel delivered, in send order.
    pub fn poll_and_send(
        &mut self,
        t_ms: i64,
        channel: &mut LossyChannel,
    ) -> Result<Vec<TelemetryMessage>, GatewayError> {
        self.counters.polls += 1;
        if self.is_stalled(t_ms) {
            return Ok(Vec::new());
        }
        let mut delivered = Vec::with_capacity(self.collectors.len());
        for collector in &mut self.collectors {
            let reading = collector.read(t_ms)?;
            self.counters.generated += 1;
            let msg = TelemetryMessage {
                sequence: self.next_sequence,
                reading,
                sent_at_ms: t_ms,
            };
            self.next_sequence += 1;
            self.counters.sent += 1;
            if channel.transmit() == Delivery::Delivered {
                delivered.push(msg);
            }
        }
        self.last_ok_poll_ms = Some(t_ms);
        Ok(delivered)
    }

    /// Restarts the gateway if no poll succeeded within the stall window.
    ///
    /// A restart clears any collector hang and keeps the sequence counter.
    pub fn watchdog_tick(&mut self, now_ms: i64) -> Health {
        let reference = self.last_ok_poll_ms.unwrap_or(self.registered_at_ms);
        if now_ms - reference <= self.stall_window_ms {
            return Health::Healthy;
        }
        self.stalled_until_ms = None;
        self.last_ok_poll_ms = Some(now_ms);
        self.restarts.push(RestartEvent {
            device_id: self.device_id,
            at_ms: now_ms,
            next_sequence: self.next_sequence,
        });
        Health::Restarted
    }
}
