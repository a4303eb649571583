//! Cloud side of the pipeline: message hub, event consumer, hourly metrics
//! and the per-hop loss ledger.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{loss_rate, AnalysisError, LossReport};
use crate::edge::TelemetryMessage;
use crate::sensor::SensorSuite;
use crate::store::{StoreError, TelemetryStore};

pub const HOUR_MS: i64 = 3_600_000;
/// Highest consumer drop probability allowed on the SLA tier.
pub const SLA_MAX_DROP_PROBABILITY: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierName {
    Shared,
    Sla,
}

impl fmt::Display for TierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TierName::Shared => "shared",
            TierName::Sla => "sla",
        })
    }
}

/// Service plan of the consumer stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityTier {
    pub name: TierName,
    pub consume_drop_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum TierError {
    #[error("consumer drop probability {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("sla tier allows at most {SLA_MAX_DROP_PROBABILITY} drop probability, got {0}")]
    SlaExceeded(f64),
}

impl ReliabilityTier {
    pub fn new(name: TierName, consume_drop_probability: f64) -> Result<Self, TierError> {
        if !(0.0..=1.0).contains(&consume_drop_probability) {
            return Err(TierError::OutOfRange(consume_drop_probability));
        }
        if name == TierName::Sla && consume_drop_probability > SLA_MAX_DROP_PROBABILITY {
            return Err(TierError::SlaExceeded(consume_drop_probability));
        }
        Ok(Self {
            name,
            consume_drop_probability,
        })
    }

    pub fn shared(p: f64) -> Result<Self, TierError> {
        Self::new(TierName::Shared, p)
    }

    pub fn sla(p: f64) -> Result<Self, TierError> {
        Self::new(TierName::Sla, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HourlyMetrics {
    pub hour_start_ms: i64,
    pub messages_received: u64,
    pub functions_executed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HubEvent {
    pub message: TelemetryMessage,
    pub received_at_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumeOutcome {
    Stored { record_id: u64 },
    Dropped,
}

#[derive(Debug, Error)]
pub enum HubError {
    #[error("payload rejected: {0}")]
    ParseRejected(String),
    #[error("storage failure: {0}")]
    StorageError(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HubCounters {
    pub received: u64,
    pub rejected: u64,
    pub consumed: u64,
    pub dropped: u64,
}

/// Message hub plus the consumer function that persists events.
#[derive(Debug)]
pub struct CloudHub {
    tier: ReliabilityTier,
    rng: ChaCha8Rng,
    inbox: VecDeque<HubEvent>,
    metrics: BTreeMap<i64, HourlyMetrics>,
    per_device: BTreeMap<u32, HubCounters>,
    /// Payloads that could not be attributed to any device.
    unattributed_rejects: u64,
    suite: SensorSuite,
}

impl CloudHub {
    pub fn new(tier: ReliabilityTier, rng: ChaCha8Rng) -> Self {
        Self {
            tier,
            rng,
            inbox: VecDeque::new(),
            metrics: BTreeMap::new(),
            per_device: BTreeMap::new(),
            unattributed_rejects: 0,
            suite: SensorSuite::standard(),
        }
    }

    pub fn seeded(tier: ReliabilityTier, seed: u64) -> Self {
        Self::new(tier, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn tier(&self) -> ReliabilityTier {
        self.tier
    }

    pub fn queued(&self) -> usize {
        self.inbox.len()
    }

    pub fn counters(&self, device_id: u32) -> HubCounters {
        self.per_device.get(&device_id).copied().unwrap_or_default()
    }

    pub fn unattributed_rejects(&self) -> u64 {
        self.unattributed_rejects
    }

    pub fn queued_for(&self, device_id: u32) -> u64 {
        let c = self.counters(device_id);
        c.received - c.consumed - c.dropped
    }

    /// Hourly buckets in time order.
    pub fn hourly_metrics(&self) -> impl Iterator<Item = &HourlyMetrics> {
        self.metrics.values()
    }

    fn bucket(&mut self, t_ms: i64) -> &mut HourlyMetrics {
        let hour_start_ms = t_ms.div_euclid(HOUR_MS) * HOUR_MS;
        self.metrics.entry(hour_start_ms).or_insert(HourlyMetrics {
            hour_start_ms,
            messages_received: 0,
            functions_executed: 0,
        })
    }

    /// Parses a JSON telemetry payload and ingests it.
    pub fn ingest_payload(&mut self, payload: &[u8], now_ms: i64) -> Result<(), HubError> {
        match serde_json::from_slice::<TelemetryMessage>(payload) {
            Ok(msg) => self.ingest(msg, now_ms),
            Err(e) => {
                self.unattributed_rejects += 1;
                Err(HubError::ParseRejected(e.to_string()))
            }
        }
    }

    /// Accepts a telemetry message and queues an event for the consumer.
    pub fn ingest(&mut self, msg: TelemetryMessage, now_ms: i64) -> Result<(), HubError> {
        let device_id = msg.reading.device_id;
        if !self.suite.accepts(&msg.reading) {
            self.per_device.entry(device_id).or_default().rejected += 1;
            return Err(HubError::ParseRejected(format!(
                "reading from device {device_id} at {} ms is out of sensor range",
                msg.reading.utc_timestamp_ms
            )));
        }
        self.per_device.entry(device_id).or_default().received += 1;
        self.bucket(now_ms).messages_received += 1;
        self.inbox.push_back(HubEvent {
            message: msg,
            received_at_ms: now_ms,
        });
        Ok(())
    }

    /// Hands the oldest queued event to the consumer function.
    ///
    /// A dropped event never reaches the function, so only stored events
    /// count as executions. Returns `None` when the inbox is empty.
    pub fn consume(
        &mut self,
        store: &mut TelemetryStore,
    ) -> Result<Option<ConsumeOutcome>, HubError> {
        let Some(event) = self.inbox.pop_front() else {
            return Ok(None);
        };
        let device_id = event.message.reading.device_id;
        let u: f64 = self.rng.random();
        if u < self.tier.consume_drop_probability {
            self.per_device.entry(device_id).or_default().dropped += 1;
            return Ok(Some(ConsumeOutcome::Dropped));
        }
        let record_id = store.insert(&event.message.reading)?;
        self.per_device.entry(device_id).or_default().consumed += 1;
        self.bucket(event.received_at_ms).functions_executed += 1;
        Ok(Some(ConsumeOutcome::Stored { record_id }))
    }
}

/// Counts for one device (or the total) along the pipeline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HopCounts {
    /// Samples the sampling grid calls for.
    pub expected: u64,
    pub generated: u64,
    pub sent: u64,
    /// Delivered by the uplink but not yet ingested.
    pub in_transit: u64,
    pub hub_received: u64,
    pub rejected: u64,
    /// Ingested but not yet consumed.
    pub queued: u64,
    pub consumed: u64,
    pub stored: u64,
    /// Drops reported by the uplink itself.
    pub uplink_dropped: u64,
    /// Drops reported by the consumer stage itself.
    pub consumer_dropped: u64,
}

impl HopCounts {
    /// Grid slots with no reading (collector stalls).
    pub fn source_missed(&self) -> u64 {
        self.expected.saturating_sub(self.generated)
    }

    pub fn edge_loss(&self) -> u64 {
        self.sent
            .saturating_sub(self.hub_received + self.rejected + self.in_transit)
    }

    pub fn consumer_loss(&self) -> u64 {
        self.hub_received
            .saturating_sub(self.consumed + self.queued)
    }

    pub fn total_lost(&self) -> u64 {
        self.generated
            .saturating_sub(self.stored + self.in_transit + self.queued + self.rejected)
    }

    /// Share of lost samples lost on the uplink; `None` for a lossless run.
    pub fn edge_share(&self) -> Option<f64> {
        let lost = self.total_lost();
        (lost > 0).then(|| self.edge_loss() as f64 / lost as f64)
    }

    pub fn consumer_share(&self) -> Option<f64> {
        let lost = self.total_lost();
        (lost > 0).then(|| self.consumer_loss() as f64 / lost as f64)
    }

    /// End-to-end loss: expected grid samples versus stored records.
    pub fn loss_report(&self) -> Result<LossReport, AnalysisError> {
        loss_rate(self.expected, self.stored)
    }

    fn add(&mut self, o: &HopCounts) {
        self.expected += o.expected;
        self.generated += o.generated;
        self.sent += o.sent;
        self.in_transit += o.in_transit;
        self.hub_received += o.hub_received;
        self.rejected += o.rejected;
        self.queued += o.queued;
        self.consumed += o.consumed;
        self.stored += o.stored;
        self.uplink_dropped += o.uplink_dropped;
        self.consumer_dropped += o.consumer_dropped;
    }

    /// Checks every conservation law; returns the first one broken.
    pub fn check(&self) -> Result<(), ConservationViolation> {
        let fail = |law: &'static str| Err(ConservationViolation { law, counts: *self });
        if self.generated > self.expected && self.expected > 0 {
            return fail("generated <= expected");
        }
        if self.sent > self.generated {
            return fail("sent <= generated");
        }
        if self.hub_received + self.rejected + self.in_transit > self.sent {
            return fail("hub_received <= sent");
        }
        if self.consumed + self.queued > self.hub_received {
            return fail("consumed <= hub_received");
        }
        if self.stored != self.consumed {
            return fail("stored = consumed");
        }
        if self.edge_loss() != self.uplink_dropped {
            return fail("edge loss = uplink drops");
        }
        if self.consumer_loss() != self.consumer_dropped {
            return fail("consumer loss = consumer drops");
        }
        if self.total_lost() != self.edge_loss() + self.consumer_loss() {
            return fail("total lost = edge loss + consumer loss");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("conservation law `{law}` violated: {counts:?}")]
pub struct ConservationViolation {
    pub law: &'static str,
    pub counts: HopCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LossLedger {
    pub devices: BTreeMap<u32, HopCounts>,
}

impl LossLedger {
    pub fn total(&self) -> HopCounts {
        let mut t = HopCounts::default();
        self.devices.values().for_each(|c| t.add(c));
        t
    }

    pub fn check(&self) -> Result<(), ConservationViolation> {
        self.devices.values().try_for_each(HopCounts::check)?;
        self.total().check()
    }

    /// Whether nothing is still in flight.
    pub fn is_settled(&self) -> bool {
        let t = self.total();
        t.in_transit == 0 && t.queued == 0
    }
}
