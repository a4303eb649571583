//! Discrete-event run of the whole pipeline on a virtual clock.
//!
//! Every device polls its collectors on the sampling grid, sends each
//! reading over its own lossy uplink, and delivered payloads reach the hub
//! after a fixed link latency. The hub consumer runs as soon as an event is
//! queued. Events at equal times are processed in scheduling order, so a run
//! is a pure function of its configuration.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{expected_samples, AnalysisError};
use crate::edge::{
    ChannelCounters, Gateway, GatewayError, InvalidProbability, LossyChannel, RestartEvent,
};
use crate::hub::{
    CloudHub, ConservationViolation, HopCounts, HourlyMetrics, HubError, LossLedger,
    ReliabilityTier, TierError, TierName,
};
use crate::sensor::{Climate, ClimateScenario, Collector, DEFAULT_PERIOD_MS};
use crate::store::{Building, Device, StoreError, TelemetryStore, DAY_MS};

pub const MINUTE_MS: i64 = 60_000;
pub const DEFAULT_STALL_WINDOW_MS: i64 = 5 * MINUTE_MS;
pub const DEFAULT_WATCHDOG_INTERVAL_MS: i64 = MINUTE_MS;
pub const DEFAULT_LINK_LATENCY_MS: i64 = 250;

/// Uplink drop probability giving 3140 of 967,680 samples lost before the hub.
pub const REFERENCE_EDGE_DROP: f64 = 0.00325;
/// Consumer drop probability giving 16,190 of 964,540 events lost.
pub const REFERENCE_CONSUMER_DROP: f64 = 0.0168;
/// 2021-04-05T00:00:00+01:00.
pub const REFERENCE_START_MS: i64 = 1_617_577_200_000;

/// A collector hang starting at `at_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stall {
    pub at_ms: i64,
    pub duration_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub id: u32,
    pub name: String,
    pub building_id: u32,
    pub collectors: Vec<u32>,
    pub scenario: ClimateScenario,
    pub edge_drop_probability: f64,
    pub stall_window_ms: i64,
    pub stalls: Vec<Stall>,
}

impl DeviceSpec {
    /// One collector (id 1), default watchdog window, no stalls.
    pub fn new(
        id: u32,
        name: impl Into<String>,
        building_id: u32,
        scenario: ClimateScenario,
    ) -> Self {
        Self {
            id,
            name: name.into(),
            building_id,
            collectors: vec![1],
            scenario,
            edge_drop_probability: 0.0,
            stall_window_ms: DEFAULT_STALL_WINDOW_MS,
            stalls: Vec::new(),
        }
    }

    pub fn with_edge_drop(mut self, p: f64) -> Self {
        self.edge_drop_probability = p;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub buildings: Vec<Building>,
    pub devices: Vec<DeviceSpec>,
    pub tier: ReliabilityTier,
    pub start_ms: i64,
    pub duration_ms: i64,
    pub period_ms: i64,
    /// Drives the uplink and consumer drop draws.
    pub seed: u64,
    pub link_latency_ms: i64,
    pub watchdog_interval_ms: i64,
    /// Check every conservation law after every event (slow for long runs).
    pub check_invariants: bool,
}

impl PipelineConfig {
    /// Three boxes in three buildings, one collector each, steady museum
    /// climate, drop rates matching the field deployment.
    pub fn reference(days: i64, seed: u64) -> Self {
        let names = ["The City Museum", "The City Theatre", "The Auditorium"];
        let buildings = names
            .iter()
            .zip(1..)
            .map(|(name, id)| Building {
                id,
                name: name.to_string(),
            })
            .collect();
        let baseline = Climate {
            temperature_c: 21.0,
            humidity_pct: 25.7,
            co2_ppm: 450.0,
            dust_lpo: 0.02,
            aq_voltage: 0.8,
        };
        let devices = (1..=3)
            .map(|id| {
                let scenario = ClimateScenario::constant(baseline, u64::from(id))
                    .with_noise(Climate::DEFAULT_NOISE);
                DeviceSpec::new(id, format!("sensor-box-{id}"), id, scenario)
                    .with_edge_drop(REFERENCE_EDGE_DROP)
            })
            .collect();
        let tier = ReliabilityTier::shared(REFERENCE_CONSUMER_DROP).expect("valid probability");
        Self {
            buildings,
            devices,
            tier,
            start_ms: REFERENCE_START_MS,
            duration_ms: days * DAY_MS,
            period_ms: DEFAULT_PERIOD_MS,
            seed,
            link_latency_ms: DEFAULT_LINK_LATENCY_MS,
            watchdog_interval_ms: DEFAULT_WATCHDOG_INTERVAL_MS,
            check_invariants: false,
        }
    }

    pub fn with_tier(mut self, tier: ReliabilityTier) -> Self {
        self.tier = tier;
        self
    }

    /// Grid samples each collector should produce.
    pub fn expected_per_collector(&self) -> Result<u64, AnalysisError> {
        let period_s = u64::try_from(self.period_ms / 1000).unwrap_or(0);
        let duration_s = u64::try_from(self.duration_ms / 1000).unwrap_or(0);
        expected_samples(duration_s, period_s)
    }

    fn validate(&self) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.period_ms <= 0 || self.period_ms % 1000 != 0 {
            return invalid(format!(
                "period must be a positive whole number of seconds, got {} ms",
                self.period_ms
            ));
        }
        if self.duration_ms < 0 || self.duration_ms % 1000 != 0 {
            return invalid(format!(
                "duration must be a non-negative whole number of seconds, got {} ms",
                self.duration_ms
            ));
        }
        self.expected_per_collector()?;
        if self.start_ms < 0 || self.start_ms % self.period_ms != 0 {
            return invalid(format!(
                "start {} ms is not on the {} ms sampling grid",
                self.start_ms, self.period_ms
            ));
        }
        if self.devices.is_empty() {
            return invalid("no devices configured".into());
        }
        if self.link_latency_ms < 0 {
            return invalid("link latency must be non-negative".into());
        }
        if self.watchdog_interval_ms <= 0 {
            return invalid("watchdog interval must be positive".into());
        }
        for d in &self.devices {
            if d.collectors.is_empty() {
                return Err(SimError::Gateway(GatewayError::NoCollectors(d.id)));
            }
            if d.stall_window_ms <= 0 {
                return invalid(format!("device {}: stall window must be positive", d.id));
            }
            if d.stalls.iter().any(|s| s.duration_ms < 0) {
                return invalid(format!("device {}: negative stall duration", d.id));
            }
            let mut ids = d.collectors.clone();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return invalid(format!("device {}: duplicate collector id", d.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Window(#[from] AnalysisError),
    #[error(transparent)]
    Tier(#[from] TierError),
    #[error(transparent)]
    Channel(#[from] InvalidProbability),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Conservation(#[from] ConservationViolation),
    #[error("device {device_id}: uplink counters broken (sent {sent}, delivered {delivered}, dropped {dropped}, gateway sent {gateway_sent})")]
    ChannelImbalance {
        device_id: u32,
        sent: u64,
        delivered: u64,
        dropped: u64,
        gateway_sent: u64,
    },
    #[error("{0}")]
    Settlement(String),
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub ledger: LossLedger,
    pub metrics: Vec<HourlyMetrics>,
    pub store: TelemetryStore,
    pub restarts: Vec<RestartEvent>,
    pub channels: BTreeMap<u32, ChannelCounters>,
    pub tier: TierName,
    pub events_processed: u64,
    /// Ledger checks performed during the run (0 unless enabled).
    pub invariant_checks: u64,
}

#[derive(Debug)]
enum Action {
    Poll(usize),
    Watchdog(usize),
    Stall { device: usize, until_ms: i64 },
    Arrive { device: usize, payload: Vec<u8> },
    Consume,
}

#[derive(Debug)]
struct Event {
    at_ms: i64,
    seq: u64,
    action: Action,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.seq) == (other.at_ms, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at_ms, other.seq).cmp(&(self.at_ms, self.seq))
    }
}

struct Node {
    gateway: Gateway,
    channel: LossyChannel,
    in_transit: u64,
    expected: u64,
}

struct Pipeline<'a> {
    config: &'a PipelineConfig,
    nodes: Vec<Node>,
    hub: CloudHub,
    store: TelemetryStore,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    end_ms: i64,
    events: u64,
    checks: u64,
}

/// Stream ids keep uplink and consumer draws independent of each other and
/// of the collectors.
fn channel_rng(seed: u64, device_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 40) | u64::from(device_id));
    rng
}

fn hub_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 << 40);
    rng
}

impl<'a> Pipeline<'a> {
    fn new(config: &'a PipelineConfig) -> Result<Self, SimError> {
        config.validate()?;
        let per_collector = config.expected_per_collector()?;
        let mut store = TelemetryStore::new();
        for b in &config.buildings {
            store.add_building(b.clone())?;
        }
        let mut nodes = Vec::with_capacity(config.devices.len());
        for d in &config.devices {
            store.add_device(Device {
                id: d.id,
                name: d.name.clone(),
                building_id: d.building_id,
            })?;
            let collectors = d
                .collectors
                .iter()
                .map(|&c| Collector::new(d.scenario.clone(), d.id, c, config.period_ms))
                .collect();
            nodes.push(Node {
                gateway: Gateway::new(d.id, collectors, d.stall_window_ms, config.start_ms)?,
                channel: LossyChannel::new(
                    d.edge_drop_probability,
                    channel_rng(config.seed, d.id),
                )?,
                in_transit: 0,
                expected: per_collector * d.collectors.len() as u64,
            });
        }
        let mut p = Self {
            config,
            nodes,
            hub: CloudHub::new(config.tier, hub_rng(config.seed)),
            store,
            queue: BinaryHeap::new(),
            next_seq: 0,
            end_ms: config.start_ms + config.duration_ms,
            events: 0,
            checks: 0,
        };
        for (i, d) in config.devices.iter().enumerate() {
            p.schedule(config.start_ms, Action::Poll(i));
            p.schedule(
                config.start_ms + config.watchdog_interval_ms,
                Action::Watchdog(i),
            );
            for s in &d.stalls {
                p.schedule(
                    s.at_ms,
                    Action::Stall {
                        device: i,
                        until_ms: s.at_ms + s.duration_ms,
                    },
                );
            }
        }
        Ok(p)
    }

    fn schedule(&mut self, at_ms: i64, action: Action) {
        self.queue.push(Event {
            at_ms,
            seq: self.next_seq,
            action,
        });
        self.next_seq += 1;
    }

    fn run(mut self) -> Result<RunOutcome, SimError> {
        while let Some(event) = self.queue.pop() {
            self.handle(event)?;
            self.events += 1;
            if self.config.check_invariants {
                self.check()?;
            }
        }
        self.finish()
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        let now = event.at_ms;
        match event.action {
            Action::Poll(i) => {
                let node = &mut self.nodes[i];
                let delivered = node.gateway.poll_and_send(now, &mut node.channel)?;
                node.in_transit += delivered.len() as u64;
                let arrival = now + self.config.link_latency_ms;
                for msg in delivered {
                    self.schedule(
                        arrival,
                        Action::Arrive {
                            device: i,
                            payload: msg.to_payload(),
                        },
                    );
                }
                if now + self.config.period_ms < self.end_ms {
                    self.schedule(now + self.config.period_ms, Action::Poll(i));
                }
            }
            Action::Watchdog(i) => {
                self.nodes[i].gateway.watchdog_tick(now);
                if now + self.config.watchdog_interval_ms < self.end_ms {
                    self.schedule(now + self.config.watchdog_interval_ms, Action::Watchdog(i));
                }
            }
            Action::Stall { device, until_ms } => self.nodes[device].gateway.inject_stall(until_ms),
            Action::Arrive { device, payload } => {
                self.nodes[device].in_transit -= 1;
                match self.hub.ingest_payload(&payload, now) {
                    Ok(()) => self.schedule(now, Action::Consume),
                    // counted by the hub as rejected, not lost
                    Err(HubError::ParseRejected(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Action::Consume => {
                self.hub.consume(&mut self.store)?;
            }
        }
        Ok(())
    }

    fn ledger(&self) -> LossLedger {
        let devices = self
            .nodes
            .iter()
            .map(|n| {
                let id = n.gateway.device_id;
                let gw = n.gateway.counters();
                let hub = self.hub.counters(id);
                let counts = HopCounts {
                    expected: n.expected,
                    generated: gw.generated,
                    sent: gw.sent,
                    in_transit: n.in_transit,
                    hub_received: hub.received,
                    rejected: hub.rejected,
                    queued: self.hub.queued_for(id),
                    consumed: hub.consumed,
                    stored: self.store.count_for(id),
                    uplink_dropped: n.channel.counters().dropped,
                    consumer_dropped: hub.dropped,
                };
                (id, counts)
            })
            .collect();
        LossLedger { devices }
    }

    fn check(&mut self) -> Result<(), SimError> {
        self.checks += 1;
        for n in &self.nodes {
            let c = n.channel.counters();
            let gateway_sent = n.gateway.counters().sent;
            if c.sent != c.delivered + c.dropped || c.sent != gateway_sent {
                return Err(SimError::ChannelImbalance {
                    device_id: n.gateway.device_id,
                    sent: c.sent,
                    delivered: c.delivered,
                    dropped: c.dropped,
                    gateway_sent,
                });
            }
        }
        self.ledger().check()?;
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutcome, SimError> {
        self.check()?;
        let ledger = self.ledger();
        let total = ledger.total();
        if !ledger.is_settled() {
            return Err(SimError::Settlement(format!(
                "{} messages in transit and {} queued after the last event",
                total.in_transit, total.queued
            )));
        }
        if self.store.len() as u64 != total.stored {
            return Err(SimError::Settlement(format!(
                "store holds {} records but the ledger counts {}",
                self.store.len(),
                total.stored
            )));
        }
        let metrics: Vec<HourlyMetrics> = self.hub.hourly_metrics().copied().collect();
        let received: u64 = metrics.iter().map(|m| m.messages_received).sum();
        let executed: u64 = metrics.iter().map(|m| m.functions_executed).sum();
        if received != total.hub_received || executed != total.consumed {
            return Err(SimError::Settlement(format!(
                "hourly metrics ({received} received, {executed} executed) disagree with the ledger ({} received, {} consumed)",
                total.hub_received, total.consumed
            )));
        }
        let restarts = self
            .nodes
            .iter()
            .flat_map(|n| n.gateway.restarts().iter().copied())
            .collect();
        let channels = self
            .nodes
            .iter()
            .map(|n| (n.gateway.device_id, n.channel.counters()))
            .collect();
        Ok(RunOutcome {
            ledger,
            metrics,
            store: self.store,
            restarts,
            channels,
            tier: self.config.tier.name,
            events_processed: self.events,
            invariant_checks: self.checks,
        })
    }
}

/// Runs the pipeline to completion and settles every counter.
pub fn run(config: &PipelineConfig) -> Result<RunOutcome, SimError> {
    Pipeline::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lossless(days: i64) -> PipelineConfig {
        let mut c =
            PipelineConfig::reference(days, 1).with_tier(ReliabilityTier::sla(0.0).unwrap());
        for d in &mut c.devices {
            d.edge_drop_probability = 0.0;
        }
        c
    }

    #[test]
    fn lossless_day_stores_every_sample() {
        let out = run(&lossless(1)).unwrap();
        let t = out.ledger.total();
        assert_eq!(t.expected, 3 * 5760);
        assert_eq!(t.stored, 3 * 5760);
        assert_eq!(t.total_lost(), 0);
        assert_eq!(t.edge_share(), None);
        assert_eq!(t.loss_report().unwrap().display_percent(), "0.00");
        assert_eq!(out.store.len(), 3 * 5760);
        assert_eq!(out.metrics.len(), 24);
        assert!(out.restarts.is_empty());
    }

    #[test]
    fn invariants_hold_after_every_event() {
        let mut c = PipelineConfig::reference(1, 9);
        c.check_invariants = true;
        let out = run(&c).unwrap();
        assert_eq!(out.invariant_checks, out.events_processed + 1);
        let t = out.ledger.total();
        assert_eq!(t.total_lost(), t.uplink_dropped + t.consumer_dropped);
    }

    #[test]
    fn same_seed_same_run() {
        let c = PipelineConfig::reference(1, 5);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.ledger, b.ledger);
        assert!(a.store.same_contents(&b.store));
        let other = run(&PipelineConfig { seed: 6, ..c }).unwrap();
        assert_ne!(a.ledger, other.ledger);
    }

    #[test]
    fn stall_triggers_one_restart_and_missed_samples() {
        let mut c = lossless(1);
        let at = c.start_ms + 3_600_000;
        c.devices[0].stalls.push(Stall {
            at_ms: at,
            duration_ms: 10 * MINUTE_MS,
        });
        let out = run(&c).unwrap();
        assert_eq!(out.restarts.len(), 1);
        let r = out.restarts[0];
        assert_eq!(r.device_id, 1);
        // last good poll at `at - 15 s`; first tick past the 5 min window
        assert_eq!(r.at_ms, at + 5 * MINUTE_MS);
        // the tick at `at + 5 min` was scheduled before the poll at that
        // instant, so the restart happens first and that poll succeeds
        let d1 = out.ledger.devices[&1];
        assert_eq!(d1.source_missed(), 20);
        // one hour of polls went out before the stall
        assert_eq!(r.next_sequence, 240);
        assert_eq!(out.ledger.devices[&2].source_missed(), 0);
    }

    #[test]
    fn misaligned_start_is_rejected() {
        let mut c = lossless(1);
        c.start_ms += 1;
        assert!(matches!(run(&c), Err(SimError::InvalidConfig(_))));
        let mut c = lossless(1);
        c.duration_ms = 100_000;
        assert!(matches!(
            run(&c),
            Err(SimError::Window(AnalysisError::MisalignedWindow { .. }))
        ));
    }

    #[test]
    fn dangling_building_is_rejected() {
        let mut c = lossless(1);
        c.devices[0].building_id = 99;
        assert!(matches!(
            run(&c),
            Err(SimError::Store(StoreError::ForeignKeyViolation { .. }))
        ));
    }
}
