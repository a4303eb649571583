//! Run reports: loss ledger, hourly metrics, loss tables and fluctuation
//! summaries, as text and CSV.
//!
//! Loss rates and shares render at two decimals and percentiles at one;
//! CSV files carry full precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{DateTime, FixedOffset, SecondsFormat, Utc};

use crate::analysis::{loss_rate, AnalysisError, FluctuationAnalysis, LossReport, SafeBand};
use crate::hub::{HopCounts, HourlyMetrics, LossLedger, TierName};
use crate::sim::RunOutcome;
use crate::store::StoreError;

pub const LEDGER_CSV_HEADER: [&str; 17] = [
    "device",
    "expected",
    "generated",
    "sent",
    "hub_received",
    "rejected",
    "consumed",
    "stored",
    "uplink_dropped",
    "consumer_dropped",
    "source_missed",
    "edge_loss",
    "consumer_loss",
    "total_lost",
    "loss_rate_percent",
    "edge_share_percent",
    "consumer_share_percent",
];
pub const METRICS_CSV_HEADER: [&str; 3] = [
    "hour_start_iso8601",
    "messages_received",
    "functions_executed",
];
pub const CHART_CSV_HEADER: [&str; 6] = ["timestamp", "value", "ma", "lower", "upper", "flagged"];

/// ISO 8601 with millisecond precision in the given offset.
pub fn iso8601(utc_ms: i64, offset: FixedOffset) -> String {
    let t = DateTime::<Utc>::from_timestamp_millis(utc_ms).expect("timestamp in chrono range");
    let secs = if utc_ms % 1000 == 0 {
        SecondsFormat::Secs
    } else {
        SecondsFormat::Millis
    };
    t.with_timezone(&offset).to_rfc3339_opts(secs, true)
}

fn utc() -> FixedOffset {
    FixedOffset::east_opt(0).expect("zero offset")
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn percent(share: Option<f64>) -> String {
    share.map_or_else(String::new, |s| (s * 100.0).to_string())
}

fn ledger_row(label: String, c: &HopCounts) -> Vec<String> {
    let rate = c
        .loss_report()
        .map(|r| r.loss_rate_percent.to_string())
        .unwrap_or_default();
    let mut row = vec![label];
    row.extend(
        [
            c.expected,
            c.generated,
            c.sent,
            c.hub_received,
            c.rejected,
            c.consumed,
            c.stored,
            c.uplink_dropped,
            c.consumer_dropped,
            c.source_missed(),
            c.edge_loss(),
            c.consumer_loss(),
            c.total_lost(),
        ]
        .map(|n| n.to_string()),
    );
    row.extend([rate, percent(c.edge_share()), percent(c.consumer_share())]);
    row
}

/// One row per device plus a `total` row.
pub fn ledger_csv(ledger: &LossLedger) -> String {
    let rows = ledger
        .devices
        .iter()
        .map(|(id, c)| ledger_row(id.to_string(), c))
        .chain(std::iter::once(ledger_row("total".into(), &ledger.total())));
    csv_string(&LEDGER_CSV_HEADER, rows)
}

fn share_text(share: Option<f64>) -> String {
    share.map_or_else(|| "-".into(), |s| format!("{:.2}%", s * 100.0))
}

fn rate_text(c: &HopCounts) -> String {
    c.loss_report()
        .map(|r| format!("{}%", r.display_percent()))
        .unwrap_or_else(|_| "-".into())
}

/// Human-readable ledger: per-device loss table and per-hop decomposition.
pub fn ledger_text(
    ledger: &LossLedger,
    names: &[(u32, String)],
    tier: TierName,
    consumer_drop: f64,
) -> String {
    let name_of = |id: u32| {
        names
            .iter()
            .find(|(d, _)| *d == id)
            .map_or_else(|| format!("device {id}"), |(_, n)| n.clone())
    };
    let mut s = String::new();
    let _ = writeln!(s, "Loss per device");
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>10} {:>8} {:>9}",
        "Device", "Expected", "Stored", "Lost", "Loss rate"
    );
    for (id, c) in &ledger.devices {
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10} {:>8} {:>9}",
            name_of(*id),
            c.expected,
            c.stored,
            c.expected - c.stored,
            rate_text(c)
        );
    }
    let t = ledger.total();
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>10} {:>8} {:>9}",
        "Total",
        t.expected,
        t.stored,
        t.expected - t.stored,
        rate_text(&t)
    );

    let _ = writeln!(s);
    let _ = writeln!(s, "Loss per hop");
    let _ = writeln!(s, "{:<24} {:>10} {:>10}", "Location", "Amount", "Share");
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>10}",
        "Edge to hub",
        t.edge_loss(),
        share_text(t.edge_share())
    );
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>10}",
        "Hub to consumer",
        t.consumer_loss(),
        share_text(t.consumer_share())
    );
    if t.source_missed() > 0 {
        let _ = writeln!(
            s,
            "{:<24} {:>10}",
            "Not sampled (stalls)",
            t.source_missed()
        );
    }
    if t.rejected > 0 {
        let _ = writeln!(s, "{:<24} {:>10}", "Rejected by hub", t.rejected);
    }

    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "Consumer tier: {tier} (drop probability {consumer_drop})"
    );
    if tier == TierName::Sla && t.expected > 0 {
        let pct = |n: u64| n as f64 / t.expected as f64 * 100.0;
        let _ = writeln!(
            s,
            "Reconciliation: the SLA tier bounds only the consumer stage. Edge loss stays at {:.2}% of expected \
             samples and consumer loss falls to {:.2}%, so the end-to-end rate of {} is dominated by the uplink.",
            pct(t.edge_loss()),
            pct(t.consumer_loss()),
            rate_text(&t)
        );
    }
    s
}

/// Hourly hub metrics with UTC hour starts.
pub fn metrics_csv(metrics: &[HourlyMetrics]) -> String {
    let rows = metrics.iter().map(|m| {
        vec![
            iso8601(m.hour_start_ms, utc()),
            m.messages_received.to_string(),
            m.functions_executed.to_string(),
        ]
    });
    csv_string(&METRICS_CSV_HEADER, rows)
}

/// A row of a per-device loss table.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub name: String,
    pub report: LossReport,
}

/// Loss reports per row plus a total over all rows.
pub fn loss_table(
    rows: &[(String, u64, u64)],
) -> Result<(Vec<LossRow>, LossReport), AnalysisError> {
    let mut out = Vec::with_capacity(rows.len());
    let (mut expected, mut actual) = (0, 0);
    for (name, e, a) in rows {
        out.push(LossRow {
            name: name.clone(),
            report: loss_rate(*e, *a)?,
        });
        expected += e;
        actual += a;
    }
    Ok((out, loss_rate(expected, actual)?))
}

pub fn loss_table_text(rows: &[LossRow], total: &LossReport) -> String {
    let mut s = String::new();
    let line = |s: &mut String, name: &str, r: &LossReport| {
        let _ = writeln!(
            s,
            "{:<24} {:>10} {:>10} {:>8} {:>9}",
            name,
            r.expected,
            r.actual,
            r.lost,
            format!("{}%", r.display_percent())
        );
    };
    let _ = writeln!(
        s,
        "{:<24} {:>10} {:>10} {:>8} {:>9}",
        "Sensor box", "Expected", "Actual", "Lost", "Loss rate"
    );
    for r in rows {
        line(&mut s, &r.name, &r.report);
    }
    line(&mut s, "Total", total);
    s
}

/// Summary of a fluctuation analysis; times shown in `offset`.
pub fn fluctuation_text(a: &FluctuationAnalysis, offset: FixedOffset) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Period: {} to {}",
        iso8601(a.period.start, offset),
        iso8601(a.period.end, offset)
    );
    let _ = writeln!(s, "Readings (5 min medians): {}", a.readings.len());
    let _ = writeln!(s, "Mean: {:.1}", a.mean);
    let _ = writeln!(s, "7th percentile of fluctuations: {:.1}", a.p7);
    let _ = writeln!(s, "93rd percentile of fluctuations: {:.1}", a.p93);
    match a.band {
        SafeBand::Relaxed { half_width } => {
            let _ = writeln!(s, "Safe band: MA ± {half_width:.1} (relaxed, both percentiles within {half_width:.1})");
        }
        SafeBand::Percentile { lower, upper } => {
            let _ = writeln!(s, "Safe band: MA {lower:+.1} to MA {upper:+.1}");
        }
    }
    let _ = writeln!(s, "Points outside the band: {}", a.out_of_band.len());
    for &(t, v) in &a.out_of_band {
        let _ = writeln!(s, "  {} {v:.2}", iso8601(t, offset));
    }
    s
}

/// Chart-ready rows: timestamp, value, ma, lower, upper, flagged.
pub fn chart_csv(a: &FluctuationAnalysis, offset: FixedOffset) -> String {
    let rows = a
        .readings
        .points()
        .iter()
        .zip(a.cma.values())
        .zip(&a.bounds)
        .map(|((&(t, v), ma), &(lo, hi))| {
            vec![
                iso8601(t, offset),
                v.to_string(),
                ma.to_string(),
                lo.to_string(),
                hi.to_string(),
                a.is_flagged(t).to_string(),
            ]
        });
    csv_string(&CHART_CSV_HEADER, rows)
}

fn write_file(path: &Path, text: &str) -> Result<(), StoreError> {
    fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `store/`, `ledger.csv`, `ledger.txt`, `metrics.csv` and
/// `restarts.csv` under `dir`.
pub fn write_run(outcome: &RunOutcome, consumer_drop: f64, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(|source| StoreError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    outcome.store.save(&dir.join("store"))?;
    let names: Vec<(u32, String)> = outcome
        .store
        .devices()
        .map(|d| (d.id, d.name.clone()))
        .collect();
    write_file(&dir.join("ledger.csv"), &ledger_csv(&outcome.ledger))?;
    write_file(
        &dir.join("ledger.txt"),
        &ledger_text(&outcome.ledger, &names, outcome.tier, consumer_drop),
    )?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
    let restarts = outcome.restarts.iter().map(|r| {
        vec![
            r.device_id.to_string(),
            iso8601(r.at_ms, utc()),
            r.next_sequence.to_string(),
        ]
    });
    write_file(
        &dir.join("restarts.csv"),
        &csv_string(&["device", "at_iso8601", "next_sequence"], restarts),
    )
}
