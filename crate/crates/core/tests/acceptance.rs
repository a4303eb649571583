//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//!     cargo test -p hbmon-core --test acceptance

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use hbmon_core::analysis::{
    analyze, centered_moving_average, expected_samples, flag_out_of_band, median_resample,
    nearest_rank, percentile_band, uniform_resample, AnalysisOptions, SafeBand, TimeSeries,
    DISPLAY_POINTS, MEDIAN_BUCKET_MS,
};
use hbmon_core::csv_io::{export, import, BUILDINGS_FILE, DEVICES_FILE, SENSING_FILE};
use hbmon_core::hub::{ReliabilityTier, TierName};
use hbmon_core::report::{ledger_text, loss_table};
use hbmon_core::sensor::{Climate, ClimateScenario, Collector, DEFAULT_PERIOD_MS};
use hbmon_core::sim::{run, PipelineConfig, Stall, MINUTE_MS, REFERENCE_START_MS};
use hbmon_core::store::DAY_MS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn end_to_end_loss() -> Outcome {
    let started = Instant::now();
    let out = run(&PipelineConfig::reference(56, 1)).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let total = out.ledger.total();
    let loss = total
        .loss_report()
        .map_err(|e| e.to_string())?
        .loss_rate_percent;
    let edge = total.edge_share().unwrap_or(0.0) * 100.0;
    let consumer = total.consumer_share().unwrap_or(0.0) * 100.0;
    let detail =
        format!("loss {loss:.3}%, edge {edge:.2}%, consumer {consumer:.2}%, wall {secs:.1} s");
    ensure(
        (loss - 2.00).abs() <= 0.10
            && (edge - 16.0).abs() <= 3.0
            && (consumer - 84.0).abs() <= 3.0
            && secs < 60.0,
        detail,
    )
}

fn sla_what_if() -> Outcome {
    let tier = ReliabilityTier::sla(0.0005).map_err(|e| e.to_string())?;
    let out = run(&PipelineConfig::reference(56, 1).with_tier(tier)).map_err(|e| e.to_string())?;
    let loss = out
        .ledger
        .total()
        .loss_report()
        .map_err(|e| e.to_string())?
        .loss_rate_percent;
    let names: Vec<(u32, String)> = (1..=3).map(|id| (id, format!("sensor-box-{id}"))).collect();
    let text = ledger_text(&out.ledger, &names, TierName::Sla, 0.0005);
    let reconciled = text.contains("Reconciliation");
    ensure(
        (0.25..=0.45).contains(&loss) && reconciled,
        format!(
            "loss {loss:.3}%, reconciliation note {}",
            if reconciled { "present" } else { "missing" }
        ),
    )
}

fn table1_replay() -> Outcome {
    let rows = [
        ("The City Museum".to_string(), 322_560, 316_251),
        ("The City Theatre".to_string(), 322_560, 316_121),
        ("The Auditorium".to_string(), 322_560, 315_978),
    ];
    let (per_row, total) = loss_table(&rows).map_err(|e| e.to_string())?;
    let mut got: Vec<String> = per_row.iter().map(|r| r.report.display_percent()).collect();
    got.push(total.display_percent());
    ensure(
        got == ["1.96", "2.00", "2.04", "2.00"],
        format!("rates {}", got.join(", ")),
    )
}

fn expected_sample_arithmetic() -> Outcome {
    let long = expected_samples(56 * 86_400, 15).map_err(|e| e.to_string())?;
    let day = expected_samples(86_400, 15).map_err(|e| e.to_string())?;
    ensure(
        long == 322_560 && day == 5_760,
        format!("56 d -> {long}, 1 d -> {day}"),
    )
}

fn series(points: Vec<(i64, f64)>) -> TimeSeries {
    TimeSeries::new(points, "%RH").expect("increasing timestamps")
}

/// Readings every 5 minutes from 0 to `days` (inclusive).
fn grid(days: i64, f: impl Fn(i64) -> f64) -> TimeSeries {
    series(
        (0..=days * DAY_MS / MEDIAN_BUCKET_MS)
            .map(|k| (k * MEDIAN_BUCKET_MS, f(k * MEDIAN_BUCKET_MS)))
            .collect(),
    )
}

fn constant_series() -> Outcome {
    let raw = grid(46, |_| 45.0);
    let a = analyze(&raw, 15 * DAY_MS..31 * DAY_MS, AnalysisOptions::default())
        .map_err(|e| e.to_string())?;
    let zero = a.fluctuations.values().all(|f| f == 0.0);
    ensure(
        zero && a.band == (SafeBand::Relaxed { half_width: 10.0 }) && a.out_of_band.is_empty(),
        format!(
            "{} points, all fluctuations zero: {zero}, band {:?}, {} flags",
            a.readings.len(),
            a.band,
            a.out_of_band.len()
        ),
    )
}

fn oracle_rank(values: &[f64], percent: u32) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let k = (1..=n)
        .find(|&k| 100 * k >= percent as usize * n)
        .unwrap_or(n);
    sorted[k - 1]
}

fn percentile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=500);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let extra = rng.random_range(1..=100);
        for p in [7, 93, extra] {
            if nearest_rank(&values, p) != Some(oracle_rank(&values, p)) {
                mismatches += 1;
            }
        }
        let fl = series(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as i64, v))
                .collect(),
        );
        let band = percentile_band(&fl).map_err(|e| e.to_string())?;
        if band.p7 != oracle_rank(&values, 7) || band.p93 != oracle_rank(&values, 93) {
            mismatches += 1;
        }
    }
    ensure(
        mismatches == 0,
        format!("200 fixtures, {mismatches} mismatches"),
    )
}

fn cma_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(50..400);
        let mut t = 0i64;
        let pts: Vec<(i64, f64)> = (0..n)
            .map(|_| {
                t += rng.random_range(1..3 * 3_600_000);
                (t, rng.random_range(20.0..80.0))
            })
            .collect();
        let (first, last) = (pts[0].0, pts[n - 1].0);
        let half = rng.random_range(3_600_000..(last - first) / 3);
        let src = series(pts.clone());
        let period = first + half..last - half + 1;
        let cma = centered_moving_average(&src, period.clone(), half).map_err(|e| e.to_string())?;
        let targets: Vec<i64> = pts
            .iter()
            .map(|p| p.0)
            .filter(|t| period.contains(t))
            .collect();
        if cma.len() != targets.len() {
            return Err(format!(
                "{} CMA points for {} targets",
                cma.len(),
                targets.len()
            ));
        }
        for ((ct, cv), tt) in cma.points().iter().zip(targets) {
            let window: Vec<f64> = pts
                .iter()
                .filter(|p| (p.0 - tt).abs() <= half)
                .map(|p| p.1)
                .collect();
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            if *ct != tt {
                return Err(format!("CMA stamped {ct}, expected {tt}"));
            }
            worst = worst.max(((cv - mean) / mean).abs());
        }
    }
    ensure(
        worst <= 1e-9,
        format!("50 fixtures, worst relative error {worst:.2e}"),
    )
}

fn sinusoid_attenuation() -> Outcome {
    let period_ms = 60.0 * DAY_MS as f64;
    let omega = 2.0 * std::f64::consts::PI / period_ms;
    let amplitude = 3.0;
    let raw = grid(90, |t| 40.0 + amplitude * (omega * t as f64).sin());
    let a = analyze(&raw, 15 * DAY_MS..75 * DAY_MS, AnalysisOptions::default())
        .map_err(|e| e.to_string())?;
    // Project the CMA onto sin/cos over exactly one period.
    let n = a.cma.len() as f64;
    let mean = a.cma.values().sum::<f64>() / n;
    let (mut s, mut c) = (0.0, 0.0);
    for &(t, v) in a.cma.points() {
        s += (v - mean) * (omega * t as f64).sin();
        c += (v - mean) * (omega * t as f64).cos();
    }
    let fitted = 2.0 / n * s.hypot(c);
    let factor = fitted / amplitude;
    let analytic = 2.0 / std::f64::consts::PI;
    let rel = (factor - analytic).abs() / analytic;
    ensure(
        rel <= 0.02,
        format!(
            "factor {factor:.5} vs 2/pi {analytic:.5} ({:.3}% off)",
            rel * 100.0
        ),
    )
}

fn relaxation_fixture() -> Outcome {
    // 100 fluctuations whose 7th and 93rd nearest-rank values are -4.0 and 4.2.
    let mut values: Vec<f64> = (1..=6).map(|k| -9.0 + 0.5 * k as f64).collect();
    values.push(-4.0);
    values.extend((0..85).map(|k| -3.9 + 8.0 * k as f64 / 84.0));
    values.push(4.2);
    values.extend((1..=7).map(|k| 4.2 + 0.7 * k as f64));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in (1..values.len()).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    let base = 40.0;
    let readings = series(
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (i as i64 * MEDIAN_BUCKET_MS, base + v))
            .collect(),
    );
    let cma = readings.map_values(|_| base);
    let fl = series(
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as i64 * MEDIAN_BUCKET_MS, v))
            .collect(),
    );
    let band = percentile_band(&fl).map_err(|e| e.to_string())?;
    let flags = flag_out_of_band(&readings, &cma, &band.band).map_err(|e| e.to_string())?;
    let (lower, upper) = band.band.bounds(base);
    ensure(
        band.p7 == -4.0
            && band.p93 == 4.2
            && band.band.half_width() == Some(10.0)
            && flags.is_empty(),
        format!(
            "p7 {:.1}, p93 {:.1}, band [{lower:.1}, {upper:.1}] around {base:.1}, {} flags",
            band.p7,
            band.p93,
            flags.len()
        ),
    )
}

fn simulated_day() -> Result<TimeSeries, String> {
    let baseline = Climate {
        temperature_c: 21.0,
        humidity_pct: 25.7,
        co2_ppm: 450.0,
        dust_lpo: 0.02,
        aq_voltage: 0.8,
    };
    let scenario = ClimateScenario::constant(baseline, 5).with_noise(Climate::DEFAULT_NOISE);
    let mut collector = Collector::new(scenario, 1, 1, DEFAULT_PERIOD_MS);
    let pts = (0..5_760)
        .map(|k| {
            let t = REFERENCE_START_MS + k * DEFAULT_PERIOD_MS;
            collector
                .read(t)
                .map(|r| (t, r.humidity_pct()))
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    TimeSeries::new(pts, "%RH").map_err(|e| e.to_string())
}

fn resampling() -> Outcome {
    let day = simulated_day()?;
    let thin = uniform_resample(&day, DISPLAY_POINTS);
    let even = thin
        .points()
        .windows(2)
        .all(|w| w[1].0 - w[0].0 == 2 * MINUTE_MS);

    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut leaks = 0;
    for _ in 0..200 {
        let n = rng.random_range(3..=20);
        let mut offsets: Vec<i64> = (0..MEDIAN_BUCKET_MS / 1_000).map(|s| s * 1_000).collect();
        for i in (1..offsets.len()).rev() {
            offsets.swap(i, rng.random_range(0..=i));
        }
        let mut offsets = offsets[..n].to_vec();
        offsets.sort_unstable();
        let clean: Vec<f64> = (0..n).map(|_| rng.random_range(39.0..41.0)).collect();
        let mut dirty = clean.clone();
        let spike_at = rng.random_range(0..n);
        let spike = if rng.random_bool(0.5) { 400.0 } else { -400.0 };
        dirty[spike_at] = spike;
        let bucket = 7 * MEDIAN_BUCKET_MS;
        let s = series(
            offsets
                .iter()
                .zip(&dirty)
                .map(|(o, v)| (bucket + o, *v))
                .collect(),
        );
        let out = median_resample(&s, MEDIAN_BUCKET_MS);
        let rest: Vec<f64> = clean
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != spike_at)
            .map(|(_, v)| *v)
            .collect();
        let lo = rest.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match out.points() {
            [(t, v)] if *t == bucket && (lo..=hi).contains(v) => {}
            _ => leaks += 1,
        }
    }
    ensure(
        day.len() == 5_760 && thin.len() == 720 && even && leaks == 0,
        format!(
            "{} -> {} points, 2-minute spacing: {even}; spike survived in {leaks}/200 buckets",
            day.len(),
            thin.len()
        ),
    )
}

fn csv_roundtrip() -> Outcome {
    let out = run(&PipelineConfig::reference(7, 4)).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    export(&out.store, &a).map_err(|e| e.to_string())?;
    let back = import(&a).map_err(|e| e.to_string())?;
    export(&back, &b).map_err(|e| e.to_string())?;
    let golden = [
        (BUILDINGS_FILE, include_str!("golden/buildings_header.csv")),
        (DEVICES_FILE, include_str!("golden/devices_header.csv")),
        (SENSING_FILE, include_str!("golden/sensing_header.csv")),
    ];
    let mut bytes = 0;
    for (file, header) in golden {
        let first = fs::read(a.join(file)).map_err(|e| e.to_string())?;
        let second = fs::read(b.join(file)).map_err(|e| e.to_string())?;
        if first != second {
            return Err(format!("{file} differs after roundtrip"));
        }
        if !first.starts_with(header.as_bytes()) {
            return Err(format!("{file} header does not match golden"));
        }
        bytes += first.len();
    }
    ensure(
        back.same_contents(&out.store),
        format!(
            "{} records, {bytes} bytes identical, headers match golden",
            out.store.len()
        ),
    )
}

fn conservation() -> Outcome {
    let mut violations = Vec::new();
    let mut checks = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hours = rng.random_range(1..=4);
        let mut cfg = PipelineConfig::reference(0, seed);
        cfg.duration_ms = hours * 3_600_000;
        cfg.check_invariants = true;
        cfg.tier =
            ReliabilityTier::shared(rng.random_range(0.0..0.1)).map_err(|e| e.to_string())?;
        for d in &mut cfg.devices {
            d.edge_drop_probability = rng.random_range(0.0..0.1);
            if rng.random_bool(0.3) {
                let slot = rng.random_range(0..hours * 60);
                d.stalls.push(Stall {
                    at_ms: cfg.start_ms + slot * MINUTE_MS,
                    duration_ms: rng.random_range(1..=20) * MINUTE_MS,
                });
            }
        }
        let out = match run(&cfg) {
            Ok(out) => out,
            Err(e) => {
                violations.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        checks += out.invariant_checks;
        for (id, c) in &out.channels {
            if c.sent != c.delivered + c.dropped {
                violations.push(format!("seed {seed}: channel {id} {c:?}"));
            }
        }
        let t = out.ledger.total();
        if t.stored != t.consumed || t.total_lost() != t.edge_loss() + t.consumer_loss() {
            violations.push(format!("seed {seed}: {t:?}"));
        }
    }
    match violations.first() {
        None => Ok(format!(
            "100 seeds, {checks} per-event checks, 0 violations"
        )),
        Some(first) => Err(format!("{} violations, first: {first}", violations.len())),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("1  end-to-end loss, 3 boxes x 56 days", end_to_end_loss),
        ("2  SLA tier what-if", sla_what_if),
        ("3  per-box loss table replay", table1_replay),
        ("4  expected-sample arithmetic", expected_sample_arithmetic),
        ("5a constant series", constant_series),
        (
            "5b nearest-rank percentiles vs sort oracle",
            percentile_oracle,
        ),
        ("5c moving average vs windowed-mean oracle", cma_oracle),
        (
            "5d sinusoid moving-average attenuation",
            sinusoid_attenuation,
        ),
        ("5e band relaxation fixture", relaxation_fixture),
        ("6  resampling", resampling),
        ("7  CSV export/import roundtrip", csv_roundtrip),
        ("8  conservation over 100 seeds", conservation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
