use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::{FixedOffset, NaiveDate, NaiveDateTime, TimeZone};
use clap::{Parser, Subcommand, ValueEnum};

use hbmon_core::analysis::{
    analyze, AnalysisError, AnalysisOptions, CMA_HALF_WINDOW_MS, MEDIAN_BUCKET_MS,
};
use hbmon_core::config::{parse_timestamp, ConfigError, RunConfig};
use hbmon_core::csv_io::{self, CsvError};
use hbmon_core::hub::{ReliabilityTier, TierError, TierName};
use hbmon_core::report;
use hbmon_core::sim::{self, PipelineConfig, SimError};
use hbmon_core::store::{StoreError, TelemetryStore, DAY_MS};

#[derive(Parser)]
#[command(
    name = "hbmon",
    version,
    about = "Simulate and analyze historic-building climate monitoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sensing pipeline and write the store, ledger and hourly metrics
    Simulate(SimulateArgs),
    /// EN 15757 relative-humidity fluctuation analysis over a stored run
    Analyze(AnalyzeArgs),
    /// Print a per-box loss table from expected/actual counts
    #[command(name = "replay-table1")]
    ReplayTable1(ReplayArgs),
    /// Export a store as buildings.csv, devices.csv and sensing.csv
    Export(ExportArgs),
    /// Import buildings.csv, devices.csv and sensing.csv into a store
    Import(ImportArgs),
    /// Summarize a run's hourly hub metrics
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Shared,
    Sla,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Run file (TOML); without it the three-box reference deployment is used
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run length in days
    #[arg(long)]
    days: Option<i64>,
    /// Run start, RFC 3339
    #[arg(long)]
    start: Option<String>,
    #[arg(long, value_enum)]
    tier: Option<TierArg>,
    /// Consumer drop probability
    #[arg(long)]
    consumer_drop: Option<f64>,
    /// Uplink drop probability applied to every device
    #[arg(long)]
    edge_drop: Option<f64>,
    /// Check every conservation law after every event
    #[arg(long)]
    check_invariants: bool,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// Store directory (from `simulate` or `import`) or an export bundle
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    device: u32,
    #[arg(long, default_value_t = 1)]
    collector: u32,
    /// Period start: a date, a local date-time, or RFC 3339
    #[arg(long)]
    from: String,
    /// Period end (exclusive), same forms as --from
    #[arg(long)]
    to: String,
    /// Zone for dates without an offset: UTC, CET or ±HH:MM
    #[arg(long, default_value = "UTC")]
    tz: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReplayArgs {
    /// CSV with header SensorBox,Expected,Actual
    #[arg(long)]
    fixture: PathBuf,
    /// Also write loss_table.txt here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ImportArgs {
    /// Directory holding the three CSV files
    #[arg(long)]
    bundle: PathBuf,
    /// Store directory to create
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct MetricsArgs {
    /// Run directory written by `simulate`
    #[arg(long)]
    run: PathBuf,
    /// Only hours starting at or after this instant
    #[arg(long)]
    from: Option<String>,
    /// Only hours starting before this instant
    #[arg(long)]
    to: Option<String>,
    #[arg(long, default_value = "UTC")]
    tz: String,
}

/// Exit status 1 for bad input, 2 for failures while running.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<TierError> for Failure {
    fn from(e: TierError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<CsvError> for Failure {
    fn from(e: CsvError) -> Self {
        match e {
            CsvError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io { .. } => Failure::Runtime(e.to_string()),
            StoreError::Csv(c) => c.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_)
            | SimError::Window(_)
            | SimError::Tier(_)
            | SimError::Channel(_)
            | SimError::Store(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

/// `UTC`, `CET` (fixed +01:00) or an explicit `±HH:MM` offset.
fn parse_tz(tz: &str) -> Result<FixedOffset, Failure> {
    let bad = || Failure::Validation(format!("unknown time zone {tz:?}; use UTC, CET or ±HH:MM"));
    let secs = match tz.to_ascii_uppercase().as_str() {
        "UTC" | "Z" => 0,
        "CET" => 3600,
        other => {
            let (sign, rest) = match other.as_bytes().first() {
                Some(b'+') => (1, &other[1..]),
                Some(b'-') => (-1, &other[1..]),
                _ => return Err(bad()),
            };
            let (h, m) = rest.split_once(':').ok_or_else(bad)?;
            let h: i32 = h.parse().map_err(|_| bad())?;
            let m: i32 = m.parse().map_err(|_| bad())?;
            if h > 23 || m > 59 {
                return Err(bad());
            }
            sign * (h * 3600 + m * 60)
        }
    };
    FixedOffset::east_opt(secs).ok_or_else(bad)
}

/// RFC 3339 as is; dates and offset-less date-times in `tz`.
fn parse_instant(value: &str, tz: FixedOffset) -> Result<i64, Failure> {
    if let Ok(ms) = parse_timestamp(value) {
        return Ok(ms);
    }
    let local = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(value, f).ok())
    .or_else(|| {
        NaiveDate::parse_from_str(value, "%Y-%m-%d")
            .ok()
            .and_then(|d| d.and_hms_opt(0, 0, 0))
    })
    .ok_or_else(|| Failure::Validation(format!("cannot parse time {value:?}")))?;
    tz.from_local_datetime(&local)
        .single()
        .map(|t| t.timestamp_millis())
        .ok_or_else(|| Failure::Validation(format!("time {value:?} is ambiguous in {tz}")))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let (mut cfg, config_out) = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Validation(format!(
                    "config file {} does not exist",
                    path.display()
                )));
            }
            let run = RunConfig::load(path)?;
            (run.resolve()?, Some(run.output_path()))
        }
        None => (PipelineConfig::reference(56, 1), None),
    };
    let out = args
        .out
        .or(config_out)
        .ok_or_else(|| Failure::Validation("--out is required without --config".into()))?;

    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(days) = args.days {
        if days < 0 {
            return Err(Failure::Validation("--days must be non-negative".into()));
        }
        cfg.duration_ms = days * DAY_MS;
    }
    if let Some(start) = &args.start {
        cfg.start_ms = parse_timestamp(start)?;
    }
    if args.tier.is_some() || args.consumer_drop.is_some() {
        let name = match args.tier {
            Some(TierArg::Shared) => TierName::Shared,
            Some(TierArg::Sla) => TierName::Sla,
            None => cfg.tier.name,
        };
        let p = args.consumer_drop.unwrap_or(match args.tier {
            Some(TierArg::Sla) if cfg.tier.name != TierName::Sla => 0.0,
            _ => cfg.tier.consume_drop_probability,
        });
        cfg.tier = ReliabilityTier::new(name, p)?;
    }
    if let Some(p) = args.edge_drop {
        for d in &mut cfg.devices {
            d.edge_drop_probability = p;
        }
    }
    cfg.check_invariants = args.check_invariants;

    let started = Instant::now();
    let outcome = sim::run(&cfg)?;
    let elapsed = started.elapsed();
    report::write_run(&outcome, cfg.tier.consume_drop_probability, &out)?;

    let names: Vec<(u32, String)> = cfg.devices.iter().map(|d| (d.id, d.name.clone())).collect();
    print!(
        "{}",
        report::ledger_text(
            &outcome.ledger,
            &names,
            cfg.tier.name,
            cfg.tier.consume_drop_probability
        )
    );
    println!(
        "\n{} events in {:.2} s, {} watchdog restarts, output in {}",
        outcome.events_processed,
        elapsed.as_secs_f64(),
        outcome.restarts.len(),
        out.display()
    );
    Ok(())
}

/// A store directory, or an export bundle when `sensing.csv` sits at the top.
fn load_store(path: &Path) -> Result<TelemetryStore, Failure> {
    if !path.is_dir() {
        return Err(Failure::Validation(format!(
            "{} is not a directory",
            path.display()
        )));
    }
    if path.join(csv_io::SENSING_FILE).is_file() {
        Ok(csv_io::import(path)?)
    } else {
        Ok(TelemetryStore::open(path)?)
    }
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<(), Failure> {
    let tz = parse_tz(&args.tz)?;
    let from = parse_instant(&args.from, tz)?;
    let to = parse_instant(&args.to, tz)?;
    if from >= to {
        return Err(Failure::Validation("--from must be before --to".into()));
    }
    let store = load_store(&args.store)?;
    let margin = CMA_HALF_WINDOW_MS + MEDIAN_BUCKET_MS;
    let raw = store.humidity_series(args.device, args.collector, from - margin, to + margin)?;
    if raw.is_empty() {
        return Err(Failure::Validation(format!(
            "no readings for device {} collector {} around the requested period",
            args.device, args.collector
        )));
    }
    let analysis = analyze(&raw, from..to, AnalysisOptions::default())?;
    let summary = report::fluctuation_text(&analysis, tz);
    write_text(&args.out.join("fluctuation.txt"), &summary)?;
    write_text(
        &args.out.join("chart.csv"),
        &report::chart_csv(&analysis, tz),
    )?;
    print!("{summary}");
    Ok(())
}

fn replay_table1(args: ReplayArgs) -> Result<(), Failure> {
    let rows = csv_io::read_loss_fixture(&args.fixture)?;
    if rows.is_empty() {
        return Err(Failure::Validation(format!(
            "{} has no rows",
            args.fixture.display()
        )));
    }
    let (rows, total) = report::loss_table(&rows)?;
    let text = report::loss_table_text(&rows, &total);
    if let Some(out) = &args.out {
        write_text(&out.join("loss_table.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let store = load_store(&args.store)?;
    let bundle = csv_io::export(&store, &args.out)?;
    println!(
        "exported {} buildings, {} devices, {} sensing rows to {}",
        bundle.buildings.len(),
        bundle.devices.len(),
        bundle.sensing.len(),
        args.out.display()
    );
    Ok(())
}

fn import(args: ImportArgs) -> Result<(), Failure> {
    let store = csv_io::import(&args.bundle)?;
    store.save(&args.out)?;
    println!(
        "imported {} records into {} partitions at {}",
        store.len(),
        store.partition_keys().count(),
        args.out.display()
    );
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<(), Failure> {
    let tz = parse_tz(&args.tz)?;
    let from = args
        .from
        .as_deref()
        .map(|v| parse_instant(v, tz))
        .transpose()?;
    let to = args
        .to
        .as_deref()
        .map(|v| parse_instant(v, tz))
        .transpose()?;
    let path = args.run.join("metrics.csv");
    let text = fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != report::METRICS_CSV_HEADER.join(",") {
        return Err(Failure::Validation(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let (mut hours, mut received, mut executed) = (0u64, 0u64, 0u64);
    for (i, line) in lines.enumerate() {
        let bad =
            || Failure::Validation(format!("{} line {}: malformed row", path.display(), i + 2));
        let mut fields = line.split(',');
        let (Some(t), Some(r), Some(e), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(bad());
        };
        let t = parse_timestamp(t).map_err(|_| bad())?;
        if from.is_some_and(|f| t < f) || to.is_some_and(|end| t >= end) {
            continue;
        }
        hours += 1;
        received += r.parse::<u64>().map_err(|_| bad())?;
        executed += e.parse::<u64>().map_err(|_| bad())?;
    }
    println!("hours: {hours}");
    println!("messages received: {received}");
    println!("functions executed: {executed}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::ReplayTable1(a) => replay_table1(a),
        Command::Export(a) => export(a),
        Command::Import(a) => import(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
