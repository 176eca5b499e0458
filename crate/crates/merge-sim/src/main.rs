//! Command-line front end: single runs, the paired scenario grid, and trace
//! format conversion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

use merge_sim::config::{ConfigError, ScenarioConfig, Strategy};
use merge_sim::engine::run;
use merge_sim::export::{parse_trace_auto, write_csv, write_ndjson, write_svg};
use merge_sim::metrics::summarize;
use merge_sim::report::{format_table, run_grid};
use merge_sim::trace::TraceLog;

#[derive(Parser)]
#[command(name = "merge-sim", version, about = "Ramp-merge traffic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and metrics.
    Simulate(SimulateArgs),
    /// Run the paired uncontrolled/preemptive grid over flow combinations.
    Grid(GridArgs),
    /// Convert a trace file between csv, ndjson and svg.
    Export(ExportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mainline_flow: Option<f64>,
    #[arg(long)]
    ramp_flow: Option<f64>,
    /// `uncontrolled` or `preemptive`.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time, s.
    #[arg(long)]
    duration: Option<f64>,
    /// Step length, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Truck share on the outer lane and ramp.
    #[arg(long)]
    cat_share: Option<f64>,
    /// Enable bounded tracking-error injection for plan-following vehicles.
    #[arg(long)]
    inject_errors: bool,
    /// Output directory (trace.csv, metrics.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mainline flows, veh/h/lane (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "1000,1400,1800")]
    mainline: Vec<f64>,
    /// Ramp flows, veh/h (comma-separated).
    #[arg(long, value_delimiter = ',', default_value = "300,500,600")]
    ramp: Vec<f64>,
    /// Seeds: `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..3")]
    seeds: String,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    cat_share: Option<f64>,
    #[arg(long)]
    inject_errors: bool,
    /// Output directory (grid.json, grid.txt).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Csv,
    Ndjson,
    Svg,
}

#[derive(Args)]
struct ExportArgs {
    /// Input trace file (csv or ndjson, detected from content).
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum)]
    format: TraceFormat,
    /// Output file; defaults to the input with the new extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<ScenarioConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(ScenarioConfig::from_json_str(&text)?)
        }
        None => Ok(ScenarioConfig::default()),
    }
}

/// `a..b` (inclusive) or `s1,s2,...`.
fn parse_seeds(spec: &str) -> Result<Vec<u64>, ConfigError> {
    let bad = |m: &str| ConfigError::Invalid(format!("seed spec `{spec}`: {m}"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad("bad range start"))?;
        let b: u64 = b.trim().parse().map_err(|_| bad("bad range end"))?;
        if a > b {
            return Err(bad("empty range"));
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad("bad seed")))
        .collect()
}

fn write_file(path: &Path, content: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(v) = args.mainline_flow {
        cfg.mainline_flow = v;
    }
    if let Some(v) = args.ramp_flow {
        cfg.ramp_flow = v;
    }
    if let Some(v) = args.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.duration {
        cfg.duration = v;
    }
    if let Some(v) = args.dt {
        cfg.dt = v;
    }
    if let Some(v) = args.cat_share {
        cfg.cat_share = v;
    }
    if args.inject_errors {
        cfg.error_injection.enabled = true;
    }
    cfg.record_trace = true;
    cfg.validate()?;

    let trace = run(&cfg)?;
    let metrics = summarize(&trace, &cfg);
    write_file(&args.out.join("trace.csv"), &write_csv(&trace.records))?;
    write_file(
        &args.out.join("metrics.json"),
        &serde_json::to_string_pretty(&metrics)?,
    )?;
    println!(
        "{} vehicles, {} finished, collisions {}, conflicts {}",
        metrics.vehicles_spawned,
        metrics.vehicles_finished,
        metrics.collision_count,
        metrics.conflict_count
    );
    println!("wrote {}", args.out.join("trace.csv").display());
    Ok(())
}

fn cmd_grid(args: GridArgs) -> anyhow::Result<()> {
    let mut base = load_config(&args.config)?;
    if let Some(v) = args.duration {
        base.duration = v;
    }
    if let Some(v) = args.cat_share {
        base.cat_share = v;
    }
    if args.inject_errors {
        base.error_injection.enabled = true;
    }
    base.record_trace = false;
    let seeds = parse_seeds(&args.seeds)?;
    let report = run_grid(&base, &args.mainline, &args.ramp, &seeds)?;
    let table = format_table(&report);
    write_file(&args.out.join("grid.json"), &serde_json::to_string_pretty(&report)?)?;
    write_file(&args.out.join("grid.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_export(args: ExportArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    let records = parse_trace_auto(&text)?;
    let (ext, content) = match args.format {
        TraceFormat::Csv => ("csv", write_csv(&records)),
        TraceFormat::Ndjson => ("ndjson", write_ndjson(&records)),
        TraceFormat::Svg => {
            let v_max = records.iter().fold(1.0_f64, |m, r| m.max(r.v));
            let trace = TraceLog {
                records,
                ..TraceLog::default()
            };
            ("svg", write_svg(&trace, v_max))
        }
    };
    let out = args
        .out
        .unwrap_or_else(|| args.trace.with_extension(ext));
    write_file(&out, &content)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            // 1 for configuration problems, 2 for I/O problems.
            let code = if err.is::<ConfigError>() {
                1
            } else if err.is::<std::io::Error>() || err.is::<merge_sim::export::ExportError>() {
                2
            } else {
                1
            };
            ExitCode::from(code)
        }
    }
}
