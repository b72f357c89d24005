//! `pal`: generate benchmarks, run the adaptation pipeline, sweep ablations and
//! re-emit reports.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
//! 3 pipeline abort (the partial report is still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pal_core::config::load_config;
use pal_core::pipeline::{run_ablation, run_on_benchmark, PipelineReport, RunError};
use pal_core::{generate_benchmark, output, Error, PipelineConfig, Variant};

#[derive(Parser)]
#[command(name = "pal", version, about = "Progressive adaptation learning for unsupervised re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the four dataset snapshots of a synthetic benchmark.
    Generate(Common),
    /// Run one variant of the pipeline.
    Run(RunArgs),
    /// Run every variant on the same benchmark and compare them.
    Ablate(Common),
    /// Re-emit the CSV files of a saved `report.json`.
    Report {
        /// Path to a report JSON file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override a config field, e.g. `--set wls.sigma=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for both the benchmark and the pipeline.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    variant: Option<String>,
    /// Write `weights_iter{i}.csv` for every iteration.
    #[arg(long)]
    dump_weights: bool,
    /// Write `clusters_iter{i}.csv` for every iteration.
    #[arg(long)]
    dump_clusters: bool,
}

enum Failure {
    Config(String),
    Abort(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

fn load(common: &Common, extra: &[String], require_file: bool) -> Result<PipelineConfig, Failure> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("benchmark.seed={seed}"));
    }
    match &common.config {
        Some(path) => Ok(load_config(path, &overrides)?),
        None if require_file => Err(Failure::Config("`--config` is required for this command".into())),
        None => Ok(pal_core::config::parse_config("", false, &overrides)?),
    }
}

fn generate(args: &Common) -> Result<(), Failure> {
    let cfg = load(args, &[], false)?;
    let bench = generate_benchmark(&cfg.benchmark)?;
    let paths = output::write_benchmark(&args.out, &bench, cfg.benchmark.seed)?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_report(report: &PipelineReport) {
    println!("{:<15} {:>4} {:>5} {:>8} {:>8} {:>8} {:>8}", "variant", "iter", "K", "selected", "mAP", "rank1", "rank5");
    for r in report.rows() {
        println!(
            "{:<15} {:>4} {:>5} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            r.variant, r.iteration, r.k, r.selected, r.map, r.rank1, r.rank5
        );
    }
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let mut extra = Vec::new();
    if let Some(v) = &args.variant {
        let variant: Variant = v.parse()?;
        extra.push(format!("variant={}", variant.name()));
    }
    let cfg = load(&args.common, &extra, true)?;
    let bench = generate_benchmark(&cfg.benchmark)?;
    let out = args.common.out.as_path();
    let mut dump_error = None;
    let result = run_on_benchmark(&cfg, &bench, |artifacts| {
        if dump_error.is_none() && (args.dump_weights || args.dump_clusters) {
            dump_error = output::write_iteration_dumps(out, artifacts, args.dump_weights, args.dump_clusters).err();
        }
    });
    if let Some(e) = dump_error {
        return Err(e.into());
    }
    match result {
        Ok(report) => {
            output::write_run(out, &report)?;
            print_report(&report);
            Ok(())
        }
        Err(RunError::Aborted { error, partial }) => {
            output::write_run(out, &partial)?;
            Err(Failure::Abort(format!("pipeline aborted: {error}; partial report written to {}", out.display())))
        }
        Err(RunError::Invalid(e)) => Err(e.into()),
    }
}

fn ablate(args: &Common) -> Result<(), Failure> {
    let cfg = load(args, &[], true)?;
    let ablation = run_ablation(&cfg)?;
    output::write_ablation(&args.out, &ablation, cfg.benchmark.seed)?;
    for o in &ablation.outcomes {
        print_report(&o.report);
        if let Some(e) = &o.error {
            eprintln!("{} aborted: {e}", o.variant);
        }
    }
    Ok(())
}

fn report(path: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let report: PipelineReport =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    output::write_run(out, &report)?;
    print_report(&report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Run(args) => run(args),
        Command::Ablate(args) => ablate(args),
        Command::Report { config, out } => report(config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Abort(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
