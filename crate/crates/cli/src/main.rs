//! Command-line front end: run experiment grids, generate traces, size the
//! baseline and rebuild reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use p2pbackup::config::{parse_experiment, Checked};
use p2pbackup::experiment::{load_outcomes, load_traces, run_experiment, ExperimentSpec, Manifest, BASELINE_N_MAX};
use p2pbackup::model::redundancy_factor;
use p2pbackup::policy::baseline_fragment_count;
use p2pbackup::report::{build_report, export, Format};
use p2pbackup::traces::write_traces;

#[derive(Parser)]
#[command(name = "p2pbackup", version, about = "Availability-aware redundancy for peer-to-peer backup")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment grid.
    Simulate {
        /// Configuration file, or a manifest.json from an earlier run.
        #[arg(long)]
        config: PathBuf,
        /// Runs executed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory; overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the traces a configuration would use as `peer_id,time_s,event`.
    GenTraces {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fragment count of the fixed-redundancy baseline.
    Plan {
        #[arg(long)]
        k: u32,
        /// Mean peer availability.
        #[arg(long)]
        availability: f64,
        /// Target object availability.
        #[arg(long)]
        target: f64,
        #[arg(long, default_value_t = BASELINE_N_MAX)]
        n_max: u32,
    },
    /// Rebuild the aggregate reports from the outcome files of a grid.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Defaults to `<in>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    /// Bad configuration or arguments: exit code 1.
    Config(String),
    /// Anything that went wrong while running: exit code 2.
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate { config, jobs, out } => simulate(&config, jobs, out),
        Command::GenTraces { config, out } => gen_traces(&config, &out),
        Command::Plan {
            k,
            availability,
            target,
            n_max,
        } => plan(k, availability, target, n_max),
        Command::Report { input, format, out } => report(&input, format, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Reads a configuration file or the `config_toml` of a manifest. Relative
/// paths inside resolve against the file's directory.
fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let base_dir = base_dir.canonicalize().unwrap_or_else(|_| base_dir.to_path_buf());
    let toml_text = if path.extension().map_or(false, |e| e == "json") {
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(format!("{}: not a manifest: {e}", path.display())))?;
        manifest.config_toml
    } else {
        text
    };
    let Checked { value, warnings } =
        parse_experiment(&toml_text, &base_dir).map_err(|e| Failure::Config(format!("{}:\n{e}", path.display())))?;
    for w in warnings {
        eprintln!("{}: {w}", path.display());
    }
    Ok(value)
}

fn simulate(config: &Path, jobs: usize, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut spec = load_spec(config)?;
    if jobs == 0 {
        return Err(Failure::Config("--jobs must be >= 1".into()));
    }
    if let Some(out) = out {
        spec.output_dir = out;
    }
    let result = run_experiment(&spec, jobs).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "{} runs, {} report files, manifest {}",
        result.outcome_files.len(),
        result.report_files.len(),
        result.manifest.display()
    );
    Ok(())
}

fn gen_traces(config: &Path, out: &Path) -> Result<(), Failure> {
    let spec = load_spec(config)?;
    let traces = load_traces(&spec.traces).map_err(|e| Failure::Runtime(e.to_string()))?;
    let file = fs::File::create(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_traces(std::io::BufWriter::new(file), &traces).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{} traces written to {}", traces.len(), out.display());
    Ok(())
}

fn plan(k: u32, availability: f64, target: f64, n_max: u32) -> Result<(), Failure> {
    let n = baseline_fragment_count(k, availability, target, n_max).map_err(|e| Failure::Config(format!("error: {e}")))?;
    let r = redundancy_factor(n, k).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("n = {n}");
    println!("r = {r}");
    Ok(())
}

fn report(input: &Path, format: Format, out: Option<PathBuf>) -> Result<(), Failure> {
    let outcomes = load_outcomes(input).map_err(|e| Failure::Runtime(e.to_string()))?;
    let report = build_report(&outcomes).map_err(|e| Failure::Runtime(e.to_string()))?;
    let dir = out.unwrap_or_else(|| input.join("report"));
    let files = export(&report, &dir, format).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{} outcomes, {} report files in {}", outcomes.len(), files.len(), dir.display());
    Ok(())
}
