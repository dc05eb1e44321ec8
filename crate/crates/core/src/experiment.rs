//! Experiment grids: populations, sweeps over w, τ and policy, and the files
//! a grid run leaves behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bytes, PeerId, PeerProfile, PolicyConfig, Seconds};
use crate::policy::{baseline_fragment_count, PolicyError};
use crate::report::{self, duration_token, Format, ReportError};
use crate::sim::{self, RedundancyPolicy, SimError, SimOptions, SimulationOutcome};
use crate::traces::{
    filter_min_availability, generate_synthetic_traces, parse_traces, sample_peer_bandwidth, BandwidthDistribution,
    NamedTrace, SyntheticTraceParams, TracesError,
};

const RNG_STREAM_BANDWIDTH: u64 = 3;

/// Largest fragment count the baseline search considers.
pub const BASELINE_N_MAX: u32 = 100_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Traces { path: PathBuf, source: TracesError },
    #[error("traces: {0}")]
    Synthetic(#[from] TracesError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("run {run}: {source}")]
    Sim { run: String, source: SimError },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Policy as written in a sweep; the baseline count may be left to the
/// availability formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Adaptive,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TraceSource {
    /// A `peer_id,time_s,event` file, cut at `horizon` and filtered.
    File {
        path: PathBuf,
        horizon: f64,
        min_availability: f64,
    },
    Synthetic(SyntheticTraceParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: PolicyConfig,
    /// Explicit baseline fragment count; derived from the availability
    /// target when absent.
    pub baseline_fragments: Option<u32>,
    pub w_values: Vec<Seconds>,
    pub tau_values: Vec<Seconds>,
    pub policies: Vec<PolicyChoice>,
    pub seeds: Vec<u64>,
    pub traces: TraceSource,
    /// Uplink samples file; the bundled distribution when absent.
    pub bandwidth: Option<PathBuf>,
    pub options: SimOptions,
    pub output_dir: PathBuf,
    pub format: Format,
}

/// Ten seeds, as many runs as each grid point averages over by default.
pub fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

impl ExperimentSpec {
    /// A single-cell spec around `base` with default seeds.
    pub fn new(base: PolicyConfig, traces: TraceSource, output_dir: PathBuf) -> Self {
        ExperimentSpec {
            w_values: vec![base.w],
            tau_values: vec![base.tau],
            base,
            baseline_fragments: None,
            policies: vec![PolicyChoice::Adaptive],
            seeds: default_seeds(),
            traces,
            bandwidth: None,
            options: SimOptions::default(),
            output_dir,
            format: Format::Csv,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let empty = |what: &str| Err(ExperimentError::Invalid(format!("`{what}` must not be empty")));
        if self.w_values.is_empty() {
            return empty("w");
        }
        if self.tau_values.is_empty() {
            return empty("tau");
        }
        if self.policies.is_empty() {
            return empty("policies");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        for cfg in self.cell_configs() {
            cfg.validate().map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        }
        if let Some(n) = self.baseline_fragments {
            if n < self.base.k {
                return Err(ExperimentError::Invalid(format!(
                    "`baseline_fragments` = {n} is below k = {}",
                    self.base.k
                )));
            }
        }
        Ok(())
    }

    fn cell_configs(&self) -> impl Iterator<Item = PolicyConfig> + '_ {
        self.tau_values.iter().flat_map(move |&tau| {
            self.w_values
                .iter()
                .map(move |&w| self.base.clone().with_tau(tau).with_window(w))
        })
    }

    /// Fragment count used by baseline runs.
    pub fn baseline_n(&self) -> Result<u32, PolicyError> {
        match self.baseline_fragments {
            Some(n) => Ok(n),
            None => baseline_fragment_count(
                self.base.k,
                self.base.baseline_mean_availability,
                self.base.baseline_target_availability,
                BASELINE_N_MAX,
            ),
        }
    }

    /// Every run of the grid in a fixed order: policy, τ, w, seed.
    pub fn plan_runs(&self) -> Result<Vec<RunSpec>, ExperimentError> {
        let baseline_n = if self.policies.contains(&PolicyChoice::Baseline) {
            Some(self.baseline_n()?)
        } else {
            None
        };
        let mut runs = Vec::new();
        for choice in &self.policies {
            let policy = match choice {
                PolicyChoice::Adaptive => RedundancyPolicy::Adaptive,
                PolicyChoice::Baseline => RedundancyPolicy::Baseline {
                    n_fixed: baseline_n.expect("computed above"),
                },
            };
            for &tau in &self.tau_values {
                for &w in &self.w_values {
                    for &seed in &self.seeds {
                        runs.push(RunSpec {
                            policy,
                            config: self.base.clone().with_tau(tau).with_window(w),
                            seed,
                        });
                    }
                }
            }
        }
        Ok(runs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub policy: RedundancyPolicy,
    pub config: PolicyConfig,
    pub seed: u64,
}

impl RunSpec {
    /// `{policy}_{tau}_{w}_seed{seed}`.
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}_seed{}",
            self.policy.label(),
            duration_token("tau", self.config.tau.get()),
            duration_token("w", self.config.w.get()),
            self.seed
        )
    }
}

/// Reads or generates the traces of a spec, already filtered.
pub fn load_traces(source: &TraceSource) -> Result<Vec<NamedTrace>, ExperimentError> {
    match source {
        TraceSource::File {
            path,
            horizon,
            min_availability,
        } => {
            let file = fs::File::open(path).map_err(io_err(path))?;
            let traces = parse_traces(io::BufReader::new(file), *horizon).map_err(|source| ExperimentError::Traces {
                path: path.clone(),
                source,
            })?;
            let kept = filter_min_availability(traces, *min_availability);
            if kept.is_empty() {
                return Err(ExperimentError::Invalid(format!(
                    "{}: no peer reaches the minimum availability",
                    path.display()
                )));
            }
            Ok(kept)
        }
        TraceSource::Synthetic(params) => Ok(generate_synthetic_traces(params)?),
    }
}

pub fn load_bandwidth(path: Option<&Path>) -> Result<BandwidthDistribution, ExperimentError> {
    match path {
        None => Ok(BandwidthDistribution::default_distribution()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            BandwidthDistribution::parse(&text).map_err(|source| ExperimentError::Traces {
                path: p.to_path_buf(),
                source,
            })
        }
    }
}

/// Peers for one run: the traces in order, each with an uplink drawn from
/// `dist` (downlink four times that) using a stream seeded by `seed`.
pub fn build_population(
    traces: &[NamedTrace],
    dist: &BandwidthDistribution,
    capacity: Bytes,
    seed: u64,
) -> Result<Vec<PeerProfile>, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RNG_STREAM_BANDWIDTH);
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (up, down) = sample_peer_bandwidth(dist, &mut rng);
            PeerProfile::new(PeerId(i as u32), t.peer_id.clone(), up, down, t.trace.clone(), capacity)
                .map_err(|e| ExperimentError::Invalid(format!("peer {}: {e}", t.peer_id)))
        })
        .collect()
}

/// Runs every cell of `runs` on up to `jobs` threads. Results come back in
/// the order of `runs` whatever the scheduling.
pub fn execute_runs(
    runs: &[RunSpec],
    traces: &[NamedTrace],
    dist: &BandwidthDistribution,
    options: &SimOptions,
    jobs: usize,
) -> Result<Vec<SimulationOutcome>, ExperimentError> {
    let slots: Vec<Mutex<Option<Result<SimulationOutcome, ExperimentError>>>> =
        runs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(run) = runs.get(i) else { break };
        let result = build_population(traces, dist, run.config.capacity, run.seed).and_then(|peers| {
            sim::run(&run.config, run.policy, &peers, run.seed, options).map_err(|source| ExperimentError::Sim {
                run: run.name(),
                source,
            })
        });
        *slots[i].lock().expect("result slot") = Some(result);
    };
    let jobs = jobs.clamp(1, runs.len().max(1));
    if jobs == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(work);
            }
        });
    }
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every run executed"))
        .collect()
}

/// Everything a finished grid produced.
#[derive(Debug)]
pub struct ExperimentResult {
    pub outcomes: Vec<SimulationOutcome>,
    pub outcome_files: Vec<PathBuf>,
    pub report_files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub jobs: usize,
    pub baseline_fragments: Option<u32>,
    pub spec: ExperimentSpec,
    /// The resolved spec as a configuration file; feeding it back reproduces
    /// every output.
    pub config_toml: String,
    pub runs: Vec<String>,
}

pub const RUNS_DIR: &str = "runs";
pub const REPORT_DIR: &str = "report";
pub const MANIFEST_FILE: &str = "manifest.json";

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Runs the whole grid and writes `runs/`, `report/` and the manifest into
/// the spec's output directory. Inputs and the output directory are checked
/// before any simulation starts.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentResult, ExperimentError> {
    let started = unix_now();
    spec.validate()?;
    let runs = spec.plan_runs()?;
    let traces = load_traces(&spec.traces)?;
    let dist = load_bandwidth(spec.bandwidth.as_deref())?;
    let runs_dir = spec.output_dir.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;
    let probe = runs_dir.join(".write-check");
    fs::write(&probe, b"").map_err(io_err(&probe))?;
    fs::remove_file(&probe).map_err(io_err(&probe))?;

    let outcomes = execute_runs(&runs, &traces, &dist, &spec.options, jobs)?;

    let mut outcome_files = Vec::new();
    for (run, outcome) in runs.iter().zip(&outcomes) {
        let path = runs_dir.join(format!("{}.json", run.name()));
        write_json(&path, outcome)?;
        if spec.options.record_events {
            let log = runs_dir.join(format!("{}.events.txt", run.name()));
            fs::write(&log, outcome.event_log_text()).map_err(io_err(&log))?;
        }
        outcome_files.push(path);
    }
    let report = report::build_report(&outcomes)?;
    let report_files = report::export(&report, &spec.output_dir.join(REPORT_DIR), spec.format)?;

    let manifest_path = spec.output_dir.join(MANIFEST_FILE);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_s: started,
        finished_unix_s: unix_now(),
        jobs,
        baseline_fragments: spec.baseline_n().ok().filter(|_| spec.policies.contains(&PolicyChoice::Baseline)),
        spec: spec.clone(),
        config_toml: crate::config::render_config(spec),
        runs: runs.iter().map(RunSpec::name).collect(),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(ExperimentResult {
        outcomes,
        outcome_files,
        report_files,
        manifest: manifest_path,
    })
}

/// Loads every outcome file in `dir/runs` (or `dir` itself), sorted by name.
pub fn load_outcomes(dir: &Path) -> Result<Vec<SimulationOutcome>, ExperimentError> {
    let runs_dir = if dir.join(RUNS_DIR).is_dir() {
        dir.join(RUNS_DIR)
    } else {
        dir.to_path_buf()
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs_dir)
        .map_err(io_err(&runs_dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(&runs_dir)))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().map_or(false, |e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(ExperimentError::Invalid(format!(
            "{}: no outcome files found",
            runs_dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path: p.clone(), source })
        })
        .collect()
}
