//! Aggregation of simulation outcomes into plot-ready series and tables.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DAY;
use crate::sim::{LossCategory, RedundancyPolicy, SimulationOutcome};

/// JSON schema every exported JSON document validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ReportError {
    ReportError::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

/// Rounds to 6 significant digits, the precision of every export.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn fmt6(x: f64) -> String {
    format!("{}", round6(x))
}

// ---------------------------------------------------------------------------
// CDFs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfSeries {
    pub label: String,
    /// `(value, cumulative fraction)`, values strictly ascending.
    pub points: Vec<(f64, f64)>,
}

/// Empirical CDF; duplicates collapse into one step.
pub fn cdf(values: &[f64]) -> Result<CdfSeries, ReportError> {
    if values.is_empty() {
        return Err(invalid("values", "empty input"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("values", "contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => points.push((*v, frac)),
        }
    }
    Ok(CdfSeries {
        label: String::new(),
        points,
    })
}

impl CdfSeries {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Smallest value whose cumulative fraction reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.points
            .iter()
            .find(|(_, f)| *f >= q - 1e-12)
            .or(self.points.last())
            .map(|(v, _)| *v)
            .unwrap_or(f64::NAN)
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Ascending values, non-decreasing fractions in (0, 1], ending at 1.
    pub fn is_valid(&self) -> bool {
        let ordered = self.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        let bounded = self.points.iter().all(|(_, f)| *f > 0.0 && *f <= 1.0);
        let terminal = self.points.last().map_or(false, |(_, f)| (*f - 1.0).abs() < 1e-12);
        ordered && bounded && terminal
    }
}

/// Conventional median: middle value, or the mean of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

// ---------------------------------------------------------------------------
// Cells and groupings

/// Identity of one grid cell: everything but the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub policy: RedundancyPolicy,
    #[serde(with = "crate::model::extended_f64")]
    pub tau: f64,
    pub w: f64,
}

impl CellKey {
    pub fn of(outcome: &SimulationOutcome) -> Self {
        CellKey {
            policy: outcome.policy,
            tau: outcome.tau,
            w: outcome.w,
        }
    }

    fn sort_key(&self) -> (u8, u32, u64, u64) {
        let (p, n) = match self.policy {
            RedundancyPolicy::Adaptive => (0, 0),
            RedundancyPolicy::Baseline { n_fixed } => (1, n_fixed),
        };
        (p, n, ordered_bits(self.tau), ordered_bits(self.w))
    }

    /// `{policy}_{tau}_{w}` prefix used in file names.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.policy.label(), duration_token("tau", self.tau), duration_token("w", self.w))
    }
}

fn ordered_bits(x: f64) -> u64 {
    // Non-negative floats (and +inf) order like their bit patterns.
    x.to_bits()
}

/// `tau90d`, `w0d`, `tauinf`, or seconds when not a whole number of days.
pub fn duration_token(prefix: &str, seconds: f64) -> String {
    if seconds.is_infinite() {
        return format!("{prefix}inf");
    }
    let days = seconds / DAY;
    if days.fract() == 0.0 {
        format!("{prefix}{days}d")
    } else {
        format!("{prefix}{}s", round6(seconds))
    }
}

/// Groups outcomes per cell, in a fixed order that does not depend on the
/// order of `outcomes`. Runs inside a cell are sorted by seed.
pub fn group_by_cell(outcomes: &[SimulationOutcome]) -> Vec<(CellKey, Vec<&SimulationOutcome>)> {
    let mut map: BTreeMap<(u8, u32, u64, u64), (CellKey, Vec<&SimulationOutcome>)> = BTreeMap::new();
    for o in outcomes {
        let key = CellKey::of(o);
        map.entry(key.sort_key()).or_insert_with(|| (key, Vec::new())).1.push(o);
    }
    map.into_values()
        .map(|(k, mut runs)| {
            runs.sort_by_key(|o| o.seed);
            (k, runs)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Loss table

/// Loss percentages for one τ, averaged over runs. `*_pct` fields are
/// percentages of all peers, `*_of_crashed_pct` of peers that died within
/// the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    #[serde(with = "crate::model::extended_f64")]
    pub tau: f64,
    pub runs: u32,
    pub peers: f64,
    pub total_pct: f64,
    pub incomplete_pct: f64,
    pub unavoidable_pct: f64,
    pub failed_restore_pct: f64,
    /// Alive at the horizon without a complete backup; not a loss.
    pub unfinished_pct: f64,
    pub crashed_pct: f64,
    pub total_of_crashed_pct: f64,
    pub incomplete_of_crashed_pct: f64,
    pub unavoidable_of_crashed_pct: f64,
    pub failed_restore_of_crashed_pct: f64,
}

impl LossRow {
    /// Exclusive categories sum to the total and nest as documented.
    pub fn accounting_holds(&self) -> bool {
        let tol = 1e-9 * (1.0 + self.total_pct.abs());
        let tol_c = 1e-9 * (1.0 + self.total_of_crashed_pct.abs());
        (self.total_pct - self.incomplete_pct - self.failed_restore_pct).abs() <= tol
            && self.unavoidable_pct <= self.incomplete_pct + tol
            && self.incomplete_pct <= self.total_pct + tol
            && (self.total_of_crashed_pct - self.incomplete_of_crashed_pct - self.failed_restore_of_crashed_pct).abs()
                <= tol_c
            && self.unavoidable_of_crashed_pct <= self.incomplete_of_crashed_pct + tol_c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub policy: RedundancyPolicy,
    pub w: f64,
    pub rows: Vec<LossRow>,
}

impl LossTable {
    pub fn accounting_holds(&self) -> bool {
        self.rows.iter().all(LossRow::accounting_holds)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct LossCounts {
    peers: f64,
    crashed: f64,
    incomplete: f64,
    unavoidable: f64,
    failed: f64,
    unfinished: f64,
}

fn count_losses(o: &SimulationOutcome) -> LossCounts {
    let mut c = LossCounts {
        peers: o.peers.len() as f64,
        ..LossCounts::default()
    };
    for p in &o.peers {
        if p.death_time.is_some() {
            c.crashed += 1.0;
        }
        match p.loss {
            LossCategory::IncompleteBackup => c.incomplete += 1.0,
            LossCategory::IncompleteUnavoidable => {
                c.incomplete += 1.0;
                c.unavoidable += 1.0;
            }
            LossCategory::FailedRestore => c.failed += 1.0,
            LossCategory::None => {
                if p.unfinished_backup {
                    c.unfinished += 1.0;
                }
            }
        }
    }
    c
}

/// Loss categorization of `runs` runs of one configuration.
pub fn categorize_losses(outcomes: &[SimulationOutcome], runs: usize) -> Result<LossRow, ReportError> {
    let refs: Vec<&SimulationOutcome> = outcomes.iter().collect();
    categorize_refs(&refs, runs)
}

fn categorize_refs(outcomes: &[&SimulationOutcome], runs: usize) -> Result<LossRow, ReportError> {
    if runs == 0 || outcomes.len() != runs {
        return Err(invalid(
            "runs",
            format!("expected {runs} outcomes (at least one), got {}", outcomes.len()),
        ));
    }
    let first = outcomes[0];
    for o in outcomes {
        if CellKey::of(o) != CellKey::of(first)
            || o.k != first.k
            || o.horizon != first.horizon
            || o.peers.len() != first.peers.len()
        {
            return Err(invalid("outcomes", "runs differ in more than the seed"));
        }
    }
    let pct = |num: f64, den: f64| if den > 0.0 { 100.0 * num / den } else { 0.0 };
    let mut acc = [0.0f64; 9];
    for o in outcomes {
        let c = count_losses(o);
        let vals = [
            pct(c.incomplete, c.peers),
            pct(c.unavoidable, c.peers),
            pct(c.failed, c.peers),
            pct(c.unfinished, c.peers),
            pct(c.crashed, c.peers),
            pct(c.incomplete, c.crashed),
            pct(c.unavoidable, c.crashed),
            pct(c.failed, c.crashed),
            c.peers,
        ];
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += v;
        }
    }
    let n = runs as f64;
    let m = acc.map(|a| a / n);
    Ok(LossRow {
        tau: first.tau,
        runs: runs as u32,
        peers: m[8],
        total_pct: m[0] + m[2],
        incomplete_pct: m[0],
        unavoidable_pct: m[1],
        failed_restore_pct: m[2],
        unfinished_pct: m[3],
        crashed_pct: m[4],
        total_of_crashed_pct: m[5] + m[7],
        incomplete_of_crashed_pct: m[5],
        unavoidable_of_crashed_pct: m[6],
        failed_restore_of_crashed_pct: m[7],
    })
}

/// One table per (policy, w), one row per τ.
pub fn loss_tables(outcomes: &[SimulationOutcome]) -> Result<Vec<LossTable>, ReportError> {
    let mut tables: Vec<LossTable> = Vec::new();
    for (key, runs) in group_by_cell(outcomes) {
        let row = categorize_refs(&runs, runs.len())?;
        match tables
            .iter_mut()
            .find(|t| t.policy == key.policy && t.w.to_bits() == key.w.to_bits())
        {
            Some(t) => t.rows.push(row),
            None => tables.push(LossTable {
                policy: key.policy,
                w: key.w,
                rows: vec![row],
            }),
        }
    }
    for t in &mut tables {
        t.rows.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    }
    Ok(tables)
}

// ---------------------------------------------------------------------------
// Redundancy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRow {
    pub policy: RedundancyPolicy,
    #[serde(with = "crate::model::extended_f64")]
    pub tau: f64,
    pub w: f64,
    pub runs: u32,
    /// Peers that completed their backup, summed over runs.
    pub completed: u32,
    /// Mean `n / k` at completion; `None` when no backup completed.
    pub mean_r: Option<f64>,
}

/// Mean redundancy factor per cell. Baseline cells report `n_fixed / k`.
pub fn redundancy_summary(outcomes: &[SimulationOutcome]) -> Vec<RedundancyRow> {
    group_by_cell(outcomes)
        .into_iter()
        .map(|(key, runs)| {
            let k = runs[0].k as f64;
            let rs: Vec<f64> = runs
                .iter()
                .flat_map(|o| o.peers.iter().filter_map(|p| p.fragments_at_completion))
                .map(|n| n as f64 / k)
                .collect();
            let mean_r = match key.policy {
                RedundancyPolicy::Baseline { n_fixed } => Some(n_fixed as f64 / k),
                RedundancyPolicy::Adaptive if rs.is_empty() => None,
                RedundancyPolicy::Adaptive => Some(rs.iter().sum::<f64>() / rs.len() as f64),
            };
            RedundancyRow {
                policy: key.policy,
                tau: key.tau,
                w: key.w,
                runs: runs.len() as u32,
                completed: rs.len() as u32,
                mean_r,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Per-cell series

/// Metrics exported as one CDF per cell.
pub const CDF_METRICS: [&str; 4] = ["ttb_ratio", "ttr_ratio", "min_ttb", "min_ttr"];

/// Raw values behind one CDF metric, pooled over runs. Peers still backing
/// up at the horizon contribute no TTB values.
pub fn metric_values(runs: &[&SimulationOutcome], metric: &str) -> Vec<f64> {
    let peers = runs.iter().flat_map(|o| o.peers.iter());
    match metric {
        "ttb_ratio" => peers.filter_map(|p| p.ttb_ratio()).collect(),
        "ttr_ratio" => peers.filter_map(|p| p.ttr_ratio()).collect(),
        "min_ttb" => peers.filter_map(|p| p.min_ttb).collect(),
        "min_ttr" => peers.map(|p| p.min_ttr).collect(),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSeries {
    pub cell: CellKey,
    pub metric: String,
    pub series: CdfSeries,
}

/// Everything the reports contain, computed from a set of outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub redundancy: Vec<RedundancyRow>,
    pub losses: Vec<LossTable>,
    pub cdfs: Vec<CellSeries>,
}

pub fn build_report(outcomes: &[SimulationOutcome]) -> Result<Report, ReportError> {
    let mut cdfs = Vec::new();
    for (key, runs) in group_by_cell(outcomes) {
        for metric in CDF_METRICS {
            let values = metric_values(&runs, metric);
            if values.is_empty() {
                continue;
            }
            cdfs.push(CellSeries {
                cell: key,
                metric: metric.to_string(),
                series: cdf(&values)?.with_label(format!("{}_{metric}", key.file_stem())),
            });
        }
    }
    Ok(Report {
        redundancy: redundancy_summary(outcomes),
        losses: loss_tables(outcomes)?,
        cdfs,
    })
}

// ---------------------------------------------------------------------------
// Export

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

const CDF_HEADER: [&str; 2] = ["value", "fraction"];
const LOSS_HEADER: [&str; 13] = [
    "tau_s",
    "runs",
    "peers",
    "total_pct",
    "incomplete_pct",
    "unavoidable_pct",
    "failed_restore_pct",
    "unfinished_pct",
    "crashed_pct",
    "total_of_crashed_pct",
    "incomplete_of_crashed_pct",
    "unavoidable_of_crashed_pct",
    "failed_restore_of_crashed_pct",
];
const REDUNDANCY_HEADER: [&str; 7] = ["policy", "n_fixed", "tau_s", "w_s", "runs", "completed", "mean_r"];

fn loss_fields(r: &LossRow) -> [f64; 11] {
    [
        r.peers,
        r.total_pct,
        r.incomplete_pct,
        r.unavoidable_pct,
        r.failed_restore_pct,
        r.unfinished_pct,
        r.crashed_pct,
        r.total_of_crashed_pct,
        r.incomplete_of_crashed_pct,
        r.unavoidable_of_crashed_pct,
        r.failed_restore_of_crashed_pct,
    ]
}

/// JSON documents. Infinite durations are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Document {
    Cdf {
        label: String,
        policy: String,
        tau_s: Option<f64>,
        w_s: f64,
        metric: String,
        points: Vec<[f64; 2]>,
    },
    Losses {
        policy: String,
        w_s: f64,
        rows: Vec<JsonLossRow>,
    },
    Redundancy {
        rows: Vec<JsonRedundancyRow>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonLossRow {
    pub tau_s: Option<f64>,
    pub runs: u32,
    pub peers: f64,
    pub all_peers: LossPercentages,
    pub crashed_peers: LossPercentages,
    pub unfinished_pct: f64,
    pub crashed_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPercentages {
    pub total_pct: f64,
    pub incomplete_pct: f64,
    pub unavoidable_pct: f64,
    pub failed_restore_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonRedundancyRow {
    pub policy: String,
    pub n_fixed: Option<u32>,
    pub tau_s: Option<f64>,
    pub w_s: f64,
    pub runs: u32,
    pub completed: u32,
    pub mean_r: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then(|| round6(x))
}

impl Document {
    fn from_series(s: &CellSeries) -> Self {
        Document::Cdf {
            label: s.series.label.clone(),
            policy: s.cell.policy.label().to_string(),
            tau_s: finite(s.cell.tau),
            w_s: round6(s.cell.w),
            metric: s.metric.clone(),
            points: s.series.points.iter().map(|&(v, f)| [round6(v), round6(f)]).collect(),
        }
    }

    fn from_losses(t: &LossTable) -> Self {
        let rows = t
            .rows
            .iter()
            .map(|r| JsonLossRow {
                tau_s: finite(r.tau),
                runs: r.runs,
                peers: round6(r.peers),
                all_peers: LossPercentages {
                    total_pct: round6(r.total_pct),
                    incomplete_pct: round6(r.incomplete_pct),
                    unavoidable_pct: round6(r.unavoidable_pct),
                    failed_restore_pct: round6(r.failed_restore_pct),
                },
                crashed_peers: LossPercentages {
                    total_pct: round6(r.total_of_crashed_pct),
                    incomplete_pct: round6(r.incomplete_of_crashed_pct),
                    unavoidable_pct: round6(r.unavoidable_of_crashed_pct),
                    failed_restore_pct: round6(r.failed_restore_of_crashed_pct),
                },
                unfinished_pct: round6(r.unfinished_pct),
                crashed_pct: round6(r.crashed_pct),
            })
            .collect();
        Document::Losses {
            policy: t.policy.label().to_string(),
            w_s: round6(t.w),
            rows,
        }
    }

    fn from_redundancy(rows: &[RedundancyRow]) -> Self {
        Document::Redundancy {
            rows: rows
                .iter()
                .map(|r| JsonRedundancyRow {
                    policy: r.policy.label().to_string(),
                    n_fixed: match r.policy {
                        RedundancyPolicy::Baseline { n_fixed } => Some(n_fixed),
                        RedundancyPolicy::Adaptive => None,
                    },
                    tau_s: finite(r.tau),
                    w_s: round6(r.w),
                    runs: r.runs,
                    completed: r.completed,
                    mean_r: r.mean_r.map(round6),
                })
                .collect(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json(path: &Path, doc: &Document) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_cdf(path: &Path, series: &CellSeries, format: Format) -> Result<(), ReportError> {
    match format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = series
                .series
                .points
                .iter()
                .map(|&(v, f)| vec![fmt6(v), fmt6(f)])
                .collect();
            write_csv(path, &CDF_HEADER, &rows)
        }
        Format::Json => write_json(path, &Document::from_series(series)),
    }
}

pub fn write_loss_table(path: &Path, table: &LossTable, format: Format) -> Result<(), ReportError> {
    match format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = table
                .rows
                .iter()
                .map(|r| {
                    let mut row = vec![fmt6(r.tau), r.runs.to_string()];
                    row.extend(loss_fields(r).iter().map(|&x| fmt6(x)));
                    row
                })
                .collect();
            write_csv(path, &LOSS_HEADER, &rows)
        }
        Format::Json => write_json(path, &Document::from_losses(table)),
    }
}

pub fn write_redundancy(path: &Path, rows: &[RedundancyRow], format: Format) -> Result<(), ReportError> {
    match format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let n_fixed = match r.policy {
                        RedundancyPolicy::Baseline { n_fixed } => n_fixed.to_string(),
                        RedundancyPolicy::Adaptive => String::new(),
                    };
                    vec![
                        r.policy.label().to_string(),
                        n_fixed,
                        fmt6(r.tau),
                        fmt6(r.w),
                        r.runs.to_string(),
                        r.completed.to_string(),
                        r.mean_r.map(fmt6).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(path, &REDUNDANCY_HEADER, &rows)
        }
        Format::Json => write_json(path, &Document::from_redundancy(rows)),
    }
}

/// Writes every report file into `dir` and returns their paths in order.
///
/// Names follow `{policy}_{tau}_{w}_{metric}.{ext}`; `all` stands in for a
/// dimension a file spans.
pub fn export(report: &Report, dir: &Path, format: Format) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ext = format.extension();
    let mut written = Vec::new();
    let path = dir.join(format!("all_all_all_redundancy.{ext}"));
    write_redundancy(&path, &report.redundancy, format)?;
    written.push(path);
    for t in &report.losses {
        let path = dir.join(format!("{}_all_{}_losses.{ext}", t.policy.label(), duration_token("w", t.w)));
        write_loss_table(&path, t, format)?;
        written.push(path);
    }
    for s in &report.cdfs {
        let path = dir.join(format!("{}_{}.{ext}", s.cell.file_stem(), s.metric));
        write_cdf(&path, s, format)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Re-import

fn read_csv_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let got = r.headers().map_err(csv_err(path))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(ReportError::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected header {:?}", got.iter().collect::<Vec<_>>()),
        });
    }
    r.records().collect::<Result<_, _>>().map_err(csv_err(path))
}

fn parse_f(path: &Path, s: &str) -> Result<f64, ReportError> {
    s.parse().map_err(|_| ReportError::Format {
        path: path.to_path_buf(),
        reason: format!("not a number: `{s}`"),
    })
}

/// Reads a CDF written by [`write_cdf`] in CSV form.
pub fn read_cdf_csv(path: &Path) -> Result<Vec<(f64, f64)>, ReportError> {
    read_csv_rows(path, &CDF_HEADER)?
        .iter()
        .map(|r| Ok((parse_f(path, &r[0])?, parse_f(path, &r[1])?)))
        .collect()
}

/// Reads a loss table written in CSV form.
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRow>, ReportError> {
    read_csv_rows(path, &LOSS_HEADER)?
        .iter()
        .map(|r| {
            let f = |i: usize| parse_f(path, &r[i]);
            Ok(LossRow {
                tau: f(0)?,
                runs: f(1)? as u32,
                peers: f(2)?,
                total_pct: f(3)?,
                incomplete_pct: f(4)?,
                unavoidable_pct: f(5)?,
                failed_restore_pct: f(6)?,
                unfinished_pct: f(7)?,
                crashed_pct: f(8)?,
                total_of_crashed_pct: f(9)?,
                incomplete_of_crashed_pct: f(10)?,
                unavoidable_of_crashed_pct: f(11)?,
                failed_restore_of_crashed_pct: f(12)?,
            })
        })
        .collect()
}

/// Reads a redundancy summary written in CSV form.
pub fn read_redundancy_csv(path: &Path) -> Result<Vec<RedundancyRow>, ReportError> {
    read_csv_rows(path, &REDUNDANCY_HEADER)?
        .iter()
        .map(|r| {
            let policy = match &r[0] {
                "adaptive" => RedundancyPolicy::Adaptive,
                "baseline" => RedundancyPolicy::Baseline {
                    n_fixed: parse_f(path, &r[1])? as u32,
                },
                other => {
                    return Err(ReportError::Format {
                        path: path.to_path_buf(),
                        reason: format!("unknown policy `{other}`"),
                    })
                }
            };
            Ok(RedundancyRow {
                policy,
                tau: parse_f(path, &r[2])?,
                w: parse_f(path, &r[3])?,
                runs: parse_f(path, &r[4])? as u32,
                completed: parse_f(path, &r[5])? as u32,
                mean_r: if r[6].is_empty() { None } else { Some(parse_f(path, &r[6])?) },
            })
        })
        .collect()
}

pub fn read_document(path: &Path) -> Result<Document, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: path.to_path_buf(),
        source,
    })
}
