//! Configuration files.
//!
//! A configuration is a TOML file with up to five sections: `[policy]`,
//! `[sweep]`, `[traces]`, `[simulation]` and `[output]`. Every key is
//! optional. Durations are seconds or strings such as `"2w"`, `"90d"`,
//! `"12h"` or `"inf"`; sizes are bytes or strings such as `"160MiB"`.

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::{Table, Value};

use crate::experiment::{default_seeds, ExperimentSpec, PolicyChoice, TraceSource, BASELINE_N_MAX};
use crate::model::{derive_k, Bytes, PolicyConfig, Seconds, DAY, GIB, HOUR, KIB, MIB, MINUTE, WEEK, YEAR};
use crate::policy::baseline_fragment_count;
use crate::report::Format;
use crate::sim::{SimOptions, TimeoutMode};
use crate::traces::{AvailabilityTargets, SyntheticTraceParams, TracesError, DEFAULT_MIN_AVAILABILITY};

const TIB: f64 = 1024.0 * GIB;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One finding about a configuration file. `field` is `section.key`, or
/// empty for syntax errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{level}")?;
        if let Some(line) = self.line {
            write!(f, " (line {line})")?;
        }
        if self.field.is_empty() {
            write!(f, ": {}", self.message)
        } else {
            write!(f, ": {}: {}", self.field, self.message)
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("{}", render_list(.diagnostics))]
pub struct ConfigError {
    /// Errors first, then any warnings gathered along the way.
    pub diagnostics: Vec<Diagnostic>,
}

impl ConfigError {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }
}

fn render_list(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

/// A parsed value together with the warnings raised while reading it.
#[derive(Debug, Clone)]
pub struct Checked<T> {
    pub value: T,
    pub warnings: Vec<Diagnostic>,
}

/// Reads the `[policy]` section (the rest of the file is checked too) and
/// fills omitted fields with defaults.
pub fn validate_config(text: &str) -> Result<Checked<PolicyConfig>, ConfigError> {
    let spec = parse_experiment(text, Path::new("."))?;
    Ok(Checked {
        value: spec.value.base,
        warnings: spec.warnings,
    })
}

/// Reads a whole configuration file. Relative paths are resolved against
/// `base_dir`.
pub fn parse_experiment(text: &str, base_dir: &Path) -> Result<Checked<ExperimentSpec>, ConfigError> {
    let root: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            let line = e.span().map(|s| line_at(text, s.start));
            return Err(ConfigError {
                diagnostics: vec![Diagnostic {
                    severity: Severity::Error,
                    field: String::new(),
                    line,
                    message: e.message().trim().to_string(),
                }],
            });
        }
    };
    let mut r = Reader {
        text,
        diags: Vec::new(),
    };
    let spec = r.experiment(root, base_dir);
    let mut diags = r.diags;
    diags.sort_by_key(|d| d.severity == Severity::Warning);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(ConfigError { diagnostics: diags });
    }
    Ok(Checked {
        value: spec,
        warnings: diags,
    })
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Reader<'a> {
    text: &'a str,
    diags: Vec<Diagnostic>,
}

const POLICY_KEYS: &[&str] = &[
    "object_size",
    "fragment_size",
    "k",
    "tau",
    "w",
    "sigma1",
    "alpha",
    "sigma2_floor",
    "capacity",
    "baseline_target_availability",
    "baseline_mean_availability",
    "baseline_fragments",
];
const SWEEP_KEYS: &[&str] = &["w", "tau", "policies", "seeds", "seed_count"];
const TRACE_KEYS: &[&str] = &[
    "source",
    "path",
    "horizon",
    "horizon_s",
    "min_availability",
    "peer_count",
    "peers",
    "mean_session",
    "mean_session_s",
    "availability_targets",
    "beta_a",
    "beta_b",
    "always_on_fraction",
    "seed",
    "bandwidth",
];
const SIM_KEYS: &[&str] = &["upload_slots", "stall_cap_factor", "timeout_mode", "record_events", "audit"];
const OUTPUT_KEYS: &[&str] = &["dir", "format"];

impl Reader<'_> {
    /// 1-based line of `key` inside `[section]`, if it can be found.
    fn locate(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if let Some(rest) = t.strip_prefix('[') {
                current = rest.split(']').next().unwrap_or("").trim().to_string();
                continue;
            }
            if current == section {
                if let Some(rest) = t.strip_prefix(key) {
                    if rest.trim_start().starts_with('=') {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn push(&mut self, severity: Severity, section: &str, key: &str, message: String) {
        let line = if key.is_empty() {
            self.locate_section(section)
        } else {
            self.locate(section, key)
        };
        let field = if key.is_empty() {
            section.to_string()
        } else {
            format!("{section}.{key}")
        };
        self.diags.push(Diagnostic {
            severity,
            field,
            line,
            message,
        });
    }

    fn error(&mut self, section: &str, key: &str, message: impl Into<String>) {
        self.push(Severity::Error, section, key, message.into());
    }

    fn warn(&mut self, section: &str, key: &str, message: impl Into<String>) {
        self.push(Severity::Warning, section, key, message.into());
    }

    fn locate_section(&self, section: &str) -> Option<usize> {
        self.text
            .lines()
            .position(|l| l.trim().strip_prefix('[').and_then(|r| r.split(']').next()).map(str::trim) == Some(section))
            .map(|i| i + 1)
    }

    fn section(&mut self, root: &mut Table, name: &str, allowed: &[&str]) -> Table {
        match root.remove(name) {
            None => Table::new(),
            Some(Value::Table(t)) => {
                for key in t.keys() {
                    if !allowed.contains(&key.as_str()) {
                        self.error(name, key, format!("unknown key (expected one of: {})", allowed.join(", ")));
                    }
                }
                t
            }
            Some(_) => {
                self.error(name, "", "must be a section");
                Table::new()
            }
        }
    }

    fn experiment(&mut self, mut root: Table, base_dir: &Path) -> ExperimentSpec {
        let mut policy = self.section(&mut root, "policy", POLICY_KEYS);
        let mut sweep = self.section(&mut root, "sweep", SWEEP_KEYS);
        let mut traces = self.section(&mut root, "traces", TRACE_KEYS);
        let mut sim = self.section(&mut root, "simulation", SIM_KEYS);
        let mut output = self.section(&mut root, "output", OUTPUT_KEYS);
        for key in root.keys() {
            self.error(
                key,
                "",
                "unknown section (expected policy, sweep, traces, simulation or output)",
            );
        }

        let (base, baseline_fragments) = self.policy(&mut policy);
        let w_values = self
            .durations(&mut sweep, "w")
            .unwrap_or_else(|| vec![base.w]);
        let tau_values = self
            .durations(&mut sweep, "tau")
            .unwrap_or_else(|| vec![base.tau]);
        for w in &w_values {
            if !w.get().is_finite() {
                self.error("sweep", "w", "every value must be finite");
            }
        }
        for tau in &tau_values {
            if tau.get() <= 0.0 {
                self.error("sweep", "tau", "every value must be > 0");
            }
        }
        if w_values.is_empty() {
            self.error("sweep", "w", "must not be empty");
        }
        if tau_values.is_empty() {
            self.error("sweep", "tau", "must not be empty");
        }
        let policies = self.policies(&mut sweep);
        let seeds = self.seeds(&mut sweep);

        if policies.contains(&PolicyChoice::Baseline) && baseline_fragments.is_none() {
            if let Err(e) = baseline_fragment_count(
                base.k,
                base.baseline_mean_availability,
                base.baseline_target_availability,
                BASELINE_N_MAX,
            ) {
                if base.violations().is_empty() {
                    self.error("policy", "baseline_target_availability", e.to_string());
                }
            }
        }

        let (trace_source, bandwidth) = self.traces(&mut traces, base_dir);
        let options = self.simulation(&mut sim);
        let dir = self.string(&mut output, "output", "dir").unwrap_or_else(|| "results".into());
        let format = match self.string(&mut output, "output", "format") {
            None => Format::Csv,
            Some(s) => s.parse().unwrap_or_else(|e: String| {
                self.error("output", "format", e);
                Format::Csv
            }),
        };

        ExperimentSpec {
            base,
            baseline_fragments,
            w_values,
            tau_values,
            policies,
            seeds,
            traces: trace_source,
            bandwidth,
            options,
            output_dir: base_dir.join(dir),
            format,
        }
    }

    fn policy(&mut self, t: &mut Table) -> (PolicyConfig, Option<u32>) {
        let d = PolicyConfig::default();
        let s = "policy";
        let object_size = self.size(t, s, "object_size").unwrap_or(d.object_size);
        let fragment_size = self.size(t, s, "fragment_size").unwrap_or(d.fragment_size);
        let derived_k = derive_k(object_size, fragment_size).ok();
        let k = match self.uint(t, s, "k") {
            Some(k) => k,
            None => derived_k.unwrap_or(1),
        };
        let tau = self.duration(t, s, "tau").unwrap_or(d.tau);
        let w = self.duration(t, s, "w").unwrap_or(d.w);
        let config = PolicyConfig {
            object_size,
            fragment_size,
            k,
            tau,
            w,
            sigma1: self.float(t, s, "sigma1").unwrap_or(d.sigma1),
            alpha: self.float(t, s, "alpha").unwrap_or(d.alpha),
            sigma2_floor: self.duration(t, s, "sigma2_floor").unwrap_or(d.sigma2_floor),
            baseline_target_availability: self
                .float(t, s, "baseline_target_availability")
                .unwrap_or(d.baseline_target_availability),
            baseline_mean_availability: self
                .float(t, s, "baseline_mean_availability")
                .unwrap_or(d.baseline_mean_availability),
            capacity: self.size(t, s, "capacity").unwrap_or(d.capacity),
            maintenance_timeout: w,
        };
        for (name, reason) in config.violations() {
            self.error(s, name, reason);
        }
        if fragment_size.get() > object_size.get() {
            self.warn(
                s,
                "fragment_size",
                "is larger than object_size; the object becomes a single padded fragment (k = 1)",
            );
        }
        let baseline_fragments = self.uint(t, s, "baseline_fragments");
        if let Some(n) = baseline_fragments {
            if n < config.k {
                self.error(s, "baseline_fragments", format!("must be >= k = {}, got {n}", config.k));
            }
        }
        (config, baseline_fragments)
    }

    fn policies(&mut self, t: &mut Table) -> Vec<PolicyChoice> {
        let Some(list) = self.list(t, "sweep", "policies") else {
            return vec![PolicyChoice::Adaptive];
        };
        let mut out = Vec::new();
        for v in list {
            match v.as_str() {
                Some("adaptive") => out.push(PolicyChoice::Adaptive),
                Some("baseline") => out.push(PolicyChoice::Baseline),
                _ => self.error("sweep", "policies", format!("unknown policy {v} (expected \"adaptive\" or \"baseline\")")),
            }
        }
        if out.is_empty() {
            self.error("sweep", "policies", "must not be empty");
        }
        out
    }

    fn seeds(&mut self, t: &mut Table) -> Vec<u64> {
        let count = self.uint(t, "sweep", "seed_count");
        let list = self.list(t, "sweep", "seeds");
        match (list, count) {
            (Some(_), Some(_)) => {
                self.error("sweep", "seed_count", "give either `seeds` or `seed_count`, not both");
                default_seeds()
            }
            (None, Some(0)) => {
                self.error("sweep", "seed_count", "must be >= 1");
                default_seeds()
            }
            (None, Some(n)) => (1..=n as u64).collect(),
            (None, None) => default_seeds(),
            (Some(list), None) => {
                let mut out = Vec::new();
                for v in list {
                    match v.as_integer() {
                        Some(i) if i >= 0 => out.push(i as u64),
                        _ => self.error("sweep", "seeds", format!("`{v}` is not a non-negative integer")),
                    }
                }
                if out.is_empty() {
                    self.error("sweep", "seeds", "must not be empty");
                }
                let mut sorted = out.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != out.len() {
                    self.error("sweep", "seeds", "must not repeat a seed");
                }
                out
            }
        }
    }

    fn traces(&mut self, t: &mut Table, base_dir: &Path) -> (TraceSource, Option<PathBuf>) {
        let s = "traces";
        let bandwidth = self.string(t, s, "bandwidth").map(|p| base_dir.join(p));
        let horizon = self
            .duration_alias(t, s, "horizon", "horizon_s")
            .map(Seconds::get);
        let min_availability = self.float(t, s, "min_availability").unwrap_or(DEFAULT_MIN_AVAILABILITY);
        let source = self.string(t, s, "source").unwrap_or_else(|| "synthetic".into());
        let d = SyntheticTraceParams::default();
        match source.as_str() {
            "file" => {
                for key in [
                    "peer_count",
                    "peers",
                    "mean_session",
                    "mean_session_s",
                    "availability_targets",
                    "beta_a",
                    "beta_b",
                    "always_on_fraction",
                    "seed",
                ] {
                    if t.contains_key(key) {
                        self.error(s, key, "only applies to source = \"synthetic\"");
                    }
                }
                let path = match self.string(t, s, "path") {
                    Some(p) => base_dir.join(p),
                    None => {
                        self.error(s, "path", "is required when source = \"file\"");
                        PathBuf::new()
                    }
                };
                let horizon = horizon.unwrap_or(d.horizon);
                if !(horizon > 0.0 && horizon.is_finite()) {
                    self.error(s, "horizon", "must be > 0 and finite");
                }
                if !(0.0..1.0).contains(&min_availability) {
                    self.error(s, "min_availability", "must lie in [0, 1)");
                }
                (
                    TraceSource::File {
                        path,
                        horizon,
                        min_availability,
                    },
                    bandwidth,
                )
            }
            "synthetic" => {
                if t.contains_key("path") {
                    self.error(s, "path", "only applies to source = \"file\"");
                }
                let peer_count = self
                    .uint_alias(t, s, "peer_count", "peers")
                    .map(|n| n as usize)
                    .unwrap_or(d.peer_count);
                let mean_session = self
                    .duration_alias(t, s, "mean_session", "mean_session_s")
                    .map(Seconds::get)
                    .unwrap_or(d.mean_session);
                let targets = self.targets(t, &d.targets);
                let seed = self.uint(t, s, "seed").map(u64::from).unwrap_or(d.seed);
                let params = SyntheticTraceParams {
                    peer_count,
                    horizon: horizon.unwrap_or(d.horizon),
                    mean_session,
                    targets,
                    min_availability,
                    seed,
                };
                if let Err(TracesError::BadParam { name, reason }) = params.validate() {
                    let key = match name {
                        "targets" => "availability_targets",
                        "beta" => "beta_a",
                        other => other,
                    };
                    self.error(s, key, reason);
                }
                (TraceSource::Synthetic(params), bandwidth)
            }
            other => {
                self.error(s, "source", format!("unknown source `{other}` (expected \"synthetic\" or \"file\")"));
                (TraceSource::Synthetic(d), bandwidth)
            }
        }
    }

    fn targets(&mut self, t: &mut Table, default: &AvailabilityTargets) -> AvailabilityTargets {
        let s = "traces";
        let list = self.list(t, s, "availability_targets");
        let a = self.float(t, s, "beta_a");
        let b = self.float(t, s, "beta_b");
        let frac = self.float(t, s, "always_on_fraction");
        if let Some(list) = list {
            if a.is_some() || b.is_some() || frac.is_some() {
                self.error(
                    s,
                    "availability_targets",
                    "cannot be combined with beta_a, beta_b or always_on_fraction",
                );
            }
            let mut targets = Vec::new();
            for v in list {
                match number(&v) {
                    Some(x) => targets.push(x),
                    None => self.error(s, "availability_targets", format!("`{v}` is not a number")),
                }
            }
            return AvailabilityTargets::List { targets };
        }
        let (da, db, dfrac) = match default {
            AvailabilityTargets::Beta {
                a,
                b,
                always_on_fraction,
            } => (*a, *b, *always_on_fraction),
            AvailabilityTargets::List { .. } => (0.7, 3.5, 0.03),
        };
        AvailabilityTargets::Beta {
            a: a.unwrap_or(da),
            b: b.unwrap_or(db),
            always_on_fraction: frac.unwrap_or(dfrac),
        }
    }

    fn simulation(&mut self, t: &mut Table) -> SimOptions {
        let s = "simulation";
        let d = SimOptions::default();
        let upload_slots = match self.uint(t, s, "upload_slots") {
            Some(0) => {
                self.error(s, "upload_slots", "must be >= 1");
                d.upload_slots
            }
            Some(n) => n as usize,
            None => d.upload_slots,
        };
        let stall_cap_factor = match self.uint(t, s, "stall_cap_factor") {
            Some(0) => {
                self.error(s, "stall_cap_factor", "must be >= 1");
                d.stall_cap_factor
            }
            Some(n) => n,
            None => d.stall_cap_factor,
        };
        let timeout_mode = match self.string(t, s, "timeout_mode").as_deref() {
            None => d.timeout_mode,
            Some("dead-only") => TimeoutMode::DeadOnly,
            Some("any-offline") => TimeoutMode::AnyOffline,
            Some(other) => {
                self.error(
                    s,
                    "timeout_mode",
                    format!("unknown mode `{other}` (expected \"dead-only\" or \"any-offline\")"),
                );
                d.timeout_mode
            }
        };
        SimOptions {
            upload_slots,
            stall_cap_factor,
            timeout_mode,
            record_events: self.boolean(t, s, "record_events").unwrap_or(d.record_events),
            audit: self.boolean(t, s, "audit").unwrap_or(d.audit),
        }
    }

    fn float(&mut self, t: &mut Table, s: &str, key: &str) -> Option<f64> {
        let v = t.remove(key)?;
        let x = number(&v);
        if x.is_none() {
            self.error(s, key, format!("expected a number, got {v}"));
        }
        x
    }

    fn uint(&mut self, t: &mut Table, s: &str, key: &str) -> Option<u32> {
        let v = t.remove(key)?;
        match v.as_integer().and_then(|i| u32::try_from(i).ok()) {
            Some(n) => Some(n),
            None => {
                self.error(s, key, format!("expected a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn uint_alias(&mut self, t: &mut Table, s: &str, key: &str, alias: &str) -> Option<u32> {
        if t.contains_key(key) && t.contains_key(alias) {
            self.error(s, alias, format!("duplicates `{key}`"));
        }
        self.uint(t, s, key).or_else(|| self.uint(t, s, alias))
    }

    fn boolean(&mut self, t: &mut Table, s: &str, key: &str) -> Option<bool> {
        let v = t.remove(key)?;
        let b = v.as_bool();
        if b.is_none() {
            self.error(s, key, format!("expected true or false, got {v}"));
        }
        b
    }

    fn string(&mut self, t: &mut Table, s: &str, key: &str) -> Option<String> {
        match t.remove(key)? {
            Value::String(x) => Some(x),
            v => {
                self.error(s, key, format!("expected a string, got {v}"));
                None
            }
        }
    }

    fn list(&mut self, t: &mut Table, s: &str, key: &str) -> Option<Vec<Value>> {
        match t.remove(key)? {
            Value::Array(a) => Some(a),
            v => {
                self.error(s, key, format!("expected a list, got {v}"));
                None
            }
        }
    }

    fn duration(&mut self, t: &mut Table, s: &str, key: &str) -> Option<Seconds> {
        let v = t.remove(key)?;
        match parse_duration(&v) {
            Ok(d) => Some(d),
            Err(e) => {
                self.error(s, key, e);
                None
            }
        }
    }

    fn duration_alias(&mut self, t: &mut Table, s: &str, key: &str, alias: &str) -> Option<Seconds> {
        if t.contains_key(key) && t.contains_key(alias) {
            self.error(s, alias, format!("duplicates `{key}`"));
        }
        self.duration(t, s, key).or_else(|| self.duration(t, s, alias))
    }

    fn durations(&mut self, t: &mut Table, key: &str) -> Option<Vec<Seconds>> {
        let list = self.list(t, "sweep", key)?;
        let mut out = Vec::new();
        for v in list {
            match parse_duration(&v) {
                Ok(d) => out.push(d),
                Err(e) => self.error("sweep", key, e),
            }
        }
        Some(out)
    }

    fn size(&mut self, t: &mut Table, s: &str, key: &str) -> Option<Bytes> {
        let v = t.remove(key)?;
        match parse_size(&v) {
            Ok(b) => Some(b),
            Err(e) => {
                self.error(s, key, e);
                None
            }
        }
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Integer(i) => Some(*i as f64),
        Value::Float(x) if !x.is_nan() => Some(*x),
        _ => None,
    }
}

/// Splits `"12.5 GiB"` into `(12.5, "GiB")`.
fn split_quantity(s: &str) -> Option<(f64, &str)> {
    let s = s.trim();
    let end = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+' || c == 'e' || c == 'E'))
        .unwrap_or(s.len());
    // An exponent marker directly followed by a unit letter belongs to the unit.
    let (mut num, mut unit) = s.split_at(end);
    while num.ends_with(['e', 'E']) {
        let cut = num.len() - 1;
        (num, unit) = s.split_at(cut);
    }
    let x: f64 = num.trim().parse().ok()?;
    Some((x, unit.trim()))
}

/// Seconds, or a string with a unit: `s`, `m`, `h`, `d`, `w`, `y` (365 days),
/// spelled short or long. `"inf"` means never.
pub fn parse_duration(v: &Value) -> Result<Seconds, String> {
    let x = match v {
        Value::String(s) => {
            let t = s.trim();
            if matches!(t, "inf" | "infinity" | "never") {
                f64::INFINITY
            } else {
                let (n, unit) = split_quantity(t).ok_or_else(|| format!("cannot read duration `{s}`"))?;
                let scale = match unit {
                    "" | "s" | "sec" | "secs" | "second" | "seconds" => 1.0,
                    "m" | "min" | "mins" | "minute" | "minutes" => MINUTE,
                    "h" | "hour" | "hours" => HOUR,
                    "d" | "day" | "days" => DAY,
                    "w" | "week" | "weeks" => WEEK,
                    "y" | "year" | "years" => YEAR,
                    other => return Err(format!("unknown duration unit `{other}` in `{s}`")),
                };
                n * scale
            }
        }
        other => number(other).ok_or_else(|| format!("expected a duration, got {other}"))?,
    };
    Seconds::new(x).map_err(|_| format!("must be a non-negative duration, got {v}"))
}

/// Bytes, or a string with a binary unit: `B`, `KiB`, `MiB`, `GiB`, `TiB`.
pub fn parse_size(v: &Value) -> Result<Bytes, String> {
    let x = match v {
        Value::String(s) => {
            let (n, unit) = split_quantity(s).ok_or_else(|| format!("cannot read size `{s}`"))?;
            let scale = match unit {
                "" | "B" => 1.0,
                "KiB" => KIB,
                "MiB" => MIB,
                "GiB" => GIB,
                "TiB" => TIB,
                other => return Err(format!("unknown size unit `{other}` in `{s}` (use B, KiB, MiB, GiB or TiB)")),
            };
            n * scale
        }
        other => number(other).ok_or_else(|| format!("expected a size, got {other}"))?,
    };
    Bytes::new(x).map_err(|_| format!("must be a non-negative size, got {v}"))
}

fn fmt_duration(s: Seconds) -> String {
    let x = s.get();
    if x.is_infinite() {
        return "\"inf\"".into();
    }
    for (unit, scale) in [("w", WEEK), ("d", DAY), ("h", HOUR)] {
        let n = x / scale;
        if x > 0.0 && n.fract() == 0.0 && n * scale == x && n < 1e9 {
            return format!("\"{n}{unit}\"");
        }
    }
    fmt_float(x)
}

fn fmt_size(b: Bytes) -> String {
    let x = b.get();
    for (unit, scale) in [("TiB", TIB), ("GiB", GIB), ("MiB", MIB), ("KiB", KIB)] {
        let n = x / scale;
        if x > 0.0 && n.fract() == 0.0 && n * scale == x && n < 1e9 {
            return format!("\"{n}{unit}\"");
        }
    }
    fmt_float(x)
}

/// Shortest text that reads back to the same value.
fn fmt_float(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_str(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

fn fmt_path(p: &Path) -> String {
    fmt_str(&p.to_string_lossy())
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    let inner: Vec<String> = items.iter().map(f).collect();
    format!("[{}]", inner.join(", "))
}

/// Writes `spec` back as a configuration file. Reading the result with
/// [`parse_experiment`] gives back the same spec. Paths are written as they
/// are stored, so a spec parsed against an absolute directory renders
/// absolute paths.
pub fn render_config(spec: &ExperimentSpec) -> String {
    use std::fmt::Write;
    let b = &spec.base;
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "[policy]");
    let _ = writeln!(w, "object_size = {}", fmt_size(b.object_size));
    let _ = writeln!(w, "fragment_size = {}", fmt_size(b.fragment_size));
    let _ = writeln!(w, "k = {}", b.k);
    let _ = writeln!(w, "tau = {}", fmt_duration(b.tau));
    let _ = writeln!(w, "w = {}", fmt_duration(b.w));
    let _ = writeln!(w, "sigma1 = {}", fmt_float(b.sigma1));
    let _ = writeln!(w, "alpha = {}", fmt_float(b.alpha));
    let _ = writeln!(w, "sigma2_floor = {}", fmt_duration(b.sigma2_floor));
    let _ = writeln!(w, "capacity = {}", fmt_size(b.capacity));
    let _ = writeln!(w, "baseline_target_availability = {}", fmt_float(b.baseline_target_availability));
    let _ = writeln!(w, "baseline_mean_availability = {}", fmt_float(b.baseline_mean_availability));
    if let Some(n) = spec.baseline_fragments {
        let _ = writeln!(w, "baseline_fragments = {n}");
    }

    let _ = writeln!(w, "\n[sweep]");
    let _ = writeln!(w, "w = {}", fmt_list(&spec.w_values, |s| fmt_duration(*s)));
    let _ = writeln!(w, "tau = {}", fmt_list(&spec.tau_values, |s| fmt_duration(*s)));
    let _ = writeln!(
        w,
        "policies = {}",
        fmt_list(&spec.policies, |p| match p {
            PolicyChoice::Adaptive => "\"adaptive\"".to_string(),
            PolicyChoice::Baseline => "\"baseline\"".to_string(),
        })
    );
    let _ = writeln!(w, "seeds = {}", fmt_list(&spec.seeds, |s| s.to_string()));

    let _ = writeln!(w, "\n[traces]");
    match &spec.traces {
        TraceSource::File {
            path,
            horizon,
            min_availability,
        } => {
            let _ = writeln!(w, "source = \"file\"");
            let _ = writeln!(w, "path = {}", fmt_path(path));
            let _ = writeln!(w, "horizon = {}", fmt_duration(Seconds::new(*horizon).unwrap_or_default()));
            let _ = writeln!(w, "min_availability = {}", fmt_float(*min_availability));
        }
        TraceSource::Synthetic(p) => {
            let _ = writeln!(w, "source = \"synthetic\"");
            let _ = writeln!(w, "peer_count = {}", p.peer_count);
            let _ = writeln!(w, "horizon = {}", fmt_duration(Seconds::new(p.horizon).unwrap_or_default()));
            let _ = writeln!(w, "mean_session = {}", fmt_duration(Seconds::new(p.mean_session).unwrap_or_default()));
            match &p.targets {
                AvailabilityTargets::List { targets } => {
                    let _ = writeln!(w, "availability_targets = {}", fmt_list(targets, |x| fmt_float(*x)));
                }
                AvailabilityTargets::Beta {
                    a,
                    b,
                    always_on_fraction,
                } => {
                    let _ = writeln!(w, "beta_a = {}", fmt_float(*a));
                    let _ = writeln!(w, "beta_b = {}", fmt_float(*b));
                    let _ = writeln!(w, "always_on_fraction = {}", fmt_float(*always_on_fraction));
                }
            }
            let _ = writeln!(w, "min_availability = {}", fmt_float(p.min_availability));
            let _ = writeln!(w, "seed = {}", p.seed);
        }
    }
    if let Some(bw) = &spec.bandwidth {
        let _ = writeln!(w, "bandwidth = {}", fmt_path(bw));
    }

    let o = &spec.options;
    let _ = writeln!(w, "\n[simulation]");
    let _ = writeln!(w, "upload_slots = {}", o.upload_slots);
    let _ = writeln!(w, "stall_cap_factor = {}", o.stall_cap_factor);
    let mode = match o.timeout_mode {
        TimeoutMode::DeadOnly => "dead-only",
        TimeoutMode::AnyOffline => "any-offline",
    };
    let _ = writeln!(w, "timeout_mode = \"{mode}\"");
    let _ = writeln!(w, "record_events = {}", o.record_events);
    let _ = writeln!(w, "audit = {}", o.audit);

    let _ = writeln!(w, "\n[output]");
    let _ = writeln!(w, "dir = {}", fmt_path(&spec.output_dir));
    let _ = writeln!(w, "format = \"{}\"", spec.format.extension());
    out
}
