//! Trace-driven discrete-event simulation of backup, maintenance and restore.
//!
//! One run replays every peer's availability trace, kills peers at
//! exponentially distributed times, and moves fragments over access links
//! shared max-min fairly. Runs are single-threaded and fully determined by
//! their inputs and seed.

mod bandwidth;
mod engine;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bandwidth::{allocate_bandwidth, max_overshoot, Allocator, Flow};

use crate::model::{Bytes, ModelError, PeerId, PeerProfile, PolicyConfig, Seconds};
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ModelError),
    #[error("invalid policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("invalid peer set: {0}")]
    Peers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RedundancyPolicy {
    Adaptive,
    Baseline { n_fixed: u32 },
}

impl RedundancyPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            RedundancyPolicy::Adaptive => "adaptive",
            RedundancyPolicy::Baseline { .. } => "baseline",
        }
    }
}

/// Which offline holders the maintenance timeout declares lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimeoutMode {
    /// Only holders that actually died; the timeout is a detection delay
    /// measured from the holder's last disconnection.
    #[default]
    DeadOnly,
    /// Any holder offline for the whole timeout, dead or not. Fragments of
    /// falsely suspected holders are discarded.
    AnyOffline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Uploads an owner keeps progressing in parallel.
    pub upload_slots: usize,
    /// The adaptive loop settles for `d >= sigma1` once this many times `k`
    /// fragments are placed (capped by the number of other peers).
    pub stall_cap_factor: u32,
    pub timeout_mode: TimeoutMode,
    pub record_events: bool,
    /// Check link caps after every reallocation.
    pub audit: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            upload_slots: 8,
            stall_cap_factor: 10,
            timeout_mode: TimeoutMode::DeadOnly,
            record_events: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossCategory {
    None,
    IncompleteBackup,
    /// Died before even an ideal system could have finished the backup.
    IncompleteUnavoidable,
    FailedRestore,
}

impl LossCategory {
    pub fn is_incomplete_backup(self) -> bool {
        matches!(self, LossCategory::IncompleteBackup | LossCategory::IncompleteUnavoidable)
    }

    pub fn is_loss(self) -> bool {
        self != LossCategory::None
    }
}

/// State of the stop condition at the moment an adaptive backup completed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionCheck {
    pub n: u32,
    pub durability: f64,
    pub ettr: f64,
    pub sigma2: f64,
    /// Completed through the fragment cap rather than the stop condition.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerOutcome {
    pub peer: PeerId,
    pub name: String,
    pub uplink: f64,
    pub downlink: f64,
    pub availability: f64,
    pub backup_start: Option<f64>,
    pub backup_complete: Option<f64>,
    pub ttb: Option<f64>,
    pub min_ttb: Option<f64>,
    pub death_time: Option<f64>,
    pub restore_start: Option<f64>,
    pub restore_complete: Option<f64>,
    pub ttr: Option<f64>,
    pub min_ttr: f64,
    pub fragments_at_completion: Option<u32>,
    pub fragments_final: u32,
    pub completion_check: Option<CompletionCheck>,
    pub loss: LossCategory,
    /// Alive at the horizon without a complete backup.
    pub unfinished_backup: bool,
    /// Restore still running at the horizon.
    pub unfinished_restore: bool,
}

impl PeerOutcome {
    pub fn ttb_ratio(&self) -> Option<f64> {
        match (self.ttb, self.min_ttb) {
            (Some(t), Some(m)) if m > 0.0 => Some(t / m),
            _ => None,
        }
    }

    pub fn ttr_ratio(&self) -> Option<f64> {
        self.ttr.map(|t| t / self.min_ttr)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub events: u64,
    pub reallocations: u64,
    pub backup_uploads: u64,
    pub maintenance_uploads: u64,
    pub restore_downloads: u64,
    pub cancelled_transfers: u64,
    pub holders_lost: u64,
    pub stalled_completions: u64,
    pub audit_violations: u64,
    pub max_overshoot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LogKind {
    PeerUp,
    PeerDown,
    Death,
    TransferComplete,
    TimeoutExpired,
    HorizonEnd,
    HolderLost,
    BackupComplete,
    RestoreStart,
    RestoreComplete,
    RestoreFailed,
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LogKind::PeerUp => "PEER_UP",
            LogKind::PeerDown => "PEER_DOWN",
            LogKind::Death => "DEATH",
            LogKind::TransferComplete => "TRANSFER_COMPLETE",
            LogKind::TimeoutExpired => "TIMEOUT_EXPIRED",
            LogKind::HorizonEnd => "HORIZON_END",
            LogKind::HolderLost => "HOLDER_LOST",
            LogKind::BackupComplete => "BACKUP_COMPLETE",
            LogKind::RestoreStart => "RESTORE_START",
            LogKind::RestoreComplete => "RESTORE_COMPLETE",
            LogKind::RestoreFailed => "RESTORE_FAILED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: LogKind,
    pub subject: u32,
    pub other: Option<u32>,
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} {} {}", self.time, self.kind, self.subject)?;
        if let Some(o) = self.other {
            write!(f, " {o}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub policy: RedundancyPolicy,
    pub seed: u64,
    pub k: u32,
    #[serde(with = "crate::model::extended_f64")]
    pub tau: f64,
    pub w: f64,
    pub horizon: f64,
    pub peers: Vec<PeerOutcome>,
    pub stats: SimStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventRecord>,
}

impl SimulationOutcome {
    /// Mean `n / k` at backup completion over peers that completed.
    pub fn mean_redundancy(&self) -> Option<f64> {
        let rs: Vec<f64> = self
            .peers
            .iter()
            .filter_map(|p| p.fragments_at_completion)
            .map(|n| n as f64 / self.k as f64)
            .collect();
        if rs.is_empty() {
            None
        } else {
            Some(rs.iter().sum::<f64>() / rs.len() as f64)
        }
    }

    /// One line per logged event: `time KIND subject [other]`.
    pub fn event_log_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

/// Online-time lower bound on the backup of `object_size` starting at `start`.
pub fn min_ttb(peer: &PeerProfile, start: Seconds, object_size: Bytes) -> Option<Seconds> {
    peer.trace
        .time_to_accumulate(start.get(), object_size.get() / peer.uplink.get())
        .map(|t| Seconds::new(t).expect("non-negative"))
}

/// Restore lower bound; the restoring peer stays online throughout.
pub fn min_ttr(peer: &PeerProfile, object_size: Bytes) -> Seconds {
    Seconds::new(object_size.get() / peer.downlink.get()).expect("non-negative")
}

/// Uniform choice among `candidates`, never returning `owner`.
pub fn select_storage_target<R: Rng + ?Sized>(rng: &mut R, owner: PeerId, candidates: &[PeerId]) -> Option<PeerId> {
    let eligible = candidates.iter().filter(|&&c| c != owner).count();
    if eligible == 0 {
        return None;
    }
    let pick = rng.gen_range(0..eligible);
    candidates.iter().copied().filter(|&c| c != owner).nth(pick)
}

/// Independent exponential lifetimes with mean `tau`; `+inf` when `tau` is.
pub fn draw_death_times<R: Rng + ?Sized>(peer_count: usize, tau: Seconds, rng: &mut R) -> Vec<f64> {
    if tau.get().is_infinite() {
        return vec![f64::INFINITY; peer_count];
    }
    let exp = Exp::new(1.0 / tau.get()).expect("positive rate");
    (0..peer_count).map(|_| exp.sample(rng)).collect()
}

/// Runs one simulation. See the module docs.
pub fn run(
    config: &PolicyConfig,
    policy: RedundancyPolicy,
    peers: &[PeerProfile],
    seed: u64,
    options: &SimOptions,
) -> Result<SimulationOutcome, SimError> {
    config.validate()?;
    if peers.is_empty() {
        return Err(SimError::Peers("no peers".into()));
    }
    let horizon = peers[0].trace.horizon();
    for (i, p) in peers.iter().enumerate() {
        if p.id.index() != i {
            return Err(SimError::Peers(format!("peer at position {i} has id {}", p.id)));
        }
        if p.trace.horizon() != horizon {
            return Err(SimError::Peers(format!("peer {} has a different horizon", p.id)));
        }
    }
    if let RedundancyPolicy::Baseline { n_fixed } = policy {
        if n_fixed < config.k {
            return Err(SimError::Policy(PolicyError::InvalidArgument {
                name: "n_fixed",
                reason: format!("{n_fixed} is below k = {}", config.k),
            }));
        }
    }
    if options.upload_slots == 0 {
        return Err(SimError::Peers("upload_slots must be >= 1".into()));
    }
    Ok(engine::Engine::new(config, policy, peers, seed, options).run())
}
