use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bandwidth::{Allocator, Flow};
use super::{
    draw_death_times, select_storage_target, CompletionCheck, EventRecord, LogKind, LossCategory, PeerOutcome,
    RedundancyPolicy, SimOptions, SimStats, SimulationOutcome, TimeoutMode,
};
use crate::model::{PeerId, PeerProfile, PolicyConfig, Seconds};
use crate::policy::{assess_rates, sigma2, stop_condition};
use crate::trace::EventKind as TraceKind;

const RNG_STREAM_DEATHS: u64 = 1;
const RNG_STREAM_PLACEMENT: u64 = 2;

/// Queue kinds in tie-break order. Transfer completions are not queued; they
/// are derived from the current rates and slot in between `Up` and `Timeout`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum QueueKind {
    Death = 0,
    Down = 1,
    Up = 2,
    Timeout = 4,
    Horizon = 5,
}

const COMPLETE_PRIORITY: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    time: f64,
    kind: QueueKind,
    subject: u32,
    /// Trace cursor for up/down, down-epoch for timeouts.
    tag: u32,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.subject.cmp(&other.subject))
            .then(self.tag.cmp(&other.tag))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TransferKind {
    Backup,
    Maintenance,
    Restore,
}

#[derive(Debug, Clone)]
struct Transfer {
    src: u32,
    dst: u32,
    /// Owner of the object the fragment belongs to.
    owner: u32,
    kind: TransferKind,
    remaining: f64,
}

/// Transfers indexed by their (monotonically assigned) id.
#[derive(Debug, Default)]
struct Slab(Vec<Option<Transfer>>);

impl Slab {
    fn insert(&mut self, id: u64, t: Transfer) {
        debug_assert_eq!(id as usize, self.0.len());
        self.0.push(Some(t));
    }

    fn get(&self, id: &u64) -> Option<&Transfer> {
        self.0.get(*id as usize).and_then(Option::as_ref)
    }

    fn get_mut(&mut self, id: &u64) -> Option<&mut Transfer> {
        self.0.get_mut(*id as usize).and_then(Option::as_mut)
    }

    fn remove(&mut self, id: &u64) -> Option<Transfer> {
        self.0.get_mut(*id as usize).and_then(Option::take)
    }
}

impl std::ops::Index<&u64> for Slab {
    type Output = Transfer;

    fn index(&self, id: &u64) -> &Transfer {
        self.get(id).expect("live transfer")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    BackingUp,
    Maintaining,
    Restoring,
    Done,
}

#[derive(Debug)]
struct PeerState {
    online: bool,
    dead: bool,
    restoring: bool,
    retired: bool,
    last_down: f64,
    down_epoch: u32,
    death_time: Option<f64>,
    // host side
    stored: BTreeSet<u32>,
    reserved: u32,
    tracked_by: BTreeSet<u32>,
    // owner side
    phase: Phase,
    holders: BTreeSet<u32>,
    upload_targets: BTreeSet<u32>,
    transfers: BTreeSet<u64>,
    requirement_met: Option<bool>,
    received: u32,
    // outcome
    backup_start: Option<f64>,
    backup_complete: Option<f64>,
    restore_start: Option<f64>,
    restore_complete: Option<f64>,
    fragments_at_completion: Option<u32>,
    fragments_final: Option<u32>,
    completion_check: Option<CompletionCheck>,
    loss: LossCategory,
}

pub(super) struct Engine<'a> {
    config: &'a PolicyConfig,
    policy: RedundancyPolicy,
    profiles: &'a [PeerProfile],
    options: &'a SimOptions,
    seed: u64,
    horizon: f64,
    fragment: f64,
    n_cap: u32,
    now: f64,
    queue: BinaryHeap<Reverse<QueueEntry>>,
    peers: Vec<PeerState>,
    transfers: Slab,
    /// Transfers whose endpoints are both up.
    active: BTreeSet<u64>,
    next_transfer: u64,
    placement_rng: ChaCha8Rng,
    uplink: Vec<f64>,
    downlink: Vec<f64>,
    expected_rate: Vec<f64>,
    attention: BTreeSet<u32>,
    stalled: BTreeSet<u32>,
    dirty: bool,
    allocator: Allocator,
    flows: Vec<Flow>,
    flow_ids: Vec<u64>,
    rates: Vec<f64>,
    scratch_rates: Vec<f64>,
    stats: SimStats,
    log: Vec<EventRecord>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        config: &'a PolicyConfig,
        policy: RedundancyPolicy,
        profiles: &'a [PeerProfile],
        seed: u64,
        options: &'a SimOptions,
    ) -> Self {
        let mut death_rng = ChaCha8Rng::seed_from_u64(seed);
        death_rng.set_stream(RNG_STREAM_DEATHS);
        let deaths = draw_death_times(profiles.len(), config.tau, &mut death_rng);
        Self::with_deaths(config, policy, profiles, seed, options, &deaths)
    }

    /// Like `new`, with death times supplied instead of drawn.
    pub(super) fn with_deaths(
        config: &'a PolicyConfig,
        policy: RedundancyPolicy,
        profiles: &'a [PeerProfile],
        seed: u64,
        options: &'a SimOptions,
        deaths: &[f64],
    ) -> Self {
        let horizon = profiles[0].trace.horizon();
        let mut placement_rng = ChaCha8Rng::seed_from_u64(seed);
        placement_rng.set_stream(RNG_STREAM_PLACEMENT);

        let mut queue = BinaryHeap::new();
        let mut peers = Vec::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            let death_time = Some(deaths[i]).filter(|&d| d < horizon);
            if let Some(d) = death_time {
                queue.push(Reverse(QueueEntry {
                    time: d,
                    kind: QueueKind::Death,
                    subject: i as u32,
                    tag: 0,
                }));
            }
            if let Some(ev) = p.trace.events().first() {
                queue.push(Reverse(trace_entry(i as u32, 0, ev.time, ev.kind)));
            }
            let online = p.trace.initially_online();
            peers.push(PeerState {
                online,
                dead: false,
                restoring: false,
                retired: false,
                last_down: 0.0,
                down_epoch: 0,
                death_time,
                stored: BTreeSet::new(),
                reserved: 0,
                tracked_by: BTreeSet::new(),
                phase: Phase::BackingUp,
                holders: BTreeSet::new(),
                upload_targets: BTreeSet::new(),
                transfers: BTreeSet::new(),
                requirement_met: None,
                received: 0,
                backup_start: if online { Some(0.0) } else { None },
                backup_complete: None,
                restore_start: None,
                restore_complete: None,
                fragments_at_completion: None,
                fragments_final: None,
                completion_check: None,
                loss: LossCategory::None,
            });
        }
        queue.push(Reverse(QueueEntry {
            time: horizon,
            kind: QueueKind::Horizon,
            subject: 0,
            tag: 0,
        }));
        let others = profiles.len().saturating_sub(1) as u32;
        let n_cap = (options.stall_cap_factor.saturating_mul(config.k)).min(others).max(config.k);
        let attention = (0..profiles.len() as u32).filter(|&i| peers[i as usize].online).collect();
        Engine {
            config,
            policy,
            profiles,
            options,
            seed,
            horizon,
            fragment: config.fragment_size.get(),
            n_cap,
            now: 0.0,
            queue,
            peers,
            transfers: Slab::default(),
            active: BTreeSet::new(),
            next_transfer: 0,
            placement_rng,
            uplink: profiles.iter().map(|p| p.uplink.get()).collect(),
            downlink: profiles.iter().map(|p| p.downlink.get()).collect(),
            expected_rate: profiles.iter().map(|p| p.uplink.get() * p.availability).collect(),
            attention,
            stalled: BTreeSet::new(),
            dirty: true,
            allocator: Allocator::new(),
            flows: Vec::new(),
            flow_ids: Vec::new(),
            rates: Vec::new(),
            scratch_rates: Vec::new(),
            stats: SimStats::default(),
            log: Vec::new(),
        }
    }

    pub(super) fn run(mut self) -> SimulationOutcome {
        self.settle();
        loop {
            let next = self.queue.peek().map(|Reverse(e)| *e).expect("horizon event is always queued");
            let (done_at, done_id) = self.next_completion();
            let completion_first = match done_id {
                Some(_) => {
                    done_at < next.time || (done_at == next.time && (next.kind as u8) > COMPLETE_PRIORITY)
                }
                None => false,
            };
            if completion_first {
                self.advance_to(done_at);
                self.complete_transfers(done_id.expect("checked"));
            } else {
                self.queue.pop();
                self.advance_to(next.time);
                self.stats.events += 1;
                match next.kind {
                    QueueKind::Horizon => {
                        self.record(LogKind::HorizonEnd, 0, None);
                        break;
                    }
                    QueueKind::Death => self.on_death(next.subject),
                    QueueKind::Down | QueueKind::Up => self.on_trace_event(next.subject, next.tag),
                    QueueKind::Timeout => self.on_timeout(next.subject, next.tag),
                }
            }
            self.settle();
        }
        self.finish()
    }

    fn record(&mut self, kind: LogKind, subject: u32, other: Option<u32>) {
        if self.options.record_events {
            self.log.push(EventRecord {
                time: self.now,
                kind,
                subject,
                other,
            });
        }
    }

    fn is_up(&self, p: u32) -> bool {
        let s = &self.peers[p as usize];
        !s.retired && (s.restoring || (s.online && !s.dead))
    }

    fn next_completion(&self) -> (f64, Option<u64>) {
        let mut best = (f64::INFINITY, None);
        for (&id, &rate) in self.flow_ids.iter().zip(&self.rates) {
            if rate <= 0.0 {
                continue;
            }
            let t = &self.transfers[&id];
            let at = self.now + t.remaining / rate;
            if at < best.0 {
                best = (at, Some(id));
            }
        }
        best
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.now;
        if dt > 0.0 {
            for (&id, &rate) in self.flow_ids.iter().zip(&self.rates) {
                if rate > 0.0 {
                    let tr = self.transfers.get_mut(&id).expect("active transfer exists");
                    tr.remaining -= rate * dt;
                }
            }
        }
        self.now = self.now.max(t);
    }

    /// Runs deferred owner work and reallocates bandwidth if anything moved.
    fn settle(&mut self) {
        while let Some(owner) = self.attention.pop_first() {
            self.try_progress(owner);
        }
        if self.dirty {
            self.reallocate();
            self.dirty = false;
        }
    }

    fn reallocate(&mut self) {
        self.stats.reallocations += 1;
        self.flows.clear();
        self.flow_ids.clear();
        for &id in &self.active {
            let t = &self.transfers[&id];
            self.flows.push(Flow {
                src: t.src as usize,
                dst: t.dst as usize,
            });
            self.flow_ids.push(id);
        }
        self.allocator
            .allocate(&self.flows, &self.uplink, &self.downlink, &mut self.rates);
        if self.options.audit {
            let over = super::max_overshoot(&self.flows, &self.rates, &self.uplink, &self.downlink);
            self.stats.max_overshoot = self.stats.max_overshoot.max(over);
            if over > 1e-9 {
                self.stats.audit_violations += 1;
            }
            for f in &self.flows {
                if !self.is_up(f.src as u32) || !self.is_up(f.dst as u32) {
                    self.stats.audit_violations += 1;
                }
            }
        }
    }

    fn push(&mut self, time: f64, kind: QueueKind, subject: u32, tag: u32) {
        if time < self.horizon {
            self.queue.push(Reverse(QueueEntry {
                time,
                kind,
                subject,
                tag,
            }));
        }
    }

    fn on_trace_event(&mut self, p: u32, cursor: u32) {
        let events = self.profiles[p as usize].trace.events();
        let ev = events[cursor as usize];
        if let Some(next) = events.get(cursor as usize + 1) {
            let entry = trace_entry(p, cursor + 1, next.time, next.kind);
            self.push(entry.time, entry.kind, entry.subject, entry.tag);
        }
        let state = &mut self.peers[p as usize];
        if state.dead || state.retired {
            return;
        }
        match ev.kind {
            TraceKind::Up => {
                if state.online {
                    return;
                }
                state.online = true;
                if state.backup_start.is_none() {
                    state.backup_start = Some(self.now);
                }
                self.record(LogKind::PeerUp, p, None);
                self.attention.insert(p);
                let stalled = std::mem::take(&mut self.stalled);
                self.attention.extend(stalled);
            }
            TraceKind::Down => {
                if !state.online {
                    return;
                }
                state.online = false;
                state.last_down = self.now;
                state.down_epoch += 1;
                let epoch = state.down_epoch;
                self.record(LogKind::PeerDown, p, None);
                // Owners uploading here lose a slot until it comes back.
                for id in &self.peers[p as usize].transfers {
                    let t = &self.transfers[id];
                    if t.kind != TransferKind::Restore && t.dst == p {
                        self.attention.insert(t.owner);
                    }
                }
                if self.options.timeout_mode == TimeoutMode::AnyOffline {
                    let at = self.now + self.config.maintenance_timeout.get();
                    self.push(at, QueueKind::Timeout, p, epoch);
                }
            }
        }
        self.refresh_links(p);
        self.dirty = true;
    }

    /// Re-derives which of `p`'s transfers can progress after its up-state
    /// changed.
    fn refresh_links(&mut self, p: u32) {
        let ids: Vec<u64> = self.peers[p as usize].transfers.iter().copied().collect();
        for id in ids {
            let t = &self.transfers[&id];
            if self.is_up(t.src) && self.is_up(t.dst) {
                self.active.insert(id);
            } else {
                self.active.remove(&id);
            }
        }
    }

    fn on_death(&mut self, p: u32) {
        self.record(LogKind::Death, p, None);
        self.dirty = true;
        let was_online = self.peers[p as usize].online;
        {
            let s = &mut self.peers[p as usize];
            s.dead = true;
            s.online = false;
        }
        // Everything this peer was sending or receiving is gone.
        self.cancel_all_transfers_of(p);
        let stored = std::mem::take(&mut self.peers[p as usize].stored);
        self.peers[p as usize].reserved = 0;
        for owner in stored {
            if self.peers[owner as usize].phase == Phase::Restoring {
                self.check_restore_feasible(owner);
            }
        }

        // Detection: the timeout runs from the last disconnection.
        let timeout = self.config.maintenance_timeout.get();
        let s = &mut self.peers[p as usize];
        let epoch;
        if was_online {
            s.last_down = self.now;
            s.down_epoch += 1;
            epoch = s.down_epoch;
            let at = self.now + timeout;
            self.push(at, QueueKind::Timeout, p, epoch);
        } else if self.options.timeout_mode == TimeoutMode::DeadOnly {
            epoch = s.down_epoch;
            let at = (s.last_down + timeout).max(self.now);
            self.push(at, QueueKind::Timeout, p, epoch);
        }

        // Owner side.
        match self.peers[p as usize].phase {
            Phase::BackingUp => {
                let s = &self.peers[p as usize];
                let unavoidable = match s.backup_start {
                    None => true,
                    Some(start) => {
                        let profile = &self.profiles[p as usize];
                        match profile
                            .trace
                            .time_to_accumulate(start, self.config.object_size.get() / profile.uplink.get())
                        {
                            None => true,
                            Some(min_ttb) => self.now < start + min_ttb,
                        }
                    }
                };
                self.peers[p as usize].loss = if unavoidable {
                    LossCategory::IncompleteUnavoidable
                } else {
                    LossCategory::IncompleteBackup
                };
                self.retire(p);
            }
            Phase::Maintaining => self.start_restore(p),
            Phase::Restoring | Phase::Done => {}
        }
    }

    fn start_restore(&mut self, p: u32) {
        self.record(LogKind::RestoreStart, p, None);
        let holders: Vec<u32> = self.peers[p as usize].holders.iter().copied().collect();
        {
            let s = &mut self.peers[p as usize];
            s.phase = Phase::Restoring;
            s.restoring = true;
            s.restore_start = Some(self.now);
            s.received = 0;
        }
        for h in holders {
            let hs = &self.peers[h as usize];
            if !hs.dead && hs.stored.contains(&p) {
                self.open_transfer(h, p, p, TransferKind::Restore);
            }
        }
        self.check_restore_feasible(p);
    }

    fn check_restore_feasible(&mut self, owner: u32) {
        let s = &self.peers[owner as usize];
        if s.phase != Phase::Restoring {
            return;
        }
        let pending = s
            .transfers
            .iter()
            .filter(|id| self.transfers[id].kind == TransferKind::Restore && self.transfers[id].dst == owner)
            .count() as u32;
        if s.received + pending < self.config.k {
            self.record(LogKind::RestoreFailed, owner, None);
            self.peers[owner as usize].loss = LossCategory::FailedRestore;
            self.retire(owner);
        }
    }

    fn on_timeout(&mut self, h: u32, epoch: u32) {
        let hs = &self.peers[h as usize];
        let lost = match self.options.timeout_mode {
            TimeoutMode::DeadOnly => hs.dead,
            TimeoutMode::AnyOffline => hs.dead || (!hs.online && hs.down_epoch == epoch),
        };
        if !lost {
            return;
        }
        let owners: Vec<u32> = hs.tracked_by.iter().copied().collect();
        self.record(LogKind::TimeoutExpired, h, None);
        for o in owners {
            let os = &self.peers[o as usize];
            if os.dead || os.retired || !matches!(os.phase, Phase::BackingUp | Phase::Maintaining) {
                continue;
            }
            self.peers[o as usize].holders.remove(&h);
            self.peers[o as usize].requirement_met = None;
            self.peers[h as usize].tracked_by.remove(&o);
            self.peers[h as usize].stored.remove(&o);
            self.stats.holders_lost += 1;
            self.record(LogKind::HolderLost, o, Some(h));
            self.attention.insert(o);
        }
        self.dirty = true;
    }

    fn complete_transfers(&mut self, forced: u64) {
        let eps = 1e-9 * self.fragment;
        let mut done: Vec<u64> = self
            .flow_ids
            .iter()
            .zip(&self.rates)
            .filter(|(id, &rate)| rate > 0.0 && (**id == forced || self.transfers[*id].remaining <= eps))
            .map(|(id, _)| *id)
            .collect();
        done.sort_unstable();
        for id in done {
            // An earlier completion in this batch may have cancelled it.
            if let Some(t) = self.transfers.get(&id) {
                let t = t.clone();
                self.remove_transfer(id);
                self.on_transfer_complete(t);
            }
        }
        self.dirty = true;
    }

    fn on_transfer_complete(&mut self, t: Transfer) {
        self.stats.events += 1;
        self.record(LogKind::TransferComplete, t.src, Some(t.dst));
        match t.kind {
            TransferKind::Backup | TransferKind::Maintenance => {
                if t.kind == TransferKind::Backup {
                    self.stats.backup_uploads += 1;
                } else {
                    self.stats.maintenance_uploads += 1;
                }
                let (o, h) = (t.src, t.dst);
                self.peers[h as usize].stored.insert(o);
                self.peers[h as usize].tracked_by.insert(o);
                let os = &mut self.peers[o as usize];
                os.holders.insert(h);
                os.requirement_met = None;
                match os.phase {
                    Phase::BackingUp => self.check_backup_complete(o),
                    Phase::Maintaining => {
                        if self.requirement_met(o) {
                            self.cancel_uploads(o);
                        }
                    }
                    _ => {}
                }
                self.attention.insert(o);
            }
            TransferKind::Restore => {
                self.stats.restore_downloads += 1;
                let o = t.dst;
                let s = &mut self.peers[o as usize];
                s.received += 1;
                if s.received >= self.config.k {
                    s.restore_complete = Some(self.now);
                    self.record(LogKind::RestoreComplete, o, None);
                    self.retire(o);
                }
            }
        }
    }

    fn sigma2_for(&self, o: u32) -> f64 {
        let min_ttr = self.config.object_size.get() / self.downlink[o as usize];
        sigma2(
            Seconds::new(min_ttr).expect("non-negative"),
            self.config.alpha,
            self.config.sigma2_floor,
        )
        .get()
    }

    /// Adaptive stop-condition check over the owner's tracked holders.
    fn adaptive_check(&mut self, o: u32) -> Option<CompletionCheck> {
        let holders = &self.peers[o as usize].holders;
        self.scratch_rates.clear();
        self.scratch_rates
            .extend(holders.iter().map(|&h| self.expected_rate[h as usize]));
        let n = self.scratch_rates.len() as u32;
        let (assessment, ettr) = assess_rates(self.config, &mut self.scratch_rates, self.downlink[o as usize])?;
        let s2 = self.sigma2_for(o);
        let stop = stop_condition(
            &assessment,
            Seconds::new(ettr).expect("non-negative"),
            self.config.sigma1,
            Seconds::new(s2).expect("non-negative"),
        );
        let capped = n >= self.n_cap && assessment.durability >= self.config.sigma1;
        if stop || capped {
            Some(CompletionCheck {
                n,
                durability: assessment.durability,
                ettr,
                sigma2: s2,
                stalled: !stop,
            })
        } else {
            None
        }
    }

    fn requirement_met(&mut self, o: u32) -> bool {
        if let Some(met) = self.peers[o as usize].requirement_met {
            return met;
        }
        let met = match self.policy {
            RedundancyPolicy::Baseline { n_fixed } => self.peers[o as usize].holders.len() as u32 >= n_fixed,
            RedundancyPolicy::Adaptive => self.adaptive_check(o).is_some(),
        };
        self.peers[o as usize].requirement_met = Some(met);
        met
    }

    fn check_backup_complete(&mut self, o: u32) {
        let check = match self.policy {
            RedundancyPolicy::Baseline { n_fixed } => {
                let n = self.peers[o as usize].holders.len() as u32;
                if n < n_fixed {
                    return;
                }
                None
            }
            RedundancyPolicy::Adaptive => match self.adaptive_check(o) {
                Some(c) => Some(c),
                None => return,
            },
        };
        if check.map_or(false, |c| c.stalled) {
            self.stats.stalled_completions += 1;
        }
        let s = &mut self.peers[o as usize];
        s.phase = Phase::Maintaining;
        s.backup_complete = Some(self.now);
        s.fragments_at_completion = Some(s.holders.len() as u32);
        s.completion_check = check;
        s.requirement_met = Some(true);
        self.record(LogKind::BackupComplete, o, Some(self.peers[o as usize].holders.len() as u32));
        self.cancel_uploads(o);
    }

    /// Launches uploads for an owner that is online and short of fragments.
    fn try_progress(&mut self, o: u32) {
        let s = &self.peers[o as usize];
        if s.dead || s.retired || !s.online {
            return;
        }
        let phase = s.phase;
        if !matches!(phase, Phase::BackingUp | Phase::Maintaining) {
            return;
        }
        if phase == Phase::Maintaining && self.requirement_met(o) {
            if !self.peers[o as usize].upload_targets.is_empty() {
                self.cancel_uploads(o);
            }
            return;
        }
        let kind = if phase == Phase::BackingUp {
            TransferKind::Backup
        } else {
            TransferKind::Maintenance
        };
        let mut active = self.peers[o as usize]
            .upload_targets
            .iter()
            .filter(|&&h| self.is_up(h))
            .count();
        while active < self.options.upload_slots {
            if let RedundancyPolicy::Baseline { n_fixed } = self.policy {
                let have = self.peers[o as usize].holders.len() + active;
                if have as u32 >= n_fixed {
                    break;
                }
            }
            let candidates = self.candidates(o);
            let Some(target) = select_storage_target(&mut self.placement_rng, PeerId(o), &candidates) else {
                self.stalled.insert(o);
                break;
            };
            self.open_transfer(o, target.0, o, kind);
            active += 1;
        }
    }

    fn candidates(&self, o: u32) -> Vec<PeerId> {
        let owner = &self.peers[o as usize];
        (0..self.peers.len() as u32)
            .filter(|&h| {
                let hs = &self.peers[h as usize];
                h != o
                    && hs.online
                    && !hs.dead
                    && !hs.retired
                    && !owner.holders.contains(&h)
                    && !owner.upload_targets.contains(&h)
                    && (hs.stored.len() as f64 + hs.reserved as f64 + 1.0) * self.fragment
                        <= self.profiles[h as usize].capacity.get()
            })
            .map(PeerId)
            .collect()
    }

    fn open_transfer(&mut self, src: u32, dst: u32, owner: u32, kind: TransferKind) {
        let id = self.next_transfer;
        self.next_transfer += 1;
        self.transfers.insert(
            id,
            Transfer {
                src,
                dst,
                owner,
                kind,
                remaining: self.fragment,
            },
        );
        if self.is_up(src) && self.is_up(dst) {
            self.active.insert(id);
        }
        self.peers[src as usize].transfers.insert(id);
        self.peers[dst as usize].transfers.insert(id);
        if kind != TransferKind::Restore {
            self.peers[dst as usize].reserved += 1;
            self.peers[owner as usize].upload_targets.insert(dst);
        }
        self.dirty = true;
    }

    fn remove_transfer(&mut self, id: u64) -> Option<Transfer> {
        let t = self.transfers.remove(&id)?;
        self.active.remove(&id);
        self.peers[t.src as usize].transfers.remove(&id);
        self.peers[t.dst as usize].transfers.remove(&id);
        if t.kind != TransferKind::Restore {
            let d = &mut self.peers[t.dst as usize];
            d.reserved = d.reserved.saturating_sub(1);
            self.peers[t.owner as usize].upload_targets.remove(&t.dst);
        }
        self.dirty = true;
        Some(t)
    }

    fn cancel(&mut self, id: u64) {
        if let Some(t) = self.remove_transfer(id) {
            self.stats.cancelled_transfers += 1;
            match t.kind {
                TransferKind::Backup | TransferKind::Maintenance => {
                    // The owner may need a replacement target.
                    self.attention.insert(t.owner);
                }
                TransferKind::Restore => {}
            }
        }
    }

    fn cancel_uploads(&mut self, o: u32) {
        let ids: Vec<u64> = self.peers[o as usize]
            .transfers
            .iter()
            .copied()
            .filter(|id| {
                let t = &self.transfers[id];
                t.src == o && t.kind != TransferKind::Restore
            })
            .collect();
        for id in ids {
            self.cancel(id);
        }
    }

    fn cancel_all_transfers_of(&mut self, p: u32) {
        let ids: Vec<u64> = self.peers[p as usize].transfers.iter().copied().collect();
        let mut restoring_owners = BTreeSet::new();
        for id in ids {
            if let Some(t) = self.transfers.get(&id) {
                if t.kind == TransferKind::Restore && t.dst != p {
                    restoring_owners.insert(t.dst);
                }
            }
            self.cancel(id);
        }
        for o in restoring_owners {
            self.check_restore_feasible(o);
        }
    }

    /// Takes a peer out of the simulation for good and releases the storage
    /// its fragments occupy elsewhere.
    fn retire(&mut self, p: u32) {
        if self.peers[p as usize].retired {
            return;
        }
        self.cancel_all_transfers_of(p);
        let holders = std::mem::take(&mut self.peers[p as usize].holders);
        {
            let s = &mut self.peers[p as usize];
            s.fragments_final = Some(holders.len() as u32);
            s.retired = true;
            s.restoring = false;
            s.phase = Phase::Done;
        }
        for h in holders {
            let hs = &mut self.peers[h as usize];
            hs.tracked_by.remove(&p);
            hs.stored.remove(&p);
        }
        let stalled = std::mem::take(&mut self.stalled);
        self.attention.extend(stalled);
        self.attention.remove(&p);
        self.dirty = true;
    }

    fn finish(self) -> SimulationOutcome {
        let object = self.config.object_size.get();
        let peers = self
            .profiles
            .iter()
            .zip(&self.peers)
            .map(|(profile, s)| {
                let min_ttb = s
                    .backup_start
                    .and_then(|start| profile.trace.time_to_accumulate(start, object / profile.uplink.get()));
                let ttb = match (s.backup_start, s.backup_complete) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                };
                let ttr = match (s.restore_start, s.restore_complete) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                };
                PeerOutcome {
                    peer: profile.id,
                    name: profile.name.clone(),
                    uplink: profile.uplink.get(),
                    downlink: profile.downlink.get(),
                    availability: profile.availability,
                    backup_start: s.backup_start,
                    backup_complete: s.backup_complete,
                    ttb,
                    min_ttb,
                    death_time: s.death_time,
                    restore_start: s.restore_start,
                    restore_complete: s.restore_complete,
                    ttr,
                    min_ttr: object / profile.downlink.get(),
                    fragments_at_completion: s.fragments_at_completion,
                    fragments_final: s.fragments_final.unwrap_or(s.holders.len() as u32),
                    completion_check: s.completion_check,
                    loss: s.loss,
                    unfinished_backup: !s.dead && s.backup_complete.is_none(),
                    unfinished_restore: s.phase == Phase::Restoring,
                }
            })
            .collect();
        SimulationOutcome {
            policy: self.policy,
            seed: self.seed,
            k: self.config.k,
            tau: self.config.tau.get(),
            w: self.config.w.get(),
            horizon: self.horizon,
            peers,
            stats: self.stats,
            events: self.log,
        }
    }
}

fn trace_entry(p: u32, cursor: u32, time: f64, kind: TraceKind) -> QueueEntry {
    QueueEntry {
        time,
        kind: match kind {
            TraceKind::Up => QueueKind::Up,
            TraceKind::Down => QueueKind::Down,
        },
        subject: p,
        tag: cursor,
    }
}
