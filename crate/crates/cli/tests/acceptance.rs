//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use p2pbackup::experiment::{build_population, execute_runs, RunSpec};
use p2pbackup::model::{Bytes, BytesPerSecond, PeerId, PeerProfile, PolicyConfig, Seconds, DAY, GIB, MIB, WEEK, YEAR};
use p2pbackup::policy::{baseline_fragment_count, durability, estimate_ttr, expected_upload_rate, HolderRate};
use p2pbackup::report::{categorize_losses, loss_tables, median};
use p2pbackup::sim::{self, LossCategory, RedundancyPolicy, SimOptions, SimulationOutcome, TimeoutMode};
use p2pbackup::trace::AvailabilityTrace;
use p2pbackup::traces::{generate_synthetic_traces, BandwidthDistribution, SyntheticTraceParams};

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: u32, title: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict {
        id,
        title,
        pass,
        detail,
    }
}

fn print(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("{tag} [{:>2}] {}: {}", v.id, v.title, v.detail);
}

// ---------------------------------------------------------------------------
// 1. Baseline sizing through the command line.

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_p2pbackup"))
        .args(["plan", "--k", "64", "--availability", "0.36", "--target", "0.99"])
        .output()
        .expect("run plan");
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let field = |name: &str| text.lines().find_map(|l| l.strip_prefix(name)).map(str::trim);
    let n: Option<u32> = field("n = ").and_then(|s| s.parse().ok());
    let r: Option<f64> = field("r = ").and_then(|s| s.parse().ok());
    let pass = out.status.success() && n == Some(228) && r == Some(3.5625) && elapsed < Duration::from_secs(1);
    verdict(
        1,
        "baseline reproduction",
        pass,
        format!(
            "n = {} r = {} in {} ms (expected n = 228, r = 3.5625, < 1000 ms)",
            n.map_or("?".into(), |n| n.to_string()),
            r.map_or("?".into(), |r| r.to_string()),
            elapsed.as_millis()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Durability against sampling, and the all-fragments closed form.

fn criterion_2() -> Verdict {
    const SAMPLES: u64 = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_z: f64 = 0.0;
    let mut mc_fail = 0;
    for _ in 0..50 {
        let n: u64 = rng.gen_range(1..=200);
        let k: u64 = rng.gen_range(1..=n);
        let p: f64 = rng.gen_range(0.001..0.999);
        let d = durability(n as u32, k as u32, p).expect("valid case");
        let bin = Binomial::new(n, p).unwrap();
        let hits = (0..SAMPLES).filter(|_| bin.sample(&mut rng) >= k).count() as f64;
        let estimate = hits / SAMPLES as f64;
        let se = (d * (1.0 - d) / SAMPLES as f64).sqrt();
        let diff = (estimate - d).abs();
        if diff > 3.0 * se {
            mc_fail += 1;
        }
        if se > 0.0 {
            worst_z = worst_z.max(diff / se);
        }
    }
    let mut worst_rel: f64 = 0.0;
    for _ in 0..200 {
        let k: u32 = rng.gen_range(1..=200);
        let p: f64 = rng.gen_range(0.001..1.0);
        let d = durability(k, k, p).expect("valid case");
        let exact = p.powi(k as i32);
        worst_rel = worst_rel.max(((d - exact) / exact).abs());
    }
    verdict(
        2,
        "durability oracle",
        mc_fail == 0 && worst_rel <= 1e-12,
        format!(
            "50 sampled cases, {mc_fail} outside 3 SE (worst {worst_z:.2} SE); p^k max rel err {worst_rel:.1e} (tol 1e-12)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Restore-time estimate on hand-built holder sets.

fn criterion_3() -> Verdict {
    let holders = |rates: &[f64]| -> Vec<HolderRate> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &r)| HolderRate {
                peer: PeerId(i as u32),
                expected_upload_rate: BytesPerSecond::new(r).unwrap(),
            })
            .collect()
    };
    let mut big = vec![2048.0; 64];
    big.extend([1_048_576.0; 10]);
    let derived: Vec<f64> = [(1000.0, 0.25), (400.0, 0.5), (100.0, 1.0)]
        .iter()
        .map(|&(u, a)| expected_upload_rate(BytesPerSecond::new(u).unwrap(), a).get())
        .collect();
    // (object size, owner downlink, k, holder rates, expected seconds)
    let cases: Vec<(f64, f64, u32, Vec<f64>, f64)> = vec![
        (1000.0, 1000.0, 2, vec![100.0, 50.0, 25.0, 10.0], 10.0),
        (1000.0, 10.0, 2, vec![100.0, 50.0, 25.0, 10.0], 100.0),
        (6400.0, 800.0, 4, vec![50.0, 400.0, 100.0, 200.0, 25.0], 32.0),
        (500.0, 50.0, 1, vec![5.0, 20.0, 10.0], 25.0),
        (3000.0, 1000.0, 3, vec![10.0, 10.0, 10.0, 10.0], 100.0),
        (1024.0, 64.0, 4, vec![8.0, 16.0, 32.0, 64.0], 32.0),
        (1200.0, 60.0, 2, vec![30.0, 60.0, 90.0], 20.0),
        (10.0 * GIB, 131_072.0, 64, big, 81_920.0),
        (5000.0, 1000.0, 2, derived, 12.5),
        (1.0, 4.0, 2, vec![0.5, 0.25, 0.125], 2.0),
    ];
    let mut mismatches = Vec::new();
    for (i, (o, d0, k, rates, expected)) in cases.iter().enumerate() {
        let got = estimate_ttr(
            Bytes::new(*o).unwrap(),
            BytesPerSecond::new(*d0).unwrap(),
            *k,
            &holders(rates),
        )
        .map(Seconds::get);
        if got.as_ref().ok() != Some(expected) {
            mismatches.push(format!("set {}: got {got:?}, expected {expected}", i + 1));
        }
    }
    verdict(
        3,
        "restore-time estimate",
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} holder sets exact", cases.len())
        } else {
            mismatches.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 4-8. The synthetic 300-peer grid.

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

struct Grid {
    outcomes: Vec<SimulationOutcome>,
    cell_time: Duration,
    availability_median: f64,
    bandwidth: (f64, f64),
}

fn run_grid() -> Grid {
    let params = SyntheticTraceParams::default();
    let traces = generate_synthetic_traces(&params).expect("synthetic traces");
    let dist = BandwidthDistribution::default_distribution();
    let base = PolicyConfig::default();
    let n_fixed = baseline_fragment_count(
        base.k,
        base.baseline_mean_availability,
        base.baseline_target_availability,
        100_000,
    )
    .expect("baseline count");
    let cell = |policy: RedundancyPolicy, tau: f64, w: f64| -> Vec<RunSpec> {
        SEEDS
            .map(|seed| RunSpec {
                policy,
                config: base
                    .clone()
                    .with_tau(Seconds::new(tau).unwrap())
                    .with_window(Seconds::new(w).unwrap()),
                seed,
            })
            .collect()
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let options = SimOptions::default();

    let start = Instant::now();
    let mut first = cell(RedundancyPolicy::Adaptive, YEAR, 2.0 * WEEK);
    first.extend(cell(RedundancyPolicy::Baseline { n_fixed }, YEAR, 2.0 * WEEK));
    let mut outcomes = execute_runs(&first, &traces, &dist, &options, jobs).expect("cell runs");
    let cell_time = start.elapsed();

    let mut rest = Vec::new();
    for tau in [90.0 * DAY, YEAR, 4.0 * YEAR] {
        for w in [0.0, WEEK, 2.0 * WEEK, 4.0 * WEEK] {
            if tau == YEAR && w == 2.0 * WEEK {
                continue;
            }
            rest.extend(cell(RedundancyPolicy::Adaptive, tau, w));
        }
    }
    outcomes.extend(execute_runs(&rest, &traces, &dist, &options, jobs).expect("grid runs"));

    let availability: Vec<f64> = traces.iter().map(|t| t.trace.availability()).collect();
    let peers = build_population(&traces, &dist, base.capacity, 1).expect("population");
    let uplinks: Vec<f64> = peers.iter().map(|p| p.uplink.get()).collect();
    Grid {
        outcomes,
        cell_time,
        availability_median: median(&availability).unwrap_or(f64::NAN),
        bandwidth: (
            median(&uplinks).unwrap_or(f64::NAN) / 1024.0,
            uplinks.iter().sum::<f64>() / uplinks.len() as f64 / 1024.0,
        ),
    }
}

impl Grid {
    fn cell(&self, adaptive: bool, tau: f64, w: f64) -> Vec<&SimulationOutcome> {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.policy, RedundancyPolicy::Adaptive) == adaptive && o.tau == tau && o.w == w)
            .collect()
    }

    /// Mean `n / k` at completion over every completed backup of the cell.
    fn mean_r(&self, adaptive: bool, tau: f64, w: f64) -> Option<f64> {
        let rs: Vec<f64> = self
            .cell(adaptive, tau, w)
            .iter()
            .flat_map(|o| {
                o.peers
                    .iter()
                    .filter_map(move |p| p.fragments_at_completion.map(|n| n as f64 / o.k as f64))
            })
            .collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    }

    fn median_ratio(&self, adaptive: bool, tau: f64, w: f64, ttr: bool) -> Option<f64> {
        let xs: Vec<f64> = self
            .cell(adaptive, tau, w)
            .iter()
            .flat_map(|o| o.peers.iter())
            .filter_map(|p| if ttr { p.ttr_ratio() } else { p.ttb_ratio() })
            .collect();
        median(&xs)
    }

    fn count(&self, tau: f64, w: f64, pred: impl Fn(LossCategory) -> bool) -> usize {
        self.cell(true, tau, w)
            .iter()
            .flat_map(|o| o.peers.iter())
            .filter(|p| pred(p.loss))
            .count()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("none".into(), |v| format!("{v:.3}"))
}

fn criterion_4(g: &Grid) -> Verdict {
    let a = g.mean_r(true, YEAR, 2.0 * WEEK);
    let b = g.mean_r(false, YEAR, 2.0 * WEEK);
    let ratio = a.zip(b).map(|(a, b)| a / b);
    let in_range = ratio.map_or(false, |r| (0.25..=0.65).contains(&r));
    let fast = g.cell_time < Duration::from_secs(300);
    verdict(
        4,
        "redundancy reduction",
        in_range && fast,
        format!(
            "adaptive r {} / baseline r {} = {} (want [0.25, 0.65]); cell took {:.0} s (budget 300 s); \
             population: 300 peers, availability median {:.3}, uplink median {:.0} KiB/s, mean {:.0} KiB/s",
            fmt_opt(a),
            fmt_opt(b),
            fmt_opt(ratio),
            g.cell_time.as_secs_f64(),
            g.availability_median,
            g.bandwidth.0,
            g.bandwidth.1
        ),
    )
}

fn criterion_5(g: &Grid) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, tau) in [("90d", 90.0 * DAY), ("1y", YEAR), ("4y", 4.0 * YEAR)] {
        let rs: Vec<Option<f64>> = [0.0, 1.0, 2.0, 4.0].iter().map(|w| g.mean_r(true, tau, w * WEEK)).collect();
        let ok = rs.iter().all(Option::is_some) && rs.windows(2).all(|p| p[0].unwrap() <= p[1].unwrap());
        pass &= ok;
        let shown: Vec<String> = rs.iter().map(|r| fmt_opt(*r)).collect();
        parts.push(format!("tau {label}: {}", shown.join(" <= ")));
    }
    verdict(5, "monotone redundancy in w", pass, parts.join("; "))
}

fn criterion_6(g: &Grid) -> Verdict {
    let a = g.median_ratio(true, YEAR, 2.0 * WEEK, false);
    let b = g.median_ratio(false, YEAR, 2.0 * WEEK, false);
    let pass = a.zip(b).map_or(false, |(a, b)| a <= 0.5 * b);
    verdict(
        6,
        "backup time improvement",
        pass,
        format!(
            "median TTB/minTTB adaptive {} vs baseline {} (want adaptive <= 0.5 x baseline)",
            fmt_opt(a),
            fmt_opt(b)
        ),
    )
}

fn criterion_7(g: &Grid) -> Verdict {
    let a = g.median_ratio(true, YEAR, 2.0 * WEEK, true);
    let b = g.median_ratio(false, YEAR, 2.0 * WEEK, true);
    let w0 = g.median_ratio(true, YEAR, 0.0, true);
    let w4 = g.median_ratio(true, YEAR, 4.0 * WEEK, true);
    let first = a.zip(b).map_or(false, |(a, b)| a >= b);
    let second = w0.zip(w4).map_or(false, |(w0, w4)| w4 <= w0);
    verdict(
        7,
        "restore time direction",
        first && second,
        format!(
            "median TTR/minTTR adaptive {} >= baseline {}: {first}; adaptive w=4w {} <= w=0 {}: {second}",
            fmt_opt(a),
            fmt_opt(b),
            fmt_opt(w4),
            fmt_opt(w0)
        ),
    )
}

fn criterion_8(g: &Grid) -> Verdict {
    let w = 2.0 * WEEK;
    let failed_4y = g.count(4.0 * YEAR, w, |c| c == LossCategory::FailedRestore);
    let incomplete = g.count(90.0 * DAY, w, LossCategory::is_incomplete_backup);
    let unavoidable = g.count(90.0 * DAY, w, |c| c == LossCategory::IncompleteUnavoidable);
    let failed_90d = g.count(90.0 * DAY, w, |c| c == LossCategory::FailedRestore);
    let share = if incomplete > 0 {
        unavoidable as f64 / incomplete as f64
    } else {
        f64::NAN
    };
    let pass = failed_4y == 0 && incomplete >= failed_90d && share >= 0.5;
    verdict(
        8,
        "data loss structure",
        pass,
        format!(
            "w = 2w, 10 seeds: tau 4y failed restores {failed_4y} (want 0); tau 90d incomplete {incomplete} >= failed \
             {failed_90d}, unavoidable/incomplete {unavoidable}/{incomplete} = {share:.3} (want >= 0.5)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Invariants: link audit, determinism, lower bounds, loss accounting.

fn random_config_runs() -> Vec<(SimulationOutcome, SimulationOutcome)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dist = BandwidthDistribution::default_distribution();
    (0..5)
        .map(|i| {
            let k: u32 = [8, 16, 32][rng.gen_range(0..3)];
            let fragment = [1.0, 2.0][rng.gen_range(0..2)] * MIB;
            let tau = if rng.gen_bool(0.2) {
                f64::INFINITY
            } else {
                rng.gen_range(5.0..60.0) * DAY
            };
            let w = [0.0, DAY, 3.0 * DAY, WEEK][rng.gen_range(0..4)];
            let config = PolicyConfig {
                object_size: Bytes::new(k as f64 * fragment).unwrap(),
                fragment_size: Bytes::new(fragment).unwrap(),
                k,
                capacity: Bytes::new(4.0 * GIB).unwrap(),
                ..PolicyConfig::default()
            }
            .with_tau(Seconds::new(tau).unwrap())
            .with_window(Seconds::new(w).unwrap());
            let params = SyntheticTraceParams {
                peer_count: rng.gen_range(40..=80),
                horizon: rng.gen_range(10.0..25.0f64).round() * DAY,
                mean_session: rng.gen_range(2.0..12.0f64).round() * 3600.0,
                seed: 100 + i,
                ..SyntheticTraceParams::default()
            };
            let traces = generate_synthetic_traces(&params).expect("traces");
            let seed = rng.gen_range(0..1000);
            let peers = build_population(&traces, &dist, config.capacity, seed).expect("population");
            let policy = if rng.gen_bool(0.5) {
                RedundancyPolicy::Adaptive
            } else {
                RedundancyPolicy::Baseline {
                    n_fixed: (k * rng.gen_range(2..4)).min(peers.len() as u32 - 1).max(k),
                }
            };
            let options = SimOptions {
                timeout_mode: if rng.gen_bool(0.5) {
                    TimeoutMode::DeadOnly
                } else {
                    TimeoutMode::AnyOffline
                },
                record_events: true,
                audit: true,
                ..SimOptions::default()
            };
            let a = sim::run(&config, policy, &peers, seed, &options).expect("run");
            let b = sim::run(&config, policy, &peers, seed, &options).expect("run");
            (a, b)
        })
        .collect()
}

fn criterion_9(g: &Grid) -> Verdict {
    let pairs = random_config_runs();
    let audit_violations: u64 = pairs.iter().map(|(a, _)| a.stats.audit_violations).sum();
    let reallocations: u64 = pairs.iter().map(|(a, _)| a.stats.reallocations).sum();
    let worst_overshoot = pairs.iter().map(|(a, _)| a.stats.max_overshoot).fold(0.0, f64::max);
    let deterministic = pairs.iter().filter(|(a, b)| a.events == b.events && a == b).count();
    let events: usize = pairs.iter().map(|(a, _)| a.events.len()).sum();

    let all: Vec<&SimulationOutcome> = g.outcomes.iter().chain(pairs.iter().map(|(a, _)| a)).collect();
    let slack = |bound: f64| 1e-9 * (1.0 + bound);
    let mut completions = 0usize;
    let mut below = 0usize;
    for p in all.iter().flat_map(|o| o.peers.iter()) {
        if let (Some(t), Some(m)) = (p.ttb, p.min_ttb) {
            completions += 1;
            below += (t < m - slack(m)) as usize;
        }
        if let Some(t) = p.ttr {
            completions += 1;
            below += (t < p.min_ttr - slack(p.min_ttr)) as usize;
        }
    }

    let mut rows = 0usize;
    let mut broken = 0usize;
    let owned: Vec<SimulationOutcome> = g.outcomes.clone();
    for table in loss_tables(&owned).expect("loss tables") {
        for row in &table.rows {
            rows += 1;
            broken += (!row.accounting_holds()) as usize;
        }
    }
    for (a, _) in &pairs {
        let row = categorize_losses(std::slice::from_ref(a), 1).expect("loss row");
        rows += 1;
        broken += (!row.accounting_holds()) as usize;
    }

    let pass = audit_violations == 0 && deterministic == pairs.len() && below == 0 && broken == 0;
    verdict(
        9,
        "simulator invariants",
        pass,
        format!(
            "audit: {audit_violations} violations over {reallocations} reallocations (max overshoot {worst_overshoot:.1e}); \
             determinism: {deterministic}/{} configs identical ({events} events); \
             lower bounds: {below} of {completions} completions below minimum; accounting: {broken} of {rows} rows broken",
            pairs.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Backup lower bound against a second-by-second walk of the trace.

/// Walks whole seconds; `toggles` are integer times where the state flips.
fn stepped_min_ttb(initially_on: bool, toggles: &[u64], horizon: u64, rate: f64, size: f64, start: f64) -> Option<f64> {
    let mut on = initially_on;
    let mut next = 0;
    let mut done = 0.0;
    for t in 0..horizon {
        while next < toggles.len() && toggles[next] <= t {
            on = !on;
            next += 1;
        }
        let lo = (t as f64).max(start);
        let hi = (t + 1) as f64;
        if !on || hi <= lo {
            continue;
        }
        let chunk = rate * (hi - lo);
        if done + chunk >= size {
            return Some(lo + (size - done) / rate - start);
        }
        done += chunk;
    }
    None
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let mut disagreements = 0;
    let mut never = 0;
    for case in 0..20 {
        let horizon: u64 = rng.gen_range(200..2000);
        let initially_on = rng.gen_bool(0.5);
        let mut toggles: Vec<u64> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(1..horizon)).collect();
        toggles.sort_unstable();
        toggles.dedup();
        let mut intervals = Vec::new();
        let mut on = initially_on;
        let mut from = 0u64;
        for &t in toggles.iter().chain(std::iter::once(&horizon)) {
            if on && t > from {
                intervals.push((from as f64, t as f64));
            }
            on = !on;
            from = t;
        }
        if intervals.is_empty() {
            intervals.push((0.0, 1.0));
            toggles = vec![1];
            if !initially_on {
                toggles.insert(0, 0);
            }
        }
        let trace = AvailabilityTrace::from_intervals(&intervals, horizon as f64).expect("trace");
        let rate: f64 = rng.gen_range(0.5..50.0);
        let online: f64 = intervals.iter().map(|(a, b)| b - a).sum();
        let size = rate * online * rng.gen_range(0.05..1.2);
        let start = if case % 4 == 0 {
            toggles[0] as f64
        } else {
            rng.gen_range(0.0..horizon as f64 * 0.7)
        };
        let peer = PeerProfile::new(
            PeerId(0),
            "p",
            BytesPerSecond::new(rate).unwrap(),
            BytesPerSecond::new(4.0 * rate).unwrap(),
            trace,
            Bytes::new(GIB).unwrap(),
        )
        .expect("peer");
        let got = sim::min_ttb(&peer, Seconds::new(start).unwrap(), Bytes::new(size).unwrap()).map(Seconds::get);
        let want = stepped_min_ttb(initially_on, &toggles, horizon, rate, size, start);
        match (got, want) {
            (Some(g), Some(w)) => {
                worst = worst.max((g - w).abs());
                disagreements += ((g - w).abs() > 1e-9) as usize;
            }
            (None, None) => never += 1,
            _ => disagreements += 1,
        }
    }
    verdict(
        10,
        "backup lower bound walk",
        disagreements == 0,
        format!("20 traces ({never} never finish), {disagreements} disagreements, max diff {worst:.1e} s (tol 1e-9 s)"),
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut verdicts = Vec::new();
    for f in [criterion_1, criterion_2, criterion_3] {
        let v = f();
        print(&v);
        verdicts.push(v);
    }
    let grid = run_grid();
    for f in [criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9] {
        let v = f(&grid);
        print(&v);
        verdicts.push(v);
    }
    let v = criterion_10();
    print(&v);
    verdicts.push(v);

    let failed: Vec<String> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id.to_string()).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
