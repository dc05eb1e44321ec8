//! Trace ingestion, filtering, bandwidth sampling and synthetic populations.
//!
//! `traces.csv` has the header `peer_id,time_s,event` with integer seconds and
//! `event` in `{up, down}`. `bandwidth.csv` holds one uplink value in bytes per
//! second per line.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BytesPerSecond, DAY};
use crate::trace::{AvailabilityTrace, EventKind, TraceError, TraceEvent};

/// Minimum online fraction kept by default: four hours per day.
pub const DEFAULT_MIN_AVAILABILITY: f64 = 4.0 / 24.0;

/// Uplink samples shipped with the crate: a log-normal calibrated to a
/// 77 KiB/s median and a 428 KiB/s mean.
pub const DEFAULT_BANDWIDTH_CSV: &str = include_str!("../data/bandwidth.csv");

#[derive(Debug, Error)]
pub enum TracesError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace csv row {row}: expected header `peer_id,time_s,event`")]
    BadHeader { row: usize },
    #[error("trace csv row {row} (peer {peer}): unknown event kind `{kind}`")]
    UnknownEvent { row: usize, peer: String, kind: String },
    #[error("trace csv row {row} (peer {peer}): bad time `{value}`")]
    BadTime { row: usize, peer: String, value: String },
    #[error("trace csv row {row} (peer {peer}): {source}")]
    Invalid {
        row: usize,
        peer: String,
        #[source]
        source: TraceError,
    },
    #[error("bandwidth line {line}: `{value}` is not a positive number")]
    BadBandwidth { line: usize, value: String },
    #[error("bandwidth distribution is empty")]
    EmptyDistribution,
    #[error("invalid synthetic parameter `{name}`: {reason}")]
    BadParam { name: &'static str, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A parsed trace together with the peer id it was read under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTrace {
    pub peer_id: String,
    pub trace: AvailabilityTrace,
}

/// Reads `peer_id,time_s,event` rows. Rows later than `horizon` are dropped.
/// Peers are returned in order of first appearance.
pub fn parse_traces<R: Read>(input: R, horizon: f64) -> Result<Vec<NamedTrace>, TracesError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.len() != 3 || &headers[0] != "peer_id" || &headers[1] != "time_s" || &headers[2] != "event" {
        return Err(TracesError::BadHeader { row: 1 });
    }
    let mut order: Vec<String> = Vec::new();
    // peer -> (events, csv row of each event)
    let mut rows: BTreeMap<String, (Vec<TraceEvent>, Vec<usize>)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let peer = record.get(0).unwrap_or_default().to_string();
        let raw_time = record.get(1).unwrap_or_default();
        let time: f64 = raw_time
            .parse::<u64>()
            .map(|t| t as f64)
            .map_err(|_| TracesError::BadTime {
                row,
                peer: peer.clone(),
                value: raw_time.to_string(),
            })?;
        let kind = match record.get(2).unwrap_or_default() {
            "up" => EventKind::Up,
            "down" => EventKind::Down,
            other => {
                return Err(TracesError::UnknownEvent {
                    row,
                    peer,
                    kind: other.to_string(),
                })
            }
        };
        let entry = rows.entry(peer.clone()).or_insert_with(|| {
            order.push(peer.clone());
            (Vec::new(), Vec::new())
        });
        if time > horizon {
            continue;
        }
        entry.0.push(TraceEvent { time, kind });
        entry.1.push(row);
    }
    order
        .into_iter()
        .map(|peer| {
            let (events, row_of) = rows.remove(&peer).expect("peer recorded");
            match AvailabilityTrace::new(events, horizon) {
                Ok(trace) => Ok(NamedTrace { peer_id: peer, trace }),
                Err(source) => {
                    let row = match &source {
                        TraceError::BadTime { index, .. }
                        | TraceError::NotIncreasing { index, .. }
                        | TraceError::NotAlternating { index, .. }
                        | TraceError::BeyondHorizon { index, .. } => row_of[*index],
                        TraceError::BadHorizon(_) => 0,
                    };
                    Err(TracesError::Invalid { row, peer, source })
                }
            }
        })
        .collect()
}

/// Writes traces in the `traces.csv` format. Event times are rounded to whole
/// seconds.
pub fn write_traces<W: Write>(out: W, traces: &[NamedTrace]) -> Result<(), TracesError> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["peer_id", "time_s", "event"])?;
    for t in traces {
        for ev in t.trace.events() {
            writer.write_record([
                t.peer_id.as_str(),
                &format!("{}", ev.time.round() as u64),
                ev.kind.as_str(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Keeps the traces whose availability reaches `min_fraction`, in order.
pub fn filter_min_availability(traces: Vec<NamedTrace>, min_fraction: f64) -> Vec<NamedTrace> {
    traces
        .into_iter()
        .filter(|t| t.trace.availability() >= min_fraction)
        .collect()
}

/// Empirical uplink distribution, sampled with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthDistribution {
    samples: Vec<f64>,
}

impl BandwidthDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self, TracesError> {
        if samples.is_empty() {
            return Err(TracesError::EmptyDistribution);
        }
        if let Some((line, v)) = samples.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(TracesError::BadBandwidth {
                line: line + 1,
                value: v.to_string(),
            });
        }
        Ok(BandwidthDistribution { samples })
    }

    /// One value per non-empty line; lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, TracesError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => samples.push(v),
                _ => {
                    return Err(TracesError::BadBandwidth {
                        line: i + 1,
                        value: line.to_string(),
                    })
                }
            }
        }
        Self::new(samples)
    }

    pub fn default_distribution() -> Self {
        Self::parse(DEFAULT_BANDWIDTH_CSV).expect("bundled bandwidth file is valid")
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

/// Draws an uplink uniformly from the samples; the downlink is four times it.
pub fn sample_peer_bandwidth<R: Rng + ?Sized>(
    dist: &BandwidthDistribution,
    rng: &mut R,
) -> (BytesPerSecond, BytesPerSecond) {
    let up = dist.samples[rng.gen_range(0..dist.samples.len())];
    (
        BytesPerSecond::new(up).expect("validated sample"),
        BytesPerSecond::new(4.0 * up).expect("validated sample"),
    )
}

/// How per-peer availability targets are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AvailabilityTargets {
    /// Explicit targets, cycled over the peers.
    List { targets: Vec<f64> },
    /// Beta-distributed targets plus a fraction of always-on peers.
    Beta {
        a: f64,
        b: f64,
        always_on_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTraceParams {
    pub peer_count: usize,
    pub horizon: f64,
    /// Mean length of one online + offline cycle.
    pub mean_session: f64,
    pub targets: AvailabilityTargets,
    /// Peers whose measured availability falls below this are redrawn, which
    /// mirrors filtering a real trace.
    pub min_availability: f64,
    pub seed: u64,
}

impl Default for SyntheticTraceParams {
    fn default() -> Self {
        SyntheticTraceParams {
            peer_count: 300,
            horizon: 90.0 * DAY,
            mean_session: DAY,
            targets: AvailabilityTargets::Beta {
                a: 0.7,
                b: 3.5,
                always_on_fraction: 0.03,
            },
            min_availability: DEFAULT_MIN_AVAILABILITY,
            seed: 1,
        }
    }
}

const MAX_REDRAWS: usize = 10_000;

impl SyntheticTraceParams {
    pub fn validate(&self) -> Result<(), TracesError> {
        let bad = |name, reason: &str| {
            Err(TracesError::BadParam {
                name,
                reason: reason.to_string(),
            })
        };
        if self.peer_count == 0 {
            return bad("peer_count", "must be >= 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon", "must be > 0");
        }
        if !(self.mean_session > 0.0 && self.mean_session.is_finite()) {
            return bad("mean_session", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.min_availability) {
            return bad("min_availability", "must lie in [0, 1)");
        }
        match &self.targets {
            AvailabilityTargets::List { targets } => {
                if targets.is_empty() {
                    return bad("targets", "must not be empty");
                }
                if targets.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                    return bad("targets", "every target must lie in (0, 1]");
                }
                if targets.iter().any(|t| *t < self.min_availability) {
                    return bad("targets", "targets below min_availability can never be kept");
                }
            }
            AvailabilityTargets::Beta {
                a,
                b,
                always_on_fraction,
            } => {
                if !(*a > 0.0 && *b > 0.0) {
                    return bad("beta", "shape parameters must be > 0");
                }
                if !(0.0..=1.0).contains(always_on_fraction) {
                    return bad("always_on_fraction", "must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }
}

/// Alternating exponential on/off sessions with mean on time
/// `target * mean_session` and mean off time `(1 - target) * mean_session`.
/// The initial state is drawn from the stationary distribution.
fn on_off_trace<R: Rng + ?Sized>(target: f64, mean_session: f64, horizon: f64, rng: &mut R) -> AvailabilityTrace {
    if target >= 1.0 {
        return AvailabilityTrace::always_on(horizon).expect("valid horizon");
    }
    let on = Exp::new(1.0 / (target * mean_session)).expect("positive rate");
    let off = Exp::new(1.0 / ((1.0 - target) * mean_session)).expect("positive rate");
    let mut online = rng.gen_bool(target);
    let mut events = Vec::new();
    let mut t = 0.0f64;
    // Integer seconds, so that the trace round-trips through `traces.csv`.
    if online {
        events.push(TraceEvent {
            time: 0.0,
            kind: EventKind::Up,
        });
    }
    loop {
        let len = if online { on.sample(rng) } else { off.sample(rng) };
        t = (t + len).round().max(t + 1.0);
        if t >= horizon {
            break;
        }
        online = !online;
        events.push(TraceEvent {
            time: t,
            kind: if online { EventKind::Up } else { EventKind::Down },
        });
    }
    AvailabilityTrace::new(events, horizon).expect("generated events are ordered")
}

/// Deterministic synthetic population. Peer ids are `peer0000`, `peer0001`, ...
pub fn generate_synthetic_traces(params: &SyntheticTraceParams) -> Result<Vec<NamedTrace>, TracesError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let beta = match &params.targets {
        AvailabilityTargets::Beta { a, b, .. } => Some(Beta::new(*a, *b).map_err(|e| TracesError::BadParam {
            name: "beta",
            reason: e.to_string(),
        })?),
        AvailabilityTargets::List { .. } => None,
    };
    let mut out = Vec::with_capacity(params.peer_count);
    for i in 0..params.peer_count {
        let mut kept = None;
        for _ in 0..MAX_REDRAWS {
            let target = match &params.targets {
                AvailabilityTargets::List { targets } => targets[i % targets.len()],
                AvailabilityTargets::Beta {
                    always_on_fraction, ..
                } => {
                    if rng.gen_bool(*always_on_fraction) {
                        1.0
                    } else {
                        let t: f64 = beta.as_ref().expect("beta targets").sample(&mut rng);
                        t.clamp(1e-6, 1.0)
                    }
                }
            };
            let trace = on_off_trace(target, params.mean_session, params.horizon, &mut rng);
            let a = trace.availability();
            if a > 0.0 && a >= params.min_availability {
                kept = Some(trace);
                break;
            }
        }
        let trace = kept.ok_or_else(|| TracesError::BadParam {
            name: "min_availability",
            reason: format!("could not draw a trace above {} for peer {i}", params.min_availability),
        })?;
        out.push(NamedTrace {
            peer_id: format!("peer{i:04}"),
            trace,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_half_online() {
        let csv = "peer_id,time_s,event\np1,0,up\np1,10,down\n";
        let traces = parse_traces(csv.as_bytes(), 20.0).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].peer_id, "p1");
        assert_eq!(traces[0].trace.availability(), 0.5);
    }

    #[test]
    fn parse_infers_initial_state() {
        let csv = "peer_id,time_s,event\np1,5,down\n";
        let traces = parse_traces(csv.as_bytes(), 10.0).unwrap();
        assert_eq!(traces[0].trace.online_intervals(), vec![(0.0, 5.0)]);
        assert_eq!(traces[0].trace.availability(), 0.5);
    }

    #[test]
    fn parse_errors_name_peer_and_row() {
        let csv = "peer_id,time_s,event\np1,10,up\np2,1,up\np1,5,down\n";
        let err = parse_traces(csv.as_bytes(), 100.0).unwrap_err();
        match err {
            TracesError::Invalid { row, peer, .. } => {
                assert_eq!(row, 4);
                assert_eq!(peer, "p1");
            }
            other => panic!("unexpected {other}"),
        }
        let csv = "peer_id,time_s,event\np1,10,sideways\n";
        assert!(matches!(
            parse_traces(csv.as_bytes(), 100.0),
            Err(TracesError::UnknownEvent { row: 2, .. })
        ));
        let csv = "peer_id,time_s,event\np1,1,up\np1,2,up\n";
        let msg = parse_traces(csv.as_bytes(), 100.0).unwrap_err().to_string();
        assert!(msg.contains("p1") && msg.contains("row 3"), "{msg}");
        assert!(matches!(
            parse_traces("a,b\n".as_bytes(), 1.0),
            Err(TracesError::BadHeader { .. })
        ));
    }

    #[test]
    fn parse_truncates_at_horizon() {
        let csv = "peer_id,time_s,event\np1,0,up\np1,50,down\np1,150,up\n";
        let traces = parse_traces(csv.as_bytes(), 100.0).unwrap();
        assert_eq!(traces[0].trace.events().len(), 2);
        assert_eq!(traces[0].trace.availability(), 0.5);
    }

    #[test]
    fn filter_keeps_threshold_and_order() {
        let mk = |name: &str, up: f64| NamedTrace {
            peer_id: name.to_string(),
            trace: AvailabilityTrace::from_intervals(&[(0.0, up)], 100.0).unwrap(),
        };
        let kept = filter_min_availability(vec![mk("a", 50.0), mk("b", 10.0), mk("c", 20.0)], DEFAULT_MIN_AVAILABILITY);
        let names: Vec<_> = kept.iter().map(|t| t.peer_id.as_str()).collect();
        assert_eq!(names, vec!["a", "c"]);
    }

    #[test]
    fn bandwidth_singleton_and_ratio() {
        let dist = BandwidthDistribution::new(vec![100.0 * 1024.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (up, down) = sample_peer_bandwidth(&dist, &mut rng);
            assert_eq!(up.get(), 100.0 * 1024.0);
            assert_eq!(down.get(), 4.0 * up.get());
        }
        assert!(matches!(BandwidthDistribution::new(vec![]), Err(TracesError::EmptyDistribution)));
        assert!(BandwidthDistribution::parse("12\n-3\n").is_err());
    }

    #[test]
    fn bundled_bandwidth_matches_published_statistics() {
        let dist = BandwidthDistribution::default_distribution();
        let median = dist.median() / 1024.0;
        let mean = dist.mean() / 1024.0;
        assert!((median - 77.0).abs() / 77.0 < 0.01, "median {median}");
        assert!((mean - 428.0).abs() / 428.0 < 0.05, "mean {mean}");
    }

    #[test]
    fn sampled_median_tracks_distribution_median() {
        let dist = BandwidthDistribution::default_distribution();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draws: Vec<f64> = (0..10_000).map(|_| sample_peer_bandwidth(&dist, &mut rng).0.get()).collect();
        draws.sort_by(f64::total_cmp);
        let median = 0.5 * (draws[4999] + draws[5000]);
        let want = 77.0 * 1024.0;
        assert!((median - want).abs() / want < 0.05, "median {median}");
    }

    #[test]
    fn always_on_target_gives_single_up() {
        let params = SyntheticTraceParams {
            peer_count: 3,
            targets: AvailabilityTargets::List { targets: vec![1.0] },
            ..SyntheticTraceParams::default()
        };
        for t in generate_synthetic_traces(&params).unwrap() {
            assert_eq!(t.trace.events(), &[TraceEvent { time: 0.0, kind: EventKind::Up }]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let params = SyntheticTraceParams {
            peer_count: 20,
            ..SyntheticTraceParams::default()
        };
        assert_eq!(
            generate_synthetic_traces(&params).unwrap(),
            generate_synthetic_traces(&params).unwrap()
        );
        let other = SyntheticTraceParams { seed: 2, ..params.clone() };
        assert_ne!(
            generate_synthetic_traces(&params).unwrap(),
            generate_synthetic_traces(&other).unwrap()
        );
    }

    #[test]
    fn measured_availability_tracks_target() {
        let targets = vec![0.2, 0.3, 0.5, 0.7, 0.9];
        let params = SyntheticTraceParams {
            peer_count: 50,
            horizon: 100.0 * DAY,
            mean_session: DAY,
            targets: AvailabilityTargets::List { targets: targets.clone() },
            min_availability: 0.0,
            seed: 5,
        };
        let traces = generate_synthetic_traces(&params).unwrap();
        for (j, &target) in targets.iter().enumerate() {
            let group: Vec<f64> = traces
                .iter()
                .skip(j)
                .step_by(targets.len())
                .map(|t| t.trace.availability())
                .collect();
            let mean = group.iter().sum::<f64>() / group.len() as f64;
            assert!((mean - target).abs() <= 0.05, "target {target}: mean {mean}");
        }
    }

    #[test]
    fn default_population_median_near_point_three() {
        let traces = generate_synthetic_traces(&SyntheticTraceParams::default()).unwrap();
        assert_eq!(traces.len(), 300);
        let mut a: Vec<f64> = traces.iter().map(|t| t.trace.availability()).collect();
        a.sort_by(f64::total_cmp);
        let median = 0.5 * (a[149] + a[150]);
        assert!((median - 0.3).abs() <= 0.05, "median {median}");
        assert!(a.iter().all(|&x| x >= DEFAULT_MIN_AVAILABILITY));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_through_csv(seed in 0u64..1000, count in 1usize..6) {
            let params = SyntheticTraceParams {
                peer_count: count,
                horizon: 20.0 * DAY,
                seed,
                ..SyntheticTraceParams::default()
            };
            let traces = generate_synthetic_traces(&params).unwrap();
            let mut buf = Vec::new();
            write_traces(&mut buf, &traces).unwrap();
            let parsed = parse_traces(buf.as_slice(), params.horizon).unwrap();
            prop_assert_eq!(&parsed, &traces);
            let mut again = Vec::new();
            write_traces(&mut again, &parsed).unwrap();
            prop_assert_eq!(buf, again);
        }

        #[test]
        fn filter_is_idempotent(seed in 0u64..1000, threshold in 0.0f64..0.6) {
            let params = SyntheticTraceParams {
                peer_count: 10,
                horizon: 20.0 * DAY,
                min_availability: 0.0,
                seed,
                ..SyntheticTraceParams::default()
            };
            let traces = generate_synthetic_traces(&params).unwrap();
            let once = filter_min_availability(traces, threshold);
            let twice = filter_min_availability(once.clone(), threshold);
            prop_assert_eq!(once, twice);
        }
    }
}
