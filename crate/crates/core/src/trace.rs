//! Per-peer availability traces.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Up,
    Down,
}

impl EventKind {
    pub fn flip(self) -> EventKind {
        match self {
            EventKind::Up => EventKind::Down,
            EventKind::Down => EventKind::Up,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Up => "up",
            EventKind::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("event {index}: time {time} is not a finite non-negative number")]
    BadTime { index: usize, time: f64 },
    #[error("event {index}: time {time} does not follow {previous}")]
    NotIncreasing { index: usize, time: f64, previous: f64 },
    #[error("event {index}: {kind:?} repeats the previous event kind")]
    NotAlternating { index: usize, kind: EventKind },
    #[error("event {index}: time {time} lies beyond the horizon {horizon}")]
    BeyondHorizon { index: usize, time: f64, horizon: f64 },
    #[error("horizon must be > 0 and finite, got {0}")]
    BadHorizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
}

/// Ordered up/down transitions of one peer over `[0, horizon)`.
///
/// Before the first event the peer is in the opposite state of that event.
/// A trace without events describes a peer that is never online.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityTrace {
    events: Vec<TraceEvent>,
    horizon: f64,
}

impl AvailabilityTrace {
    pub fn new(events: Vec<TraceEvent>, horizon: f64) -> Result<Self, TraceError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(TraceError::BadHorizon(horizon));
        }
        for (index, ev) in events.iter().enumerate() {
            if !(ev.time >= 0.0 && ev.time.is_finite()) {
                return Err(TraceError::BadTime { index, time: ev.time });
            }
            if ev.time > horizon {
                return Err(TraceError::BeyondHorizon {
                    index,
                    time: ev.time,
                    horizon,
                });
            }
            if index > 0 {
                let prev = events[index - 1];
                if ev.time <= prev.time {
                    return Err(TraceError::NotIncreasing {
                        index,
                        time: ev.time,
                        previous: prev.time,
                    });
                }
                if ev.kind == prev.kind {
                    return Err(TraceError::NotAlternating { index, kind: ev.kind });
                }
            }
        }
        Ok(AvailabilityTrace { events, horizon })
    }

    /// A peer online for the whole horizon.
    pub fn always_on(horizon: f64) -> Result<Self, TraceError> {
        Self::new(
            vec![TraceEvent {
                time: 0.0,
                kind: EventKind::Up,
            }],
            horizon,
        )
    }

    /// Builds a trace from `[start, end)` online intervals, which must be
    /// sorted and disjoint.
    pub fn from_intervals(intervals: &[(f64, f64)], horizon: f64) -> Result<Self, TraceError> {
        let mut events = Vec::with_capacity(intervals.len() * 2);
        for &(start, end) in intervals {
            events.push(TraceEvent {
                time: start,
                kind: EventKind::Up,
            });
            if end < horizon {
                events.push(TraceEvent {
                    time: end,
                    kind: EventKind::Down,
                });
            }
        }
        Self::new(events, horizon)
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initially_online(&self) -> bool {
        matches!(self.events.first(), Some(ev) if ev.kind == EventKind::Down)
    }

    /// Online intervals `[start, end)`, clipped to the horizon.
    pub fn online_intervals(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut since = if self.initially_online() { Some(0.0) } else { None };
        for ev in &self.events {
            match ev.kind {
                EventKind::Up => since = Some(ev.time),
                EventKind::Down => {
                    if let Some(start) = since.take() {
                        if ev.time > start {
                            out.push((start, ev.time));
                        }
                    }
                }
            }
        }
        if let Some(start) = since {
            if self.horizon > start {
                out.push((start, self.horizon));
            }
        }
        out
    }

    pub fn online_time(&self) -> f64 {
        self.online_intervals().iter().map(|(s, e)| e - s).sum()
    }

    /// Fraction of the horizon spent online.
    pub fn availability(&self) -> f64 {
        self.online_time() / self.horizon
    }

    pub fn is_online_at(&self, t: f64) -> bool {
        // Index of the first event strictly after `t`.
        let idx = self.events.partition_point(|ev| ev.time <= t);
        if idx == 0 {
            self.initially_online()
        } else {
            self.events[idx - 1].kind == EventKind::Up
        }
    }

    /// First instant at or after `from` where the peer is online.
    pub fn next_online(&self, from: f64) -> Option<f64> {
        self.online_intervals()
            .into_iter()
            .find(|&(_, end)| end > from)
            .map(|(start, _)| start.max(from))
    }

    /// Wall-clock time, starting at `start`, needed to accumulate `needed`
    /// seconds of online time. `None` when the horizon comes first.
    pub fn time_to_accumulate(&self, start: f64, needed: f64) -> Option<f64> {
        if needed <= 0.0 {
            return Some(0.0);
        }
        let mut remaining = needed;
        for (s, e) in self.online_intervals() {
            if e <= start {
                continue;
            }
            let s = s.max(start);
            let len = e - s;
            if len >= remaining {
                return Some(s + remaining - start);
            }
            remaining -= len;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(time: f64, kind: EventKind) -> TraceEvent {
        TraceEvent { time, kind }
    }

    #[test]
    fn initial_state_is_complement_of_first_event() {
        let t = AvailabilityTrace::new(vec![ev(5.0, EventKind::Down)], 10.0).unwrap();
        assert!(t.initially_online());
        assert_eq!(t.online_intervals(), vec![(0.0, 5.0)]);
        assert_eq!(t.availability(), 0.5);

        let t = AvailabilityTrace::new(vec![ev(5.0, EventKind::Up)], 10.0).unwrap();
        assert!(!t.initially_online());
        assert_eq!(t.availability(), 0.5);
    }

    #[test]
    fn rejects_malformed_traces() {
        use EventKind::*;
        assert!(matches!(
            AvailabilityTrace::new(vec![ev(10.0, Up), ev(5.0, Down)], 20.0),
            Err(TraceError::NotIncreasing { index: 1, .. })
        ));
        assert!(matches!(
            AvailabilityTrace::new(vec![ev(1.0, Up), ev(5.0, Up)], 20.0),
            Err(TraceError::NotAlternating { index: 1, .. })
        ));
        assert!(matches!(
            AvailabilityTrace::new(vec![ev(30.0, Up)], 20.0),
            Err(TraceError::BeyondHorizon { .. })
        ));
        assert!(AvailabilityTrace::new(vec![], 0.0).is_err());
    }

    #[test]
    fn online_lookup() {
        let t = AvailabilityTrace::from_intervals(&[(0.0, 100.0), (200.0, 300.0)], 400.0).unwrap();
        assert!(t.is_online_at(0.0));
        assert!(t.is_online_at(99.9));
        assert!(!t.is_online_at(100.0));
        assert!(t.is_online_at(200.0));
        assert!(!t.is_online_at(350.0));
        assert_eq!(t.next_online(150.0), Some(200.0));
        assert_eq!(t.next_online(50.0), Some(50.0));
        assert_eq!(t.next_online(300.0), None);
    }

    #[test]
    fn accumulate_walks_gaps() {
        let t = AvailabilityTrace::from_intervals(&[(0.0, 100.0), (200.0, 300.0)], 400.0).unwrap();
        assert_eq!(t.time_to_accumulate(0.0, 150.0), Some(250.0));
        assert_eq!(t.time_to_accumulate(50.0, 100.0), Some(200.0));
        assert_eq!(t.time_to_accumulate(0.0, 250.0), None);
        assert_eq!(t.time_to_accumulate(120.0, 0.0), Some(0.0));
    }

    #[test]
    fn empty_trace_is_never_online() {
        let t = AvailabilityTrace::new(vec![], 10.0).unwrap();
        assert_eq!(t.availability(), 0.0);
        assert!(!t.is_online_at(3.0));
    }
}
