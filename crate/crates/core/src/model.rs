//! Shared domain types: durations, sizes, rates, peers and policy parameters.
//!
//! Durations are seconds, sizes are bytes. Binary prefixes are used throughout,
//! so a 10 GiB object split into 160 MiB fragments needs exactly 64 fragments.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::AvailabilityTrace;

pub const KIB: f64 = 1024.0;
pub const MIB: f64 = 1024.0 * KIB;
pub const GIB: f64 = 1024.0 * MIB;

pub const MINUTE: f64 = 60.0;
pub const HOUR: f64 = 60.0 * MINUTE;
pub const DAY: f64 = 24.0 * HOUR;
pub const WEEK: f64 = 7.0 * DAY;
pub const YEAR: f64 = 365.0 * DAY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
}

impl ModelError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        ModelError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}

/// Serde adapter for floats that may be infinite. JSON has no infinity, so
/// `+inf` and `-inf` are written as the strings `"inf"` and `"-inf"`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            s.serialize_str(if *value > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("expected a number or \"inf\", got `{other}`"))),
            },
        }
    }
}

macro_rules! non_negative_quantity {
    ($(#[$meta:meta])* $name:ident, $unit:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(#[serde(with = "extended_f64")] f64);

        impl $name {
            pub const ZERO: $name = $name(0.0);

            /// Rejects negative and NaN values. `+inf` is accepted so that
            /// "never" can be expressed (e.g. an infinite mean lifetime).
            pub fn new(value: f64) -> Result<Self, ModelError> {
                if value.is_nan() || value < 0.0 {
                    return Err(ModelError::invalid(
                        stringify!($name),
                        format!("must be a non-negative number, got {value}"),
                    ));
                }
                Ok($name(value))
            }

            #[inline]
            pub fn get(self) -> f64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{} {}", self.0, $unit)
            }
        }
    };
}

non_negative_quantity!(
    /// A duration or an instant measured from the start of the simulation.
    Seconds,
    "s"
);
non_negative_quantity!(Bytes, "B");
non_negative_quantity!(BytesPerSecond, "B/s");

/// Dense peer index. Peers are numbered `0..n` in the order they were loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u32);

impl PeerId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Number of fragments needed to rebuild an object with an optimal code.
pub fn derive_k(object_size: Bytes, fragment_size: Bytes) -> Result<u32, ModelError> {
    let o = object_size.get();
    let f = fragment_size.get();
    if !(o > 0.0 && o.is_finite()) {
        return Err(ModelError::invalid("object_size", "must be > 0 and finite"));
    }
    if !(f > 0.0 && f.is_finite()) {
        return Err(ModelError::invalid("fragment_size", "must be > 0 and finite"));
    }
    let k = (o / f).ceil();
    if k > u32::MAX as f64 {
        return Err(ModelError::invalid("fragment_size", "too many fragments"));
    }
    Ok(k as u32)
}

/// Storage overhead `n / k` of an object spread over `n` fragments.
pub fn redundancy_factor(n: u32, k: u32) -> Result<f64, ModelError> {
    if k == 0 {
        return Err(ModelError::invalid("k", "must be >= 1"));
    }
    if n < k {
        return Err(ModelError::invalid("n", format!("n = {n} is below k = {k}")));
    }
    Ok(n as f64 / k as f64)
}

/// Static description of one peer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerProfile {
    pub id: PeerId,
    pub name: String,
    pub uplink: BytesPerSecond,
    pub downlink: BytesPerSecond,
    pub trace: AvailabilityTrace,
    /// Online fraction of `trace` over its horizon.
    pub availability: f64,
    /// Storage dedicated to other peers' fragments.
    pub capacity: Bytes,
}

impl PeerProfile {
    pub fn new(
        id: PeerId,
        name: impl Into<String>,
        uplink: BytesPerSecond,
        downlink: BytesPerSecond,
        trace: AvailabilityTrace,
        capacity: Bytes,
    ) -> Result<Self, ModelError> {
        if !(uplink.get() > 0.0 && uplink.get().is_finite()) {
            return Err(ModelError::invalid("uplink", "must be > 0 and finite"));
        }
        if !(downlink.get() > 0.0 && downlink.get().is_finite()) {
            return Err(ModelError::invalid("downlink", "must be > 0 and finite"));
        }
        let availability = trace.availability();
        if availability <= 0.0 {
            return Err(ModelError::invalid(
                "trace",
                "peer is never online within the horizon",
            ));
        }
        Ok(PeerProfile {
            id,
            name: name.into(),
            uplink,
            downlink,
            trace,
            availability,
            capacity,
        })
    }
}

/// Parameters of both redundancy policies plus the shared object layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub object_size: Bytes,
    pub fragment_size: Bytes,
    pub k: u32,
    /// Mean peer lifetime. May be `+inf`.
    pub tau: Seconds,
    /// Window during which no maintenance can happen.
    pub w: Seconds,
    pub sigma1: f64,
    pub alpha: f64,
    pub sigma2_floor: Seconds,
    pub baseline_target_availability: f64,
    pub baseline_mean_availability: f64,
    pub capacity: Bytes,
    /// Continuous-offline time after which a holder is declared lost.
    /// Always equal to `w`; `a_off` emerges from the owner's own trace.
    pub maintenance_timeout: Seconds,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            object_size: Bytes(10.0 * GIB),
            fragment_size: Bytes(160.0 * MIB),
            k: 64,
            tau: Seconds(YEAR),
            w: Seconds(2.0 * WEEK),
            sigma1: 0.9999,
            alpha: 2.0,
            sigma2_floor: Seconds(DAY),
            baseline_target_availability: 0.99,
            baseline_mean_availability: 0.36,
            capacity: Bytes(50.0 * GIB),
            maintenance_timeout: Seconds(2.0 * WEEK),
        }
    }
}

impl PolicyConfig {
    /// Sets `w` and the matching maintenance timeout together.
    pub fn with_window(mut self, w: Seconds) -> Self {
        self.w = w;
        self.maintenance_timeout = w;
        self
    }

    pub fn with_tau(mut self, tau: Seconds) -> Self {
        self.tau = tau;
        self
    }

    /// Checks every invariant and returns all violations, keyed by field name.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let o = self.object_size.get();
        let f = self.fragment_size.get();
        if !(o > 0.0 && o.is_finite()) {
            out.push(("object_size", "must be > 0 and finite".to_string()));
        }
        if !(f > 0.0 && f.is_finite()) {
            out.push(("fragment_size", "must be > 0 and finite".to_string()));
        }
        if let Ok(k) = derive_k(self.object_size, self.fragment_size) {
            if self.k != k {
                out.push(("k", format!("must equal ceil(object_size / fragment_size) = {k}")));
            }
        }
        if !(self.sigma1 > 0.0 && self.sigma1 < 1.0) {
            out.push(("sigma1", format!("must lie in (0, 1), got {}", self.sigma1)));
        }
        if !(self.tau.get() > 0.0) {
            out.push(("tau", "must be > 0".to_string()));
        }
        if !self.w.get().is_finite() {
            out.push(("w", "must be finite".to_string()));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            out.push(("alpha", format!("must be >= 1, got {}", self.alpha)));
        }
        if !self.sigma2_floor.get().is_finite() {
            out.push(("sigma2_floor", "must be finite".to_string()));
        }
        let t = self.baseline_target_availability;
        if !(t > 0.0 && t < 1.0) {
            out.push((
                "baseline_target_availability",
                format!("must lie in (0, 1), got {t}"),
            ));
        }
        let a = self.baseline_mean_availability;
        if !(a > 0.0 && a < 1.0) {
            out.push((
                "baseline_mean_availability",
                format!("must lie in (0, 1), got {a}"),
            ));
        }
        if !(self.capacity.get() >= f) {
            out.push(("capacity", "must hold at least one fragment".to_string()));
        }
        if self.maintenance_timeout != self.w {
            out.push(("maintenance_timeout", "must equal w".to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((name, reason)) => Err(ModelError::InvalidArgument { name, reason }),
        }
    }

    pub fn min_ttr(&self, downlink: BytesPerSecond) -> f64 {
        self.object_size.get() / downlink.get()
    }
}
