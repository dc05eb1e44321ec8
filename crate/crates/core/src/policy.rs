//! Redundancy policies.
//!
//! The adaptive policy keeps adding fragments until the object is durable over
//! the window `w + eTTR` and the estimated restore time is acceptable. The
//! availability-based baseline picks one fragment count for every object from
//! the system-wide mean availability.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bytes, BytesPerSecond, PeerId, PolicyConfig, Seconds};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("need at least {k} holder entries to estimate the restore time, got {got}")]
    InsufficientHolders { k: u32, got: usize },
    #[error("no fragment count up to {n_max} reaches the target {target}")]
    UnreachableTarget { target: f64, n_max: u32 },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> PolicyError {
    PolicyError::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

/// Probability that a peer with exponentially distributed lifetime of mean
/// `tau` is still alive after `t`.
pub fn survival_probability(t: Seconds, tau: Seconds) -> Result<f64, PolicyError> {
    if !(tau.get() > 0.0) {
        return Err(invalid("tau", "must be > 0"));
    }
    Ok((-t.get() / tau.get()).exp())
}

/// `ln(m!)` for `m` in `0..=n`.
fn ln_factorials(n: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0f64;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Probability that at least `k` of `n` independent fragments survive when
/// each survives with probability `p_survive`.
///
/// Terms are evaluated in log space and the smaller tail is summed, so the
/// result stays accurate for `n` in the hundreds and near 0 or 1.
pub fn durability(n: u32, k: u32, p_survive: f64) -> Result<f64, PolicyError> {
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    if n < k {
        return Err(invalid("n", format!("n = {n} is below k = {k}")));
    }
    if !(0.0..=1.0).contains(&p_survive) {
        return Err(invalid("p_survive", format!("must lie in [0, 1], got {p_survive}")));
    }
    if p_survive == 0.0 {
        return Ok(0.0);
    }
    if p_survive == 1.0 {
        return Ok(1.0);
    }
    let lnf = ln_factorials(n);
    let ln_p = p_survive.ln();
    let ln_q = (-p_survive).ln_1p();
    let term = |i: u32| {
        lnf[n as usize] - lnf[i as usize] - lnf[(n - i) as usize]
            + i as f64 * ln_p
            + (n - i) as f64 * ln_q
    };
    let mean = n as f64 * p_survive;
    let d = if (k as f64) > mean {
        // Upper tail is the small one.
        let terms: Vec<f64> = (k..=n).map(term).collect();
        log_sum_exp(&terms).exp()
    } else {
        let terms: Vec<f64> = (0..k).map(term).collect();
        1.0 - log_sum_exp(&terms).exp()
    };
    Ok(d.clamp(0.0, 1.0))
}

/// Long-run serving rate of a holder: uplink scaled by availability.
pub fn expected_upload_rate(uplink: BytesPerSecond, availability: f64) -> BytesPerSecond {
    debug_assert!((0.0..=1.0).contains(&availability));
    BytesPerSecond::new(uplink.get() * availability.clamp(0.0, 1.0))
        .expect("product of non-negative values")
}

/// One fragment held by a remote peer. A peer storing several fragments
/// appears once per fragment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderRate {
    pub peer: PeerId,
    pub expected_upload_rate: BytesPerSecond,
}

/// Estimated restore time: the slower of the owner's downlink and `k`
/// parallel downloads at the k-th best expected upload rate.
pub fn estimate_ttr(
    object_size: Bytes,
    owner_downlink: BytesPerSecond,
    k: u32,
    holders: &[HolderRate],
) -> Result<Seconds, PolicyError> {
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    if holders.len() < k as usize {
        return Err(PolicyError::InsufficientHolders {
            k,
            got: holders.len(),
        });
    }
    let mut rates: Vec<f64> = holders
        .iter()
        .map(|h| h.expected_upload_rate.get())
        .collect();
    Ok(Seconds::new(ettr_from_rates(object_size.get(), owner_downlink.get(), k, &mut rates))
        .expect("restore time is non-negative"))
}

/// Raw-number form of [`estimate_ttr`]; `rates` is reordered in place.
pub(crate) fn ettr_from_rates(object_size: f64, owner_downlink: f64, k: u32, rates: &mut [f64]) -> f64 {
    let idx = k as usize - 1;
    // k-th largest: select in descending order.
    let (_, mu_k, _) = rates.select_nth_unstable_by(idx, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let mu_k = *mu_k;
    let download_bound = object_size / owner_downlink;
    let holder_bound = object_size / (k as f64 * mu_k);
    download_bound.max(holder_bound)
}

/// Tolerated restore time: `alpha * min_ttr`, never below `floor`.
pub fn sigma2(min_ttr: Seconds, alpha: f64, floor: Seconds) -> Seconds {
    Seconds::new(floor.get().max(alpha * min_ttr.get())).expect("non-negative")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurabilityAssessment {
    pub n: u32,
    pub k: u32,
    pub p_survive: f64,
    pub durability: f64,
    /// `w + eTTR`.
    pub time_window: Seconds,
}

pub fn stop_condition(
    assessment: &DurabilityAssessment,
    ettr: Seconds,
    sigma1: f64,
    sigma2_value: Seconds,
) -> bool {
    assessment.durability >= sigma1 && ettr <= sigma2_value
}

/// Smallest `n >= k` whose availability `P[Bin(n, a) >= k]` reaches `target`.
pub fn baseline_fragment_count(
    k: u32,
    mean_availability: f64,
    target: f64,
    n_max: u32,
) -> Result<u32, PolicyError> {
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    if !(mean_availability > 0.0 && mean_availability < 1.0) {
        return Err(invalid("mean_availability", "must lie in (0, 1)"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(invalid("target", "must lie in (0, 1)"));
    }
    (k..=n_max)
        .find(|&n| durability(n, k, mean_availability).map_or(false, |d| d >= target))
        .ok_or(PolicyError::UnreachableTarget { target, n_max })
}

/// Durability and restore-time estimate of the current holder set.
pub fn adaptive_assessment(
    config: &PolicyConfig,
    holders: &[HolderRate],
    owner_downlink: BytesPerSecond,
) -> Result<(DurabilityAssessment, Seconds), PolicyError> {
    let ettr = estimate_ttr(config.object_size, owner_downlink, config.k, holders)?;
    let assessment = assess_window(config, holders.len() as u32, ettr)?;
    Ok((assessment, ettr))
}

fn assess_window(config: &PolicyConfig, n: u32, ettr: Seconds) -> Result<DurabilityAssessment, PolicyError> {
    let t = Seconds::new(config.w.get() + ettr.get()).expect("non-negative");
    let p = survival_probability(t, config.tau)?;
    Ok(DurabilityAssessment {
        n,
        k: config.k,
        p_survive: p,
        durability: durability(n, config.k, p)?,
        time_window: t,
    })
}

/// Raw-number assessment used by the simulator's hot path. `rates` holds one
/// expected upload rate per fragment and is reordered in place.
pub(crate) fn assess_rates(
    config: &PolicyConfig,
    rates: &mut [f64],
    owner_downlink: f64,
) -> Option<(DurabilityAssessment, f64)> {
    if rates.len() < config.k as usize {
        return None;
    }
    let ettr = ettr_from_rates(config.object_size.get(), owner_downlink, config.k, rates);
    let assessment = assess_window(config, rates.len() as u32, Seconds::new(ettr).ok()?).ok()?;
    Some((assessment, ettr))
}
