//! Max-min fair sharing of access links.
//!
//! Every flow crosses two resources: the uplink of its source and the downlink
//! of its destination. Progressive filling raises all unfrozen flows together;
//! whenever a resource saturates, the flows crossing it are frozen at the
//! current level.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// A flow from `src`'s uplink to `dst`'s downlink (peer indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flow {
    pub src: usize,
    pub dst: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Share(f64);

impl Eq for Share {}

impl PartialOrd for Share {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Share {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Reusable scratch space for repeated allocations over the same peer set.
#[derive(Debug, Default)]
pub struct Allocator {
    residual: Vec<f64>,
    count: Vec<u32>,
    touched: Vec<usize>,
    // CSR adjacency: resource -> flows.
    start: Vec<usize>,
    end: Vec<usize>,
    adj: Vec<usize>,
    frozen: Vec<bool>,
    heap: BinaryHeap<Reverse<(Share, usize)>>,
}

impl Allocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes one rate per flow into `rates`. Resource `2p` is peer `p`'s
    /// uplink and `2p + 1` its downlink.
    pub fn allocate(&mut self, flows: &[Flow], uplink: &[f64], downlink: &[f64], rates: &mut Vec<f64>) {
        rates.clear();
        rates.resize(flows.len(), 0.0);
        if flows.is_empty() {
            return;
        }
        let resources = 2 * uplink.len();
        if self.residual.len() < resources {
            self.residual.resize(resources, 0.0);
            self.count.resize(resources, 0);
            self.start.resize(resources, 0);
            self.end.resize(resources, 0);
        }
        self.touched.clear();
        for f in flows {
            for r in [2 * f.src, 2 * f.dst + 1] {
                if self.count[r] == 0 {
                    self.touched.push(r);
                    self.residual[r] = if r % 2 == 0 { uplink[r / 2] } else { downlink[r / 2] };
                }
                self.count[r] += 1;
            }
        }

        // Build adjacency over touched resources only.
        let mut offset = 0;
        for &r in &self.touched {
            self.start[r] = offset;
            self.end[r] = offset;
            offset += self.count[r] as usize;
        }
        self.adj.clear();
        self.adj.resize(offset, 0);
        for (i, f) in flows.iter().enumerate() {
            for r in [2 * f.src, 2 * f.dst + 1] {
                self.adj[self.end[r]] = i;
                self.end[r] += 1;
            }
        }

        self.frozen.clear();
        self.frozen.resize(flows.len(), false);
        self.heap.clear();
        for &r in &self.touched {
            let share = self.residual[r] / self.count[r] as f64;
            self.heap.push(Reverse((Share(share), r)));
        }

        // Freezing a flow at the current level never lowers the fair share of
        // its other resource, so keys only go stale upwards: re-queue on pop.
        while let Some(Reverse((Share(key), r))) = self.heap.pop() {
            if self.count[r] == 0 {
                continue;
            }
            let current = self.residual[r].max(0.0) / self.count[r] as f64;
            if current > key {
                self.heap.push(Reverse((Share(current), r)));
                continue;
            }
            let share = current;
            for idx in self.start[r]..self.end[r] {
                let fi = self.adj[idx];
                if self.frozen[fi] {
                    continue;
                }
                self.frozen[fi] = true;
                rates[fi] = share;
                let f = flows[fi];
                for other in [2 * f.src, 2 * f.dst + 1] {
                    self.residual[other] -= share;
                    self.count[other] -= 1;
                }
            }
        }
        for &r in &self.touched {
            self.count[r] = 0;
        }
    }
}

/// One-shot max-min fair allocation.
pub fn allocate_bandwidth(flows: &[Flow], uplink: &[f64], downlink: &[f64]) -> Vec<f64> {
    let mut rates = Vec::new();
    Allocator::new().allocate(flows, uplink, downlink, &mut rates);
    rates
}

/// Largest relative overshoot of any uplink or downlink by the given rates.
/// Zero when every cap is respected.
pub fn max_overshoot(flows: &[Flow], rates: &[f64], uplink: &[f64], downlink: &[f64]) -> f64 {
    let mut out = vec![0.0; uplink.len()];
    let mut inc = vec![0.0; downlink.len()];
    for (f, r) in flows.iter().zip(rates) {
        out[f.src] += r;
        inc[f.dst] += r;
    }
    let mut worst = 0.0f64;
    for p in 0..uplink.len() {
        worst = worst.max((out[p] - uplink[p]) / uplink[p]);
        worst = worst.max((inc[p] - downlink[p]) / downlink[p]);
    }
    worst.max(0.0)
}
