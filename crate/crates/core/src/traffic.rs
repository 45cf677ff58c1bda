//! Seeded synthetic TCP traffic: paired connections for normal load and
//! unterminated SYNs for floods.
//!
//! Timestamps are integer microseconds. Generators are iterators so very
//! long traces can be binned without being held in memory.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TraceError;

pub const MICROS_PER_SECOND: u64 = 1_000_000;
pub const DEFAULT_INTERVAL_S: f64 = 10.0;
pub const DEFAULT_FIN_DELAY: [f64; 2] = [12.0, 19.0];
/// Fraction of normal connections closed by RST rather than FIN.
pub const DEFAULT_RST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PacketKind {
    Syn,
    SynAck,
    Fin,
    Rst,
    Ack,
    Other,
}

impl PacketKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PacketKind::Syn => "SYN",
            PacketKind::SynAck => "SYNACK",
            PacketKind::Fin => "FIN",
            PacketKind::Rst => "RST",
            PacketKind::Ack => "ACK",
            PacketKind::Other => "OTHER",
        }
    }

    /// A connection attempt: SYN without ACK.
    pub fn is_syn(&self) -> bool {
        matches!(self, PacketKind::Syn)
    }

    pub fn is_fin_or_rst(&self) -> bool {
        matches!(self, PacketKind::Fin | PacketKind::Rst)
    }
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PacketKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "SYN" => PacketKind::Syn,
            "SYNACK" | "SYN+ACK" | "SYN-ACK" => PacketKind::SynAck,
            "FIN" => PacketKind::Fin,
            "RST" => PacketKind::Rst,
            "ACK" => PacketKind::Ack,
            "OTHER" => PacketKind::Other,
            other => return Err(format!("unknown packet type {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketEvent {
    pub ts_us: u64,
    pub vm_id: Arc<str>,
    pub kind: PacketKind,
}

impl PacketEvent {
    pub fn new(ts_us: u64, vm_id: impl Into<Arc<str>>, kind: PacketKind) -> Self {
        PacketEvent { ts_us, vm_id: vm_id.into(), kind }
    }
}

pub fn seconds_to_micros(s: f64) -> u64 {
    (s * MICROS_PER_SECOND as f64).round().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficMode {
    #[default]
    Normal,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub vm_id: String,
    #[serde(default)]
    pub mode: TrafficMode,
    /// Connections (SYNs) per interval.
    pub base_rate: u64,
    /// Attack SYN rate as a multiple of `base_rate`.
    #[serde(default = "one")]
    pub attack_multiplier: f64,
    /// Seconds between a SYN and its FIN/RST, drawn uniformly.
    #[serde(default = "default_fin_delay")]
    pub fin_delay_range: [f64; 2],
    /// First interval index (inclusive).
    #[serde(default)]
    pub start: u64,
    /// Last interval index (exclusive).
    pub end: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default = "default_rst_fraction")]
    pub rst_fraction: f64,
}

fn one() -> f64 {
    1.0
}

fn default_fin_delay() -> [f64; 2] {
    DEFAULT_FIN_DELAY
}

fn default_interval() -> f64 {
    DEFAULT_INTERVAL_S
}

fn default_rst_fraction() -> f64 {
    DEFAULT_RST_FRACTION
}

impl TrafficSpec {
    pub fn normal(vm_id: impl Into<String>, base_rate: u64, start: u64, end: u64, seed: u64) -> Self {
        TrafficSpec {
            vm_id: vm_id.into(),
            mode: TrafficMode::Normal,
            base_rate,
            attack_multiplier: 1.0,
            fin_delay_range: DEFAULT_FIN_DELAY,
            start,
            end,
            seed,
            interval_s: DEFAULT_INTERVAL_S,
            rst_fraction: DEFAULT_RST_FRACTION,
        }
    }

    pub fn attack(vm_id: impl Into<String>, base_rate: u64, multiplier: f64, start: u64, end: u64, seed: u64) -> Self {
        TrafficSpec {
            mode: TrafficMode::Attack,
            attack_multiplier: multiplier,
            ..TrafficSpec::normal(vm_id, base_rate, start, end, seed)
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidSpec(m));
        let [lo, hi] = self.fin_delay_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad(format!("fin_delay_range {:?} must satisfy 0 <= low <= high", self.fin_delay_range));
        }
        if !(self.attack_multiplier.is_finite() && self.attack_multiplier >= 1.0) {
            return bad(format!("attack_multiplier {} must be >= 1", self.attack_multiplier));
        }
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) || seconds_to_micros(self.interval_s) == 0 {
            return bad(format!("interval_s {} must be positive", self.interval_s));
        }
        if !(0.0..=1.0).contains(&self.rst_fraction) {
            return bad(format!("rst_fraction {} must lie in [0, 1]", self.rst_fraction));
        }
        if self.start > self.end {
            return bad(format!("start {} is after end {}", self.start, self.end));
        }
        Ok(())
    }

    fn interval_us(&self) -> u64 {
        seconds_to_micros(self.interval_s).max(1)
    }

    /// SYNs per interval in attack mode.
    pub fn attack_rate(&self) -> u64 {
        (self.base_rate as f64 * self.attack_multiplier).round() as u64
    }
}

/// Sorted offsets of `n` connection attempts within one interval.
fn syn_offsets(rng: &mut ChaCha8Rng, n: u64, interval_us: u64) -> Vec<u64> {
    let mut offsets: Vec<u64> = (0..n).map(|_| rng.random_range(0..interval_us)).collect();
    offsets.sort_unstable();
    offsets
}

/// Paired traffic: every SYN is followed by exactly one FIN or RST after a
/// uniform delay drawn from the spec's range.
pub struct NormalTraffic {
    vm_id: Arc<str>,
    rng: ChaCha8Rng,
    base_rate: u64,
    interval_us: u64,
    delay_us: (u64, u64),
    rst_fraction: f64,
    next_interval: u64,
    end: u64,
    seq: u64,
    pending: BinaryHeap<Reverse<(u64, u64, PacketKind)>>,
}

impl NormalTraffic {
    pub fn new(spec: &TrafficSpec) -> Self {
        let [lo, hi] = spec.fin_delay_range;
        let (lo, hi) = (seconds_to_micros(lo.min(hi)), seconds_to_micros(hi.max(lo)));
        NormalTraffic {
            vm_id: Arc::from(spec.vm_id.as_str()),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            base_rate: spec.base_rate,
            interval_us: spec.interval_us(),
            delay_us: (lo, hi),
            rst_fraction: spec.rst_fraction,
            next_interval: spec.start,
            end: spec.end,
            seq: 0,
            pending: BinaryHeap::new(),
        }
    }

    fn push(&mut self, ts: u64, kind: PacketKind) {
        self.pending.push(Reverse((ts, self.seq, kind)));
        self.seq += 1;
    }

    fn generate_next_interval(&mut self) {
        let base = self.next_interval * self.interval_us;
        let offsets = syn_offsets(&mut self.rng, self.base_rate, self.interval_us);
        for off in offsets {
            let syn = base + off;
            let delay = self.rng.random_range(self.delay_us.0..=self.delay_us.1);
            let kind = if self.rng.random::<f64>() < self.rst_fraction { PacketKind::Rst } else { PacketKind::Fin };
            self.push(syn, PacketKind::Syn);
            self.push(syn + delay, kind);
        }
        self.next_interval += 1;
    }
}

impl Iterator for NormalTraffic {
    type Item = PacketEvent;

    fn next(&mut self) -> Option<PacketEvent> {
        // Every event of a not-yet-generated interval is at or after its start,
        // so the heap top is safe to emit once it precedes that start.
        while self.next_interval < self.end {
            let horizon = self.next_interval * self.interval_us;
            match self.pending.peek() {
                Some(Reverse((ts, _, _))) if *ts < horizon => break,
                _ => self.generate_next_interval(),
            }
        }
        let Reverse((ts, _, kind)) = self.pending.pop()?;
        Some(PacketEvent { ts_us: ts, vm_id: self.vm_id.clone(), kind })
    }
}

/// Unterminated SYNs at `base_rate * attack_multiplier` per interval.
pub struct AttackTraffic {
    vm_id: Arc<str>,
    rng: ChaCha8Rng,
    rate: u64,
    interval_us: u64,
    next_interval: u64,
    end: u64,
    buffer: std::vec::IntoIter<u64>,
}

impl AttackTraffic {
    pub fn new(spec: &TrafficSpec) -> Self {
        AttackTraffic {
            vm_id: Arc::from(spec.vm_id.as_str()),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            rate: spec.attack_rate(),
            interval_us: spec.interval_us(),
            next_interval: spec.start,
            end: spec.end,
            buffer: Vec::new().into_iter(),
        }
    }
}

impl Iterator for AttackTraffic {
    type Item = PacketEvent;

    fn next(&mut self) -> Option<PacketEvent> {
        loop {
            if let Some(ts) = self.buffer.next() {
                return Some(PacketEvent { ts_us: ts, vm_id: self.vm_id.clone(), kind: PacketKind::Syn });
            }
            if self.next_interval >= self.end {
                return None;
            }
            let base = self.next_interval * self.interval_us;
            let offsets = syn_offsets(&mut self.rng, self.rate, self.interval_us);
            self.buffer = offsets.into_iter().map(|o| base + o).collect::<Vec<_>>().into_iter();
            self.next_interval += 1;
        }
    }
}

pub fn gen_normal(spec: &TrafficSpec) -> Vec<PacketEvent> {
    NormalTraffic::new(spec).collect()
}

pub fn gen_attack(spec: &TrafficSpec) -> Vec<PacketEvent> {
    AttackTraffic::new(spec).collect()
}

/// Generates according to `spec.mode`.
pub fn generate(spec: &TrafficSpec) -> Box<dyn Iterator<Item = PacketEvent> + Send> {
    match spec.mode {
        TrafficMode::Normal => Box::new(NormalTraffic::new(spec)),
        TrafficMode::Attack => Box::new(AttackTraffic::new(spec)),
    }
}

pub fn check_sorted(events: &[PacketEvent]) -> Result<(), TraceError> {
    for (i, w) in events.windows(2).enumerate() {
        if w[1].ts_us < w[0].ts_us {
            return Err(TraceError::UnsortedTrace { index: i + 1, prev_us: w[0].ts_us, at_us: w[1].ts_us });
        }
    }
    Ok(())
}

/// Stable k-way merge by timestamp; equal timestamps order by vm id, then by
/// input stream, then by position within the stream.
pub fn merge_traces(traces: Vec<Vec<PacketEvent>>) -> Result<Vec<PacketEvent>, TraceError> {
    for t in &traces {
        check_sorted(t)?;
    }
    let total = traces.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = traces.into_iter().map(|t| t.into_iter().peekable()).collect();
    let mut heap = BinaryHeap::new();
    for (i, it) in iters.iter_mut().enumerate() {
        if let Some(e) = it.peek() {
            heap.push(Reverse((e.ts_us, e.vm_id.clone(), i)));
        }
    }
    let mut out = Vec::with_capacity(total);
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let e = iters[i].next().expect("peeked");
        out.push(e);
        if let Some(n) = iters[i].peek() {
            heap.push(Reverse((n.ts_us, n.vm_id.clone(), i)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn zero_rate_is_empty() {
        assert!(gen_normal(&TrafficSpec::normal("v", 0, 0, 100, 1)).is_empty());
    }

    #[test]
    fn normal_traffic_pairs_every_syn() {
        let spec = TrafficSpec::normal("v", 100, 0, 100, 7);
        let events = gen_normal(&spec);
        check_sorted(&events).unwrap();
        let syn = events.iter().filter(|e| e.kind.is_syn()).count();
        let term = events.iter().filter(|e| e.kind.is_fin_or_rst()).count();
        assert_eq!(syn, 10_000);
        assert_eq!(term, 10_000);

        // Delay windows all have the same length, so a valid SYN->terminator
        // pairing exists iff pairing the sorted sequences index by index is valid.
        let syns: Vec<u64> = events.iter().filter(|e| e.kind.is_syn()).map(|e| e.ts_us).collect();
        let mut fins: Vec<u64> = events.iter().filter(|e| e.kind.is_fin_or_rst()).map(|e| e.ts_us).collect();
        fins.sort_unstable();
        for (s, f) in syns.iter().zip(&fins) {
            assert!((12_000_000..=19_000_000).contains(&(f - s)), "syn {s} fin {f}");
        }
        let rst = events.iter().filter(|e| e.kind == PacketKind::Rst).count();
        assert!(rst > 800 && rst < 1200, "rst {rst}");
    }

    #[test]
    fn normal_traffic_is_deterministic() {
        let spec = TrafficSpec::normal("v", 50, 3, 20, 99);
        assert_eq!(gen_normal(&spec), gen_normal(&spec));
        let other = TrafficSpec { seed: 100, ..spec.clone() };
        assert_ne!(gen_normal(&spec), gen_normal(&other));
    }

    #[test]
    fn attack_rates() {
        let e = gen_attack(&TrafficSpec::attack("a", 100, 1.5, 0, 4, 1));
        assert_eq!(e.len(), 600);
        assert!(e.iter().all(|p| p.kind == PacketKind::Syn));
        let mut per_interval: HashMap<u64, usize> = HashMap::new();
        for p in &e {
            *per_interval.entry(p.ts_us / 10_000_000).or_default() += 1;
        }
        assert!(per_interval.values().all(|&n| n == 150));
        assert_eq!(gen_attack(&TrafficSpec::attack("a", 100, 3.5, 0, 1, 1)).len(), 350);
        assert!(gen_attack(&TrafficSpec::attack("a", 100, 2.0, 5, 5, 1)).is_empty());
    }

    #[test]
    fn spec_validation() {
        let ok = TrafficSpec::normal("v", 1, 0, 1, 0);
        assert!(ok.validate().is_ok());
        assert!(TrafficSpec { fin_delay_range: [19.0, 12.0], ..ok.clone() }.validate().is_err());
        assert!(TrafficSpec { attack_multiplier: 0.5, ..ok.clone() }.validate().is_err());
        assert!(TrafficSpec { interval_s: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrafficSpec { start: 3, end: 1, ..ok }.validate().is_err());
    }

    fn ev(ts: u64, vm: &str, kind: PacketKind) -> PacketEvent {
        PacketEvent::new(ts, vm, kind)
    }

    #[test]
    fn merge_examples() {
        let a = vec![ev(1, "a", PacketKind::Syn), ev(5, "a", PacketKind::Fin)];
        assert_eq!(merge_traces(vec![a.clone()]).unwrap(), a);

        let b = vec![ev(10, "b", PacketKind::Syn), ev(11, "b", PacketKind::Rst)];
        let merged = merge_traces(vec![b.clone(), a.clone()]).unwrap();
        assert_eq!(merged, [a.clone(), b].concat());

        let x = vec![ev(3, "v", PacketKind::Syn)];
        let y = vec![ev(3, "v", PacketKind::Fin)];
        let merged = merge_traces(vec![x.clone(), y.clone()]).unwrap();
        assert_eq!(merged, vec![x[0].clone(), y[0].clone()]);
        let merged = merge_traces(vec![y.clone(), x.clone()]).unwrap();
        assert_eq!(merged, vec![y[0].clone(), x[0].clone()]);

        let by_vm = merge_traces(vec![vec![ev(3, "z", PacketKind::Syn)], vec![ev(3, "a", PacketKind::Syn)]]).unwrap();
        assert_eq!(&*by_vm[0].vm_id, "a");

        let bad = vec![ev(5, "a", PacketKind::Syn), ev(4, "a", PacketKind::Syn)];
        assert!(matches!(merge_traces(vec![bad]), Err(TraceError::UnsortedTrace { index: 1, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn syn_count_equals_terminations(rate in 0u64..200, span in 1u64..40, seed: u64) {
                let events = gen_normal(&TrafficSpec::normal("v", rate, 0, span, seed));
                let syn = events.iter().filter(|e| e.kind.is_syn()).count();
                let term = events.iter().filter(|e| e.kind.is_fin_or_rst()).count();
                prop_assert_eq!(syn as u64, rate * span);
                prop_assert_eq!(syn, term);
                prop_assert!(check_sorted(&events).is_ok());
            }

            #[test]
            fn merge_is_sorted_permutation(seeds in proptest::collection::vec(any::<u64>(), 1..5)) {
                let traces: Vec<_> = seeds.iter().enumerate()
                    .map(|(i, s)| gen_normal(&TrafficSpec::normal(format!("vm{i}"), 5, 0, 4, *s)))
                    .collect();
                let total: usize = traces.iter().map(Vec::len).sum();
                let merged = merge_traces(traces).unwrap();
                prop_assert_eq!(merged.len(), total);
                prop_assert!(check_sorted(&merged).is_ok());
            }
        }
    }
}
