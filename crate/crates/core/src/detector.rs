//! Per-VM SYN-flood detection with a recursive, non-parametric CUSUM.
//!
//! Each interval contributes the normalized discrepancy between connection
//! attempts and terminations,
//!
//! ```text
//! D_n = (S_n - F_n) / max(S_n + F_n, 1)
//! y_n = max(0, y_{n-1} + D_n - a)
//! ```
//!
//! and an alarm is raised while `y_n > h`. Paired traffic keeps `D_n` near
//! zero, so the drift `a` pulls `y` back to zero; a flood drives `D_n`
//! toward one and `y` across the threshold within a few intervals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{DetectError, TraceError};
use crate::traffic::{seconds_to_micros, PacketEvent, DEFAULT_INTERVAL_S};

pub const DEFAULT_DRIFT: f64 = 0.08;
pub const DEFAULT_THRESHOLD: f64 = 1.43;
pub const DEFAULT_THROTTLE_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficInterval {
    pub interval_index: u64,
    pub vm_id: String,
    #[serde(rename = "syn")]
    pub syn_count: u64,
    #[serde(rename = "finrst")]
    pub finrst_count: u64,
}

impl TrafficInterval {
    pub fn new(interval_index: u64, vm_id: impl Into<String>, syn_count: u64, finrst_count: u64) -> Self {
        TrafficInterval { interval_index, vm_id: vm_id.into(), syn_count, finrst_count }
    }
}

/// Accumulates packet events into dense per-VM interval counts.
///
/// Intervals are aligned to `t = 0`. Every VM that appears (or is registered
/// up front) gets a row for every interval of the covered range, zero-traffic
/// intervals included, so the detector advances in lock-step.
#[derive(Debug)]
pub struct IntervalBinner {
    interval_us: u64,
    first_index: u64,
    end_index: Option<u64>,
    vms: Vec<(Arc<str>, Vec<[u64; 2]>)>,
    last_vm: usize,
    last_ts: u64,
    seen: u64,
    max_index: Option<u64>,
}

impl IntervalBinner {
    pub fn new(interval_s: f64) -> Result<Self, TraceError> {
        let interval_us = seconds_to_micros(interval_s);
        if interval_s.is_nan() || interval_s <= 0.0 || interval_us == 0 {
            return Err(TraceError::InvalidInterval);
        }
        Ok(IntervalBinner {
            interval_us,
            first_index: 0,
            end_index: None,
            vms: Vec::new(),
            last_vm: 0,
            last_ts: 0,
            seen: 0,
            max_index: None,
        })
    }

    /// Restricts output to intervals `[first, end)`; events outside are dropped.
    pub fn with_window(mut self, first: u64, end: u64) -> Self {
        self.first_index = first;
        self.end_index = Some(end.max(first));
        self
    }

    /// Covers `[0, span)` seconds regardless of where the events stop.
    pub fn with_span(self, span_s: f64) -> Self {
        let n = seconds_to_micros(span_s).div_ceil(self.interval_us);
        self.with_window(0, n)
    }

    pub fn with_vm(mut self, vm_id: &str) -> Self {
        self.slot(vm_id);
        self
    }

    fn slot(&mut self, vm_id: &str) -> usize {
        if let Some((id, _)) = self.vms.get(self.last_vm) {
            if &**id == vm_id {
                return self.last_vm;
            }
        }
        let idx = match self.vms.iter().position(|(id, _)| &**id == vm_id) {
            Some(i) => i,
            None => {
                self.vms.push((Arc::from(vm_id), Vec::new()));
                self.vms.len() - 1
            }
        };
        self.last_vm = idx;
        idx
    }

    pub fn push(&mut self, event: &PacketEvent) -> Result<(), TraceError> {
        if self.seen > 0 && event.ts_us < self.last_ts {
            return Err(TraceError::UnsortedTrace { index: self.seen as usize, prev_us: self.last_ts, at_us: event.ts_us });
        }
        self.last_ts = event.ts_us;
        self.seen += 1;
        let slot = self.slot(&event.vm_id);
        let index = event.ts_us / self.interval_us;
        if index < self.first_index || self.end_index.is_some_and(|end| index >= end) {
            return Ok(());
        }
        let column = match (event.kind.is_syn(), event.kind.is_fin_or_rst()) {
            (true, _) => 0,
            (_, true) => 1,
            _ => return Ok(()),
        };
        let rel = (index - self.first_index) as usize;
        let counts = &mut self.vms[slot].1;
        if counts.len() <= rel {
            counts.resize(rel + 1, [0, 0]);
        }
        counts[rel][column] += 1;
        self.max_index = Some(self.max_index.map_or(index, |m| m.max(index)));
        Ok(())
    }

    /// Dense intervals ordered by `(interval_index, vm_id)`.
    pub fn finish(self) -> Vec<TrafficInterval> {
        let end = match (self.end_index, self.max_index) {
            (Some(end), _) => end,
            (None, Some(max)) => max + 1,
            (None, None) => self.first_index,
        };
        let mut vms = self.vms;
        vms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = Vec::with_capacity(((end - self.first_index) as usize) * vms.len());
        for index in self.first_index..end {
            let rel = (index - self.first_index) as usize;
            for (id, counts) in &vms {
                let [syn, fin] = counts.get(rel).copied().unwrap_or([0, 0]);
                out.push(TrafficInterval::new(index, id.as_ref(), syn, fin));
            }
        }
        out
    }
}

/// Bins a time-ordered event stream into per-VM interval counts. SYN counts
/// connection attempts; FIN and RST both count as terminations; SYNACK, ACK
/// and other packets are ignored.
pub fn bin_events<'a, I>(events: I, interval_s: f64) -> Result<Vec<TrafficInterval>, TraceError>
where
    I: IntoIterator<Item = &'a PacketEvent>,
{
    let mut binner = IntervalBinner::new(interval_s)?;
    for e in events {
        binner.push(e)?;
    }
    Ok(binner.finish())
}

/// Normalized SYN vs FIN|RST imbalance in `[-1, 1]`.
pub fn discrepancy(syn: u64, finrst: u64) -> f64 {
    let denom = (syn + finrst).max(1) as f64;
    (syn as f64 - finrst as f64) / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub drift: f64,
    pub threshold: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { drift: DEFAULT_DRIFT, threshold: DEFAULT_THRESHOLD }
    }
}

impl DetectorParams {
    pub fn new(drift: f64, threshold: f64) -> Result<Self, DetectError> {
        let p = DetectorParams { drift, threshold };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.drift.is_finite() && self.drift >= 0.0) {
            return Err(DetectError::InvalidConfig(format!("drift {} must be >= 0", self.drift)));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0 && self.threshold > self.drift) {
            return Err(DetectError::InvalidConfig(format!(
                "threshold {} must be positive and exceed drift {}",
                self.threshold, self.drift
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumState {
    pub vm_id: String,
    pub y: f64,
    pub params: DetectorParams,
}

impl CusumState {
    pub fn new(vm_id: impl Into<String>, params: DetectorParams) -> Self {
        CusumState { vm_id: vm_id.into(), y: 0.0, params }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponsePolicy {
    #[default]
    Log,
    Throttle,
    Suspend,
}

impl ResponsePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResponsePolicy::Log => "log",
            ResponsePolicy::Throttle => "throttle",
            ResponsePolicy::Suspend => "suspend",
        }
    }
}

impl fmt::Display for ResponsePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResponsePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(ResponsePolicy::Log),
            "throttle" => Ok(ResponsePolicy::Throttle),
            "suspend" => Ok(ResponsePolicy::Suspend),
            other => Err(format!("unknown policy {other:?} (expected log, throttle or suspend)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub vm_id: String,
    pub interval_index: u64,
    pub y_value: f64,
    pub action_taken: ResponsePolicy,
}

/// One recursion step. The caller must pass an interval of the state's VM.
/// `y` is not reset on alarm.
pub fn cusum_step(state: &CusumState, iv: &TrafficInterval) -> (CusumState, Option<Alarm>) {
    debug_assert_eq!(state.vm_id, iv.vm_id, "interval routed to the wrong detector");
    let d = discrepancy(iv.syn_count, iv.finrst_count);
    let y = (state.y + d - state.params.drift).max(0.0);
    let next = CusumState { y, ..state.clone() };
    let alarm = (y > state.params.threshold).then(|| Alarm {
        vm_id: state.vm_id.clone(),
        interval_index: iv.interval_index,
        y_value: y,
        action_taken: ResponsePolicy::Log,
    });
    (next, alarm)
}

/// One row of the statistic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub interval: u64,
    pub vm_id: String,
    pub syn: u64,
    pub finrst: u64,
    pub d: f64,
    pub y: f64,
    pub alarm: bool,
}

pub const STAT_LOG_HEADER: &str = "interval,vm_id,syn,finrst,d,y,alarm";

impl StatRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{}",
            self.interval, self.vm_id, self.syn, self.finrst, self.d, self.y, self.alarm
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceReport {
    /// One alarm per contiguous exceedance episode.
    pub alarms: Vec<Alarm>,
    pub series: BTreeMap<String, Vec<f64>>,
    #[serde(skip)]
    pub log: Vec<StatRow>,
}

impl TraceReport {
    pub fn stat_log_csv(&self) -> String {
        let mut s = String::from(STAT_LOG_HEADER);
        s.push('\n');
        for row in &self.log {
            s.push_str(&row.to_csv_line());
            s.push('\n');
        }
        s
    }
}

/// Runs an independent detector per VM over `(vm, interval)`-ordered input.
/// Per-interval alarms are collapsed to the first interval of each episode.
pub fn process_trace(intervals: &[TrafficInterval], params: DetectorParams) -> TraceReport {
    let mut sorted: Vec<&TrafficInterval> = intervals.iter().collect();
    sorted.sort_by(|a, b| a.vm_id.cmp(&b.vm_id).then(a.interval_index.cmp(&b.interval_index)));

    let mut report = TraceReport::default();
    let mut current: Option<(CusumState, bool)> = None;
    for iv in sorted {
        let (state, in_episode) = match current.take() {
            Some((s, e)) if s.vm_id == iv.vm_id => (s, e),
            _ => (CusumState::new(iv.vm_id.clone(), params), false),
        };
        let (next, alarm) = cusum_step(&state, iv);
        report.series.entry(iv.vm_id.clone()).or_default().push(next.y);
        report.log.push(StatRow {
            interval: iv.interval_index,
            vm_id: iv.vm_id.clone(),
            syn: iv.syn_count,
            finrst: iv.finrst_count,
            d: discrepancy(iv.syn_count, iv.finrst_count),
            y: next.y,
            alarm: alarm.is_some(),
        });
        let firing = alarm.is_some();
        if let (Some(a), false) = (alarm, in_episode) {
            report.alarms.push(a);
        }
        current = Some((next, firing));
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum NetworkState {
    #[default]
    Attached,
    Throttled {
        factor: f64,
    },
    Suspended,
}

/// Network attachment of every known VM.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkTable {
    states: BTreeMap<String, NetworkState>,
    throttle_factor: f64,
}

impl NetworkTable {
    pub fn new(throttle_factor: f64) -> Self {
        NetworkTable { states: BTreeMap::new(), throttle_factor }
    }

    pub fn attach(&mut self, vm_id: &str) {
        self.states.entry(vm_id.to_string()).or_default();
    }

    pub fn remove(&mut self, vm_id: &str) {
        self.states.remove(vm_id);
    }

    pub fn state(&self, vm_id: &str) -> Option<NetworkState> {
        self.states.get(vm_id).copied()
    }

    pub fn is_suspended(&self, vm_id: &str) -> bool {
        matches!(self.state(vm_id), Some(NetworkState::Suspended))
    }

    /// Scale applied to the VM's generated traffic.
    pub fn traffic_scale(&self, vm_id: &str) -> f64 {
        match self.state(vm_id) {
            Some(NetworkState::Throttled { factor }) => factor,
            Some(NetworkState::Suspended) => 0.0,
            _ => 1.0,
        }
    }

    pub fn suspended(&self) -> impl Iterator<Item = &str> {
        self.states.iter().filter(|(_, s)| matches!(s, NetworkState::Suspended)).map(|(k, _)| k.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub vm_id: String,
    pub interval_index: u64,
    pub y_value: f64,
    pub action: ResponsePolicy,
    pub network: NetworkState,
    /// Set when the VM is flagged malicious (suspension).
    pub malicious: bool,
}

/// Applies a response policy to the VM named by `alarm`.
pub fn respond(alarm: &Alarm, policy: ResponsePolicy, network: &mut NetworkTable) -> Result<ActionRecord, DetectError> {
    let factor = network.throttle_factor;
    let state = network.states.get_mut(&alarm.vm_id).ok_or_else(|| DetectError::UnknownVm(alarm.vm_id.clone()))?;
    match policy {
        ResponsePolicy::Log => {}
        ResponsePolicy::Throttle => {
            if !matches!(state, NetworkState::Suspended) {
                *state = NetworkState::Throttled { factor };
            }
        }
        ResponsePolicy::Suspend => *state = NetworkState::Suspended,
    }
    Ok(ActionRecord {
        vm_id: alarm.vm_id.clone(),
        interval_index: alarm.interval_index,
        y_value: alarm.y_value,
        action: policy,
        network: *state,
        malicious: matches!(state, NetworkState::Suspended),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(default = "default_drift")]
    pub drift: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default)]
    pub policy: ResponsePolicy,
    #[serde(default = "default_throttle")]
    pub throttle_factor: f64,
    /// Intervals after a VM is registered during which its statistic is
    /// held at zero. Terminations lag connection attempts by more than one
    /// interval, so a freshly started VM looks unpaired at first.
    #[serde(default)]
    pub warmup_intervals: u64,
}

fn default_drift() -> f64 {
    DEFAULT_DRIFT
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_interval() -> f64 {
    DEFAULT_INTERVAL_S
}

fn default_throttle() -> f64 {
    DEFAULT_THROTTLE_FACTOR
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            drift: DEFAULT_DRIFT,
            threshold: DEFAULT_THRESHOLD,
            interval_s: DEFAULT_INTERVAL_S,
            policy: ResponsePolicy::Log,
            throttle_factor: DEFAULT_THROTTLE_FACTOR,
            warmup_intervals: 0,
        }
    }
}

impl DetectorConfig {
    pub fn params(&self) -> DetectorParams {
        DetectorParams { drift: self.drift, threshold: self.threshold }
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        self.params().validate()?;
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) {
            return Err(DetectError::InvalidConfig(format!("interval {} must be positive", self.interval_s)));
        }
        if !(0.0..=1.0).contains(&self.throttle_factor) {
            return Err(DetectError::InvalidConfig(format!(
                "throttle factor {} must lie in [0, 1]",
                self.throttle_factor
            )));
        }
        Ok(())
    }
}

/// What one observed interval produced.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOutput {
    pub row: StatRow,
    /// Present on the first interval of an exceedance episode.
    pub alarm: Option<Alarm>,
    pub action: Option<ActionRecord>,
}

/// Stateful per-VM detection with response handling. Intervals of a
/// suspended VM are recorded as zero traffic.
#[derive(Debug, Clone)]
pub struct FloodMonitor {
    config: DetectorConfig,
    states: BTreeMap<String, Track>,
    network: NetworkTable,
}

#[derive(Debug, Clone)]
struct Track {
    cusum: CusumState,
    in_episode: bool,
    warmup_left: u64,
}

impl FloodMonitor {
    pub fn new(config: DetectorConfig) -> Result<Self, DetectError> {
        config.validate()?;
        let network = NetworkTable::new(config.throttle_factor);
        Ok(FloodMonitor { config, states: BTreeMap::new(), network })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn network(&self) -> &NetworkTable {
        &self.network
    }

    pub fn register(&mut self, vm_id: &str) {
        self.network.attach(vm_id);
        self.states
            .entry(vm_id.to_string())
            .or_insert_with(|| Track {
                cusum: CusumState::new(vm_id, self.config.params()),
                in_episode: false,
                warmup_left: self.config.warmup_intervals,
            });
    }

    pub fn forget(&mut self, vm_id: &str) {
        self.network.remove(vm_id);
        self.states.remove(vm_id);
    }

    pub fn statistic(&self, vm_id: &str) -> Option<f64> {
        self.states.get(vm_id).map(|t| t.cusum.y)
    }

    pub fn observe(&mut self, iv: &TrafficInterval) -> Result<MonitorOutput, DetectError> {
        if !self.states.contains_key(&iv.vm_id) {
            self.register(&iv.vm_id);
        }
        let effective = if self.network.is_suspended(&iv.vm_id) {
            TrafficInterval { syn_count: 0, finrst_count: 0, ..iv.clone() }
        } else {
            iv.clone()
        };
        let track = self.states.get_mut(&iv.vm_id).expect("registered");
        let (next, alarm) = if track.warmup_left > 0 {
            track.warmup_left -= 1;
            (track.cusum.clone(), None)
        } else {
            cusum_step(&track.cusum, &effective)
        };
        let in_episode = track.in_episode;
        let row = StatRow {
            interval: effective.interval_index,
            vm_id: effective.vm_id.clone(),
            syn: effective.syn_count,
            finrst: effective.finrst_count,
            d: discrepancy(effective.syn_count, effective.finrst_count),
            y: next.y,
            alarm: alarm.is_some(),
        };
        track.in_episode = alarm.is_some();
        track.cusum = next;

        let (alarm, action) = match alarm {
            Some(mut a) if !in_episode => {
                let policy = self.config.policy;
                let action = respond(&a, policy, &mut self.network)?;
                a.action_taken = policy;
                (Some(a), Some(action))
            }
            _ => (None, None),
        };
        Ok(MonitorOutput { row, alarm, action })
    }
}
