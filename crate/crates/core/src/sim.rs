//! Deterministic tick loop tying the scheduler, traffic generator and flood
//! detector together.
//!
//! One tick is one detector interval. Each tick runs, in order:
//!
//! 1. scenario events (requests, start/stop/revoke, attack toggles);
//! 2. usage sampling for every running VM and server usage recomputation;
//! 3. traffic generation, binning and detection, with the response policy;
//! 4. at most one rebalancing migration;
//! 5. consolidation (drain and sleep lightly loaded servers);
//! 6. the utilization snapshot.
//!
//! A run is a pure function of the scenario (including its seed).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ahp::profile_weights;
use crate::cluster::{Cluster, HotspotClass, PowerState, ServerState, VmRecord, DEFAULT_THRESHOLD};
use crate::detector::{
    ActionRecord, Alarm, DetectorConfig, FloodMonitor, IntervalBinner, StatRow, TrafficInterval, STAT_LOG_HEADER,
};
use crate::error::ScenarioError;
use crate::resource::ResourceVector;
use crate::scheduler::{
    consolidate, estimate_demand_first_start, estimate_demand_restart, place, plan_migration, wake_server,
    ClassDefaults, MigrationKind, MigrationPlan, PlacementDecision,
};
use crate::traffic::{merge_traces, seconds_to_micros, AttackTraffic, NormalTraffic, PacketEvent, TrafficSpec};

pub const DEFAULT_LOW_WATERMARK: ResourceVector = ResourceVector::splat(10.0);
pub const DEFAULT_JITTER: f64 = 0.1;
pub const DEFAULT_BASE_RATE: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub id: String,
    #[serde(default)]
    pub threshold: Option<ResourceVector>,
    #[serde(default)]
    pub power: PowerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    VmRequest { class: HotspotClass, #[serde(default = "one")] count: u32 },
    VmStart { vm: String },
    VmShutdown { vm: String },
    VmRevoke { vm: String },
    AttackStart { vm: String, multiplier: f64 },
    AttackStop { vm: String },
}

fn one() -> u32 {
    1
}

impl Event {
    fn name(&self) -> &'static str {
        match self {
            Event::VmRequest { .. } => "vm_request",
            Event::VmStart { .. } => "vm_start",
            Event::VmShutdown { .. } => "vm_shutdown",
            Event::VmRevoke { .. } => "vm_revoke",
            Event::AttackStart { .. } => "attack_start",
            Event::AttackStop { .. } => "attack_stop",
        }
    }

    fn vm(&self) -> Option<&str> {
        match self {
            Event::VmRequest { .. } => None,
            Event::VmStart { vm }
            | Event::VmShutdown { vm }
            | Event::VmRevoke { vm }
            | Event::AttackStart { vm, .. }
            | Event::AttackStop { vm } => Some(vm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub tick: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Watermarks {
    /// Threshold vector for servers that do not set their own.
    #[serde(default = "default_threshold")]
    pub threshold: ResourceVector,
    /// Servers whose usage is below this in every component are drained.
    #[serde(default = "default_low")]
    pub low: ResourceVector,
}

fn default_threshold() -> ResourceVector {
    DEFAULT_THRESHOLD
}

fn default_low() -> ResourceVector {
    DEFAULT_LOW_WATERMARK
}

impl Default for Watermarks {
    fn default() -> Self {
        Watermarks { threshold: DEFAULT_THRESHOLD, low: DEFAULT_LOW_WATERMARK }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    /// Connections per interval for every running VM.
    #[serde(default = "default_base_rate")]
    pub base_rate: u64,
    #[serde(default = "default_fin_delay")]
    pub fin_delay_range: [f64; 2],
    #[serde(default = "default_rst_fraction")]
    pub rst_fraction: f64,
}

fn default_base_rate() -> u64 {
    DEFAULT_BASE_RATE
}

fn default_fin_delay() -> [f64; 2] {
    crate::traffic::DEFAULT_FIN_DELAY
}

fn default_rst_fraction() -> f64 {
    crate::traffic::DEFAULT_RST_FRACTION
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            base_rate: DEFAULT_BASE_RATE,
            fin_delay_range: crate::traffic::DEFAULT_FIN_DELAY,
            rst_fraction: crate::traffic::DEFAULT_RST_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub servers: Vec<ServerSpec>,
    #[serde(default)]
    pub vm_classes: ClassDefaults,
    #[serde(default)]
    pub events: Vec<TimedEvent>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub watermarks: Watermarks,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub overhead: ResourceVector,
    /// Relative half-width of the uniform usage jitter.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Wake sleeping servers when a request finds no feasible host.
    #[serde(default = "yes")]
    pub wake_on_reject: bool,
    pub duration: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

fn yes() -> bool {
    true
}

fn vm_name(n: u64) -> String {
    format!("vm-{n:04}")
}

impl Scenario {
    pub fn from_json(text: &str, path: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks every scenario invariant, naming the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Validation(m));
        if self.servers.is_empty() {
            return invalid("at least one server is required".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.servers {
            if s.id.is_empty() {
                return invalid("server ids must be non-empty".into());
            }
            if !ids.insert(s.id.as_str()) {
                return invalid(format!("duplicate server id {:?}", s.id));
            }
            if let Some(t) = &s.threshold {
                t.validate().map_err(|e| ScenarioError::Validation(format!("server {}: {e}", s.id)))?;
            }
        }
        for (name, v) in [
            ("watermarks.threshold", &self.watermarks.threshold),
            ("watermarks.low", &self.watermarks.low),
            ("overhead", &self.overhead),
        ] {
            v.validate().map_err(|e| ScenarioError::Validation(format!("{name}: {e}")))?;
        }
        for (class, v) in &self.vm_classes.0 {
            v.validate().map_err(|e| ScenarioError::Validation(format!("vm_classes.{class}: {e}")))?;
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return invalid(format!("jitter {} must lie in [0, 1)", self.jitter));
        }
        self.detector.validate().map_err(|e| ScenarioError::Validation(e.to_string()))?;
        let spec = TrafficSpec {
            fin_delay_range: self.traffic.fin_delay_range,
            rst_fraction: self.traffic.rst_fraction,
            interval_s: self.detector.interval_s,
            ..TrafficSpec::normal("check", self.traffic.base_rate, 0, 0, 0)
        };
        spec.validate().map_err(|e| ScenarioError::Validation(e.to_string()))?;

        // Replay id assignment to check every reference.
        let mut next = 1u64;
        let mut known = BTreeSet::new();
        let mut revoked = BTreeSet::new();
        for (i, te) in self.ordered_events().enumerate() {
            if te.tick >= self.duration {
                return invalid(format!("event {i} ({}) at tick {} is outside [0, {})", te.event.name(), te.tick, self.duration));
            }
            match &te.event {
                Event::VmRequest { class, count } => {
                    if *count == 0 {
                        return invalid(format!("event {i}: vm_request count must be positive"));
                    }
                    if !self.vm_classes.0.contains_key(class) {
                        return invalid(format!("event {i}: no default demand for class {class}"));
                    }
                    for _ in 0..*count {
                        known.insert(vm_name(next));
                        next += 1;
                    }
                }
                Event::AttackStart { multiplier, .. } if !(multiplier.is_finite() && *multiplier >= 1.0) => {
                    return invalid(format!("event {i}: attack multiplier {multiplier} must be >= 1"));
                }
                _ => {}
            }
            if let Some(vm) = te.event.vm() {
                if !known.contains(vm) {
                    return invalid(format!("event {i} ({}) at tick {} references unknown vm {vm:?}", te.event.name(), te.tick));
                }
                if revoked.contains(vm) {
                    return invalid(format!("event {i} ({}) references revoked vm {vm:?}", te.event.name()));
                }
                if matches!(te.event, Event::VmRevoke { .. }) {
                    revoked.insert(vm.to_string());
                }
            }
        }
        Ok(())
    }

    /// Events by tick, file order within a tick.
    fn ordered_events(&self) -> impl Iterator<Item = &TimedEvent> {
        let mut v: Vec<&TimedEvent> = self.events.iter().collect();
        v.sort_by_key(|e| e.tick);
        v.into_iter()
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    Scenario::from_json(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRow {
    pub tick: u64,
    pub server: String,
    pub power: PowerState,
    pub usage: ResourceVector,
    pub vms: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Running,
    Stopped,
    Rejected,
    Revoked,
}

/// Per-VM state at the end of a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSnapshot {
    pub tick: u64,
    pub vm: String,
    pub lifecycle: Lifecycle,
    pub host: Option<String>,
    pub observed: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub tick: u64,
    pub seq: u64,
    pub vm: String,
    pub class: HotspotClass,
    /// `first_start` or `restart`.
    pub mode: String,
    pub decision: PlacementDecision,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub woken: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRecord {
    pub tick: u64,
    pub seq: u64,
    pub vm: String,
    pub event: String,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub tick: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub plan: MigrationPlan,
    /// Target usage and threshold when the plan was made.
    pub target_usage_before: ResourceVector,
    pub target_threshold: ResourceVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerAction {
    Sleep,
    Wake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub tick: u64,
    pub seq: u64,
    pub server: String,
    pub action: PowerAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub tick: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub row: StatRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub tick: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub alarm: Alarm,
    pub action: ActionRecord,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub duration: u64,
    pub seed: u64,
    pub requests: u64,
    pub placements: u64,
    pub rejections: u64,
    pub restarts: u64,
    pub migrations: u64,
    pub consolidation_moves: u64,
    pub sleeps: u64,
    pub wakes: u64,
    pub alarms: u64,
    pub malicious_vms: Vec<String>,
    pub active_servers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub utilization: Vec<UtilizationRow>,
    pub vm_snapshots: Vec<VmSnapshot>,
    pub placements: Vec<PlacementRecord>,
    pub lifecycle: Vec<LifecycleRecord>,
    pub migrations: Vec<MigrationRecord>,
    pub power: Vec<PowerRecord>,
    pub detector: Vec<DetectorRecord>,
    pub alarms: Vec<AlarmRecord>,
    pub summary: Summary,
}

#[derive(Debug)]
struct VmRuntime {
    number: u64,
    lifecycle: Lifecycle,
    attack: Option<f64>,
    pending: Vec<PacketEvent>,
}

/// splitmix64 over the tuple, so each (vm, tick, lane) draws an independent
/// traffic stream from the run seed.
fn stream_seed(seed: u64, vm: u64, tick: u64, lane: u64) -> u64 {
    let mut z = seed
        ^ vm.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ tick.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ lane.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A simulation in progress.
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    cluster: Cluster,
    runtime: BTreeMap<String, VmRuntime>,
    monitor: FloodMonitor,
    rng: ChaCha8Rng,
    events: Vec<&'a TimedEvent>,
    next_event: usize,
    next_vm: u64,
    seq: u64,
    tick: u64,
    report: SimReport,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let servers = scenario
            .servers
            .iter()
            .map(|s| ServerState {
                id: s.id.clone(),
                usage: ResourceVector::ZERO,
                threshold: s.threshold.unwrap_or(scenario.watermarks.threshold),
                power: s.power,
                vms: BTreeSet::new(),
            })
            .collect();
        let mut cluster = Cluster::new(servers, Vec::new());
        cluster.overhead = scenario.overhead;
        cluster.recompute_usage();
        let monitor = FloodMonitor::new(scenario.detector.clone()).map_err(|e| ScenarioError::Validation(e.to_string()))?;
        let mut sim = Simulation {
            scenario,
            cluster,
            runtime: BTreeMap::new(),
            monitor,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            events: scenario.ordered_events().collect(),
            next_event: 0,
            next_vm: 1,
            seq: 0,
            tick: 0,
            report: SimReport::default(),
        };
        sim.snapshot(0);
        Ok(sim)
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn report(&self) -> &SimReport {
        &self.report
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        let tick = self.tick;
        self.apply_events(tick);
        self.sample_usage();
        self.detect(tick);
        self.rebalance(tick);
        self.consolidate(tick);
        self.tick += 1;
        self.snapshot(self.tick);
    }

    pub fn finish(mut self) -> SimReport {
        let s = &mut self.report.summary;
        s.duration = self.scenario.duration;
        s.seed = self.scenario.seed;
        s.malicious_vms = self.monitor.network().suspended().map(str::to_string).collect();
        // Suspended VMs that were later stopped or revoked are still malicious.
        for a in &self.report.alarms {
            if a.action.malicious && !s.malicious_vms.contains(&a.alarm.vm_id) {
                s.malicious_vms.push(a.alarm.vm_id.clone());
            }
        }
        s.malicious_vms.sort();
        s.active_servers = self.cluster.servers.iter().filter(|s| s.is_active()).map(|s| s.id.clone()).collect();
        self.report
    }

    fn apply_events(&mut self, tick: u64) {
        while let Some(te) = self.events.get(self.next_event).copied() {
            if te.tick != tick {
                break;
            }
            self.next_event += 1;
            match &te.event {
                Event::VmRequest { class, count } => {
                    for _ in 0..*count {
                        self.request(tick, *class);
                    }
                }
                Event::VmStart { vm } => self.restart(tick, vm),
                Event::VmShutdown { vm } => {
                    let applied = self.lifecycle_of(vm) == Some(Lifecycle::Running);
                    if applied {
                        self.detach(vm, Lifecycle::Stopped);
                    }
                    self.log_lifecycle(tick, vm, "vm_shutdown", applied);
                }
                Event::VmRevoke { vm } => {
                    let applied = !matches!(self.lifecycle_of(vm), None | Some(Lifecycle::Revoked));
                    if applied {
                        self.detach(vm, Lifecycle::Revoked);
                    }
                    self.log_lifecycle(tick, vm, "vm_revoke", applied);
                }
                Event::AttackStart { vm, multiplier } => {
                    let applied = self.set_attack(vm, Some(*multiplier));
                    self.log_lifecycle(tick, vm, "attack_start", applied);
                }
                Event::AttackStop { vm } => {
                    let applied = self.set_attack(vm, None);
                    self.log_lifecycle(tick, vm, "attack_stop", applied);
                }
            }
        }
    }

    fn lifecycle_of(&self, vm: &str) -> Option<Lifecycle> {
        self.runtime.get(vm).map(|r| r.lifecycle)
    }

    fn set_attack(&mut self, vm: &str, attack: Option<f64>) -> bool {
        match self.runtime.get_mut(vm) {
            Some(rt) if rt.lifecycle != Lifecycle::Revoked => {
                rt.attack = attack;
                true
            }
            _ => false,
        }
    }

    fn log_lifecycle(&mut self, tick: u64, vm: &str, event: &str, applied: bool) {
        let seq = self.next_seq();
        self.report.lifecycle.push(LifecycleRecord { tick, seq, vm: vm.to_string(), event: event.to_string(), applied });
    }

    /// Places with the given estimate, waking sleeping servers one at a time
    /// while nothing fits (if enabled).
    fn place_with_wake(&mut self, tick: u64, estimate: ResourceVector) -> (PlacementDecision, Vec<String>) {
        let weights = profile_weights(&estimate);
        let mut decision = place(&estimate, &weights, &self.cluster.servers);
        let mut woken = Vec::new();
        while decision.server().is_none() && self.scenario.wake_on_reject {
            let Some(id) = wake_server(&mut self.cluster.servers) else { break };
            self.cluster.recompute_usage();
            let seq = self.next_seq();
            self.report.power.push(PowerRecord { tick, seq, server: id.clone(), action: PowerAction::Wake });
            self.report.summary.wakes += 1;
            woken.push(id);
            decision = place(&estimate, &weights, &self.cluster.servers);
        }
        (decision, woken)
    }

    fn host(&mut self, vm: &str, server: &str, estimate: ResourceVector) {
        if let Some(s) = self.cluster.server_mut(server) {
            s.vms.insert(vm.to_string());
        }
        let rec = self.cluster.vm_mut(vm).expect("vm record exists");
        rec.host = Some(server.to_string());
        rec.observed = estimate;
        self.cluster.recompute_usage();
        self.monitor.register(vm);
        let rt = self.runtime.get_mut(vm).expect("runtime exists");
        rt.lifecycle = Lifecycle::Running;
    }

    fn request(&mut self, tick: u64, class: HotspotClass) {
        let number = self.next_vm;
        self.next_vm += 1;
        let id = vm_name(number);
        let estimate = estimate_demand_first_start(class, &self.cluster.vms, &self.scenario.vm_classes);
        self.cluster.vms.push(VmRecord::new(id.clone(), class, ResourceVector::ZERO));
        self.runtime
            .insert(id.clone(), VmRuntime { number, lifecycle: Lifecycle::Rejected, attack: None, pending: Vec::new() });
        self.report.summary.requests += 1;

        let (decision, woken) = self.place_with_wake(tick, estimate);
        match decision.server() {
            Some(server) => {
                let server = server.to_string();
                self.host(&id, &server, estimate);
                self.report.summary.placements += 1;
            }
            None => self.report.summary.rejections += 1,
        }
        let seq = self.next_seq();
        self.report.placements.push(PlacementRecord {
            tick,
            seq,
            vm: id,
            class,
            mode: "first_start".into(),
            decision,
            woken,
        });
    }

    fn restart(&mut self, tick: u64, vm: &str) {
        if !matches!(self.lifecycle_of(vm), Some(Lifecycle::Stopped | Lifecycle::Rejected)) {
            self.log_lifecycle(tick, vm, "vm_start", false);
            return;
        }
        let rec = self.cluster.vm(vm).expect("vm record exists").clone();
        let estimate = estimate_demand_restart(&rec, &self.cluster.vms, &self.scenario.vm_classes);
        let (decision, woken) = self.place_with_wake(tick, estimate);
        match decision.server() {
            Some(server) => {
                let server = server.to_string();
                self.host(vm, &server, estimate);
                self.report.summary.restarts += 1;
            }
            None => self.report.summary.rejections += 1,
        }
        let seq = self.next_seq();
        self.report.placements.push(PlacementRecord {
            tick,
            seq,
            vm: vm.to_string(),
            class: rec.hotspot_class,
            mode: "restart".into(),
            decision,
            woken,
        });
    }

    fn detach(&mut self, vm: &str, lifecycle: Lifecycle) {
        if let Some(rec) = self.cluster.vm_mut(vm) {
            if let Some(host) = rec.host.take() {
                if let Some(s) = self.cluster.server_mut(&host) {
                    s.vms.remove(vm);
                }
            }
        }
        self.cluster.recompute_usage();
        self.monitor.forget(vm);
        if let Some(rt) = self.runtime.get_mut(vm) {
            rt.lifecycle = lifecycle;
            rt.pending.clear();
            if lifecycle == Lifecycle::Revoked {
                rt.attack = None;
            }
        }
    }

    fn sample_usage(&mut self) {
        let jitter = self.scenario.jitter;
        for vm in self.cluster.vms.iter_mut() {
            if self.runtime[&vm.id].lifecycle != Lifecycle::Running {
                continue;
            }
            let base = self.scenario.vm_classes.get(vm.hotspot_class);
            let mut factor = || 1.0 + self.rng.random_range(-jitter..=jitter);
            let sample = ResourceVector::new(base.cpu * factor(), base.mem * factor(), base.bandwidth * factor());
            vm.record_sample(sample);
        }
        self.cluster.recompute_usage();
    }

    fn detect(&mut self, tick: u64) {
        let interval_s = self.scenario.detector.interval_s;
        let horizon = (tick + 1) * seconds_to_micros(interval_s);
        let running: Vec<String> = self
            .runtime
            .iter()
            .filter(|(_, rt)| rt.lifecycle == Lifecycle::Running)
            .map(|(id, _)| id.clone())
            .collect();
        for vm in running {
            let scale = self.monitor.network().traffic_scale(&vm);
            let rt = self.runtime.get_mut(&vm).expect("running vm");
            let mut traces = vec![std::mem::take(&mut rt.pending)];
            if scale > 0.0 {
                let base_rate = (self.scenario.traffic.base_rate as f64 * scale).round() as u64;
                let normal = TrafficSpec {
                    fin_delay_range: self.scenario.traffic.fin_delay_range,
                    rst_fraction: self.scenario.traffic.rst_fraction,
                    interval_s,
                    ..TrafficSpec::normal(vm.clone(), base_rate, tick, tick + 1, stream_seed(self.scenario.seed, rt.number, tick, 0))
                };
                traces.push(NormalTraffic::new(&normal).collect());
                // Multiplier m is the total SYN rate relative to normal, so the
                // unterminated surplus is base * (m - 1).
                if let Some(m) = rt.attack {
                    let surplus = (base_rate as f64 * (m - 1.0)).round() as u64;
                    let attack = TrafficSpec {
                        interval_s,
                        ..TrafficSpec::attack(vm.clone(), surplus, 1.0, tick, tick + 1, stream_seed(self.scenario.seed, rt.number, tick, 1))
                    };
                    traces.push(AttackTraffic::new(&attack).collect());
                }
            }
            let merged = merge_traces(traces).expect("generated traffic is time-ordered");
            let split = merged.partition_point(|e| e.ts_us < horizon);
            let mut binner = IntervalBinner::new(interval_s).expect("validated interval").with_window(tick, tick + 1).with_vm(&vm);
            for e in &merged[..split] {
                binner.push(e).expect("time-ordered");
            }
            rt.pending = merged[split..].to_vec();
            let interval = binner.finish().pop().unwrap_or_else(|| TrafficInterval::new(tick, vm.clone(), 0, 0));

            let out = self.monitor.observe(&interval).expect("vm registered with the monitor");
            let seq = self.next_seq();
            self.report.detector.push(DetectorRecord { tick, seq, row: out.row });
            if let (Some(alarm), Some(action)) = (out.alarm, out.action) {
                if action.malicious {
                    self.runtime.get_mut(&vm).expect("running vm").pending.clear();
                }
                let seq = self.next_seq();
                self.report.alarms.push(AlarmRecord { tick, seq, alarm, action });
                self.report.summary.alarms += 1;
            }
        }
    }

    fn rebalance(&mut self, tick: u64) {
        let Some(plan) = plan_migration(&self.cluster) else { return };
        self.apply_migration(tick, plan);
        self.report.summary.migrations += 1;
    }

    fn apply_migration(&mut self, tick: u64, plan: MigrationPlan) {
        let target = self.cluster.server(&plan.target).expect("plan target exists");
        let (target_usage_before, target_threshold) = (target.usage, target.threshold);
        self.cluster.relocate(&plan.victim, &plan.source, &plan.target);
        self.cluster.recompute_usage();
        let seq = self.next_seq();
        self.report.migrations.push(MigrationRecord { tick, seq, plan, target_usage_before, target_threshold });
    }

    fn consolidate(&mut self, tick: u64) {
        let out = consolidate(&self.cluster, &self.scenario.watermarks.low, &self.scenario.vm_classes);
        if out.is_empty() {
            return;
        }
        for plan in out.plans {
            debug_assert_eq!(plan.kind, MigrationKind::Consolidate);
            self.apply_migration(tick, plan);
            self.report.summary.consolidation_moves += 1;
        }
        for id in out.sleep {
            let server = self.cluster.server_mut(&id).expect("sleeping server exists");
            debug_assert!(server.vms.is_empty());
            server.power = PowerState::Asleep;
            let seq = self.next_seq();
            self.report.power.push(PowerRecord { tick, seq, server: id, action: PowerAction::Sleep });
            self.report.summary.sleeps += 1;
        }
        self.cluster.recompute_usage();
    }

    fn snapshot(&mut self, tick: u64) {
        for s in &self.cluster.servers {
            self.report.utilization.push(UtilizationRow {
                tick,
                server: s.id.clone(),
                power: s.power,
                usage: s.usage,
                vms: s.vms.iter().cloned().collect(),
            });
        }
        for vm in &self.cluster.vms {
            self.report.vm_snapshots.push(VmSnapshot {
                tick,
                vm: vm.id.clone(),
                lifecycle: self.runtime[&vm.id].lifecycle,
                host: vm.host.clone(),
                observed: vm.observed,
            });
        }
    }
}

/// Runs the scenario to completion.
pub fn run(scenario: &Scenario) -> Result<SimReport, ScenarioError> {
    let mut sim = Simulation::new(scenario)?;
    for _ in 0..scenario.duration {
        sim.step();
    }
    Ok(sim.finish())
}

pub const REPORT_FILES: [&str; 6] =
    ["utilization.csv", "placements.json", "migrations.json", "detector.csv", "alarms.json", "summary.json"];

pub const UTILIZATION_HEADER: &str = "tick,server,power,cpu,mem,bw,vm_count,vms";

impl SimReport {
    pub fn utilization_csv(&self) -> String {
        let mut s = format!("{UTILIZATION_HEADER}\n");
        for r in &self.utilization {
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{},{}\n",
                r.tick,
                r.server,
                r.power.as_str(),
                r.usage.cpu,
                r.usage.mem,
                r.usage.bandwidth,
                r.vms.len(),
                r.vms.join(";")
            ));
        }
        s
    }

    pub fn detector_csv(&self) -> String {
        let mut s = format!("tick,{STAT_LOG_HEADER}\n");
        for r in &self.detector {
            s.push_str(&format!("{},{}\n", r.tick, r.row.to_csv_line()));
        }
        s
    }

    fn placements_json(&self) -> serde_json::Value {
        serde_json::json!({ "placements": self.placements, "lifecycle": self.lifecycle })
    }

    fn migrations_json(&self) -> serde_json::Value {
        serde_json::json!({ "migrations": self.migrations, "power": self.power })
    }

    /// The six report files as `(name, contents)`.
    pub fn render(&self) -> Vec<(&'static str, String)> {
        let json = |v: &serde_json::Value| {
            let mut s = serde_json::to_string_pretty(v).expect("report serializes");
            s.push('\n');
            s
        };
        vec![
            (REPORT_FILES[0], self.utilization_csv()),
            (REPORT_FILES[1], json(&self.placements_json())),
            (REPORT_FILES[2], json(&self.migrations_json())),
            (REPORT_FILES[3], self.detector_csv()),
            (REPORT_FILES[4], json(&serde_json::to_value(&self.alarms).expect("alarms serialize"))),
            (REPORT_FILES[5], json(&serde_json::to_value(&self.summary).expect("summary serializes"))),
        ]
    }
}

/// Writes the six report files into `outdir`, creating it if needed.
pub fn emit_reports(report: &SimReport, outdir: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let outdir = outdir.as_ref();
    fs::create_dir_all(outdir).map_err(|e| ScenarioError::io(outdir, e))?;
    for (name, contents) in report.render() {
        let path = outdir.join(name);
        fs::write(&path, contents).map_err(|e| ScenarioError::io(&path, e))?;
    }
    Ok(())
}
