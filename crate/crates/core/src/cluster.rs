//! Server and VM inventory shared by the scheduler and the simulator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::resource::ResourceVector;

/// Default per-server threshold vector when none is given.
pub const DEFAULT_THRESHOLD: ResourceVector = ResourceVector::splat(80.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HotspotClass {
    #[serde(rename = "cpu-intensive", alias = "cpu")]
    CpuIntensive,
    #[serde(rename = "memory-intensive", alias = "mem-intensive", alias = "mem")]
    MemoryIntensive,
    #[serde(rename = "bandwidth-intensive", alias = "bw-intensive", alias = "bw")]
    BandwidthIntensive,
}

impl HotspotClass {
    pub const ALL: [HotspotClass; 3] =
        [HotspotClass::CpuIntensive, HotspotClass::MemoryIntensive, HotspotClass::BandwidthIntensive];

    pub fn as_str(&self) -> &'static str {
        match self {
            HotspotClass::CpuIntensive => "cpu-intensive",
            HotspotClass::MemoryIntensive => "memory-intensive",
            HotspotClass::BandwidthIntensive => "bandwidth-intensive",
        }
    }

}

impl fmt::Display for HotspotClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerState {
    #[default]
    Active,
    Asleep,
}

impl PowerState {
    pub fn as_str(&self) -> &'static str {
        match self {
            PowerState::Active => "active",
            PowerState::Asleep => "asleep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub id: String,
    #[serde(default)]
    pub usage: ResourceVector,
    #[serde(default = "default_threshold")]
    pub threshold: ResourceVector,
    #[serde(default)]
    pub power: PowerState,
    #[serde(default)]
    pub vms: BTreeSet<String>,
}

fn default_threshold() -> ResourceVector {
    DEFAULT_THRESHOLD
}

impl ServerState {
    pub fn new(id: impl Into<String>, usage: ResourceVector, threshold: ResourceVector) -> Self {
        ServerState { id: id.into(), usage, threshold, power: PowerState::Active, vms: BTreeSet::new() }
    }

    pub fn asleep(id: impl Into<String>, threshold: ResourceVector) -> Self {
        ServerState { power: PowerState::Asleep, ..ServerState::new(id, ResourceVector::ZERO, threshold) }
    }

    pub fn with_vms<I, S>(mut self, vms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.vms = vms.into_iter().map(Into::into).collect();
        self
    }

    pub fn is_active(&self) -> bool {
        self.power == PowerState::Active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmRecord {
    pub id: String,
    #[serde(rename = "class")]
    pub hotspot_class: HotspotClass,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<ResourceVector>,
    #[serde(default)]
    pub observed: ResourceVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
}

impl VmRecord {
    pub fn new(id: impl Into<String>, class: HotspotClass, observed: ResourceVector) -> Self {
        VmRecord { id: id.into(), hotspot_class: class, history: Vec::new(), observed, host: None }
    }

    /// Records a usage sample; history is append-only.
    pub fn record_sample(&mut self, sample: ResourceVector) {
        self.history.push(sample);
        self.observed = sample;
    }
}

/// A snapshot of the datacenter, matching the `place` input file:
/// `{"servers": [...], "vms": [...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cluster {
    pub servers: Vec<ServerState>,
    #[serde(default)]
    pub vms: Vec<VmRecord>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub overhead: ResourceVector,
}

fn is_zero(v: &ResourceVector) -> bool {
    *v == ResourceVector::ZERO
}

impl Cluster {
    pub fn new(servers: Vec<ServerState>, vms: Vec<VmRecord>) -> Self {
        Cluster { servers, vms, overhead: ResourceVector::ZERO }
    }

    pub fn server(&self, id: &str) -> Option<&ServerState> {
        self.servers.iter().find(|s| s.id == id)
    }

    pub fn server_mut(&mut self, id: &str) -> Option<&mut ServerState> {
        self.servers.iter_mut().find(|s| s.id == id)
    }

    pub fn vm(&self, id: &str) -> Option<&VmRecord> {
        self.vms.iter().find(|v| v.id == id)
    }

    pub fn vm_mut(&mut self, id: &str) -> Option<&mut VmRecord> {
        self.vms.iter_mut().find(|v| v.id == id)
    }

    /// Usage implied by a server's hosted VMs plus hypervisor overhead;
    /// asleep servers are always zero.
    pub fn computed_usage(&self, server: &ServerState) -> ResourceVector {
        if !server.is_active() {
            return ResourceVector::ZERO;
        }
        server
            .vms
            .iter()
            .filter_map(|id| self.vm(id))
            .fold(self.overhead, |acc, vm| acc + vm.observed)
    }

    /// Rewrites every server's usage from its hosted VMs.
    pub fn recompute_usage(&mut self) {
        let usages: Vec<_> = self.servers.iter().map(|s| self.computed_usage(s)).collect();
        for (s, u) in self.servers.iter_mut().zip(usages) {
            s.usage = u;
        }
    }

    /// Moves a VM between servers without touching usage figures.
    pub fn relocate(&mut self, vm: &str, from: &str, to: &str) {
        if let Some(s) = self.server_mut(from) {
            s.vms.remove(vm);
        }
        if let Some(s) = self.server_mut(to) {
            s.vms.insert(vm.to_string());
        }
        if let Some(v) = self.vm_mut(vm) {
            v.host = Some(to.to_string());
        }
    }
}
