//! Deterministic inputs for the criterion benches.

use vmshield::cluster::{Cluster, HotspotClass, ServerState, VmRecord};
use vmshield::sim::Scenario;
use vmshield::{ResourceVector, TrafficInterval};

/// `n` active servers with staggered usage under an 80% threshold.
pub fn servers(n: usize) -> Vec<ServerState> {
    (0..n)
        .map(|i| {
            let f = (i * 37 % 61) as f64;
            ServerState::new(format!("s{i:04}"), ResourceVector::new(10.0 + f, 5.0 + f * 0.8, 20.0 + f * 0.5), ResourceVector::splat(80.0))
        })
        .collect()
}

/// A cluster of `n` servers with `per_server` VMs each; server 0 is pushed
/// over its threshold so a migration is always possible.
pub fn overloaded_cluster(n: usize, per_server: usize) -> Cluster {
    let mut servers = servers(n);
    let mut vms = Vec::new();
    for (i, s) in servers.iter_mut().enumerate() {
        for j in 0..per_server {
            let load = if i == 0 { 30.0 } else { 3.0 + (j % 4) as f64 };
            let id = format!("v{i:04}-{j:02}");
            let mut vm = VmRecord::new(id.clone(), HotspotClass::ALL[j % 3], ResourceVector::new(load, load * 0.7, load * 0.4));
            vm.host = Some(s.id.clone());
            s.vms.insert(id);
            vms.push(vm);
        }
    }
    let mut cluster = Cluster::new(servers, vms);
    cluster.recompute_usage();
    cluster
}

/// `n` intervals for each of `vms` VMs, with an attack on the first one
/// starting halfway through.
pub fn binned_trace(vms: usize, n: u64) -> Vec<TrafficInterval> {
    let mut out = Vec::with_capacity(vms * n as usize);
    for v in 0..vms {
        for i in 0..n {
            let syn = if v == 0 && i >= n / 2 { 1_500 } else { 1_000 };
            out.push(TrafficInterval::new(i, format!("vm-{v:03}"), syn, 1_000));
        }
    }
    out
}

pub fn small_scenario(duration: u64) -> Scenario {
    let json = format!(
        r#"{{
            "servers": [{{"id": "A"}}, {{"id": "B"}}, {{"id": "C"}}],
            "vm_classes": {{
                "cpu-intensive": {{"cpu": 12, "mem": 5, "bw": 3}},
                "memory-intensive": {{"cpu": 4, "mem": 15, "bw": 4}},
                "bandwidth-intensive": {{"cpu": 3, "mem": 5, "bw": 12}}
            }},
            "events": [
                {{"tick": 0, "type": "vm_request", "class": "cpu-intensive", "count": 5}},
                {{"tick": 0, "type": "vm_request", "class": "memory-intensive", "count": 5}},
                {{"tick": 1, "type": "attack_start", "vm": "vm-0002", "multiplier": 2.0}}
            ],
            "detector": {{"policy": "throttle", "warmup_intervals": 2}},
            "duration": {duration},
            "seed": 42
        }}"#
    );
    Scenario::from_json(&json, "bench").expect("bench scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use vmshield::plan_migration;

    #[test]
    fn fixtures_are_usable() {
        assert!(plan_migration(&overloaded_cluster(8, 4)).is_some());
        assert_eq!(binned_trace(3, 10).len(), 30);
        assert_eq!(small_scenario(5).duration, 5);
    }
}
