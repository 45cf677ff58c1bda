//! Placement, restart placement, overload-driven migration and consolidation.
//!
//! Every function here is a pure map from a cluster snapshot to a decision.
//! Applying decisions is the simulator's job.
//!
//! Candidate servers must satisfy `usage + demand < threshold` componentwise.
//! Among candidates, the one with the smallest weighted score of its current
//! usage wins, ties going to the lexicographically smallest server id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ahp::profile_weights;
use crate::cluster::{Cluster, HotspotClass, PowerState, ServerState, VmRecord};
use crate::error::SchedError;
use crate::resource::{ResourceVector, WeightVector};

pub const NO_FEASIBLE_SERVER: &str = "no feasible server";

/// Default first-start demand per hotspot class, used when no VM of the
/// class has been observed yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDefaults(pub BTreeMap<HotspotClass, ResourceVector>);

impl ClassDefaults {
    pub fn get(&self, class: HotspotClass) -> ResourceVector {
        self.0.get(&class).copied().unwrap_or_default()
    }
}

impl Default for ClassDefaults {
    fn default() -> Self {
        ClassDefaults(BTreeMap::from([
            (HotspotClass::CpuIntensive, ResourceVector::new(50.0, 20.0, 10.0)),
            (HotspotClass::MemoryIntensive, ResourceVector::new(20.0, 60.0, 20.0)),
            (HotspotClass::BandwidthIntensive, ResourceVector::new(10.0, 20.0, 50.0)),
        ]))
    }
}

/// Mean observed usage of every sampled VM of `class`, or the class default.
pub fn estimate_demand_first_start(class: HotspotClass, db: &[VmRecord], defaults: &ClassDefaults) -> ResourceVector {
    ResourceVector::mean(
        db.iter()
            .filter(|vm| vm.hotspot_class == class && !vm.history.is_empty())
            .map(|vm| &vm.observed),
    )
    .unwrap_or_else(|| defaults.get(class))
}

/// Mean of the VM's own history, falling back to the first-start estimate.
pub fn estimate_demand_restart(vm: &VmRecord, db: &[VmRecord], defaults: &ClassDefaults) -> ResourceVector {
    ResourceVector::mean(&vm.history).unwrap_or_else(|| estimate_demand_first_start(vm.hotspot_class, db, defaults))
}

fn feasible(server: &ServerState, demand: &ResourceVector) -> bool {
    server.is_active() && (server.usage + *demand).strictly_less(&server.threshold)
}

/// Ids of active servers that can take `demand`, in input order.
pub fn filter_candidates<'a>(demand: &ResourceVector, servers: &'a [ServerState]) -> Vec<&'a str> {
    servers.iter().filter(|s| feasible(s, demand)).map(|s| s.id.as_str()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Server(String),
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDecision {
    pub demand_estimate: ResourceVector,
    pub weights: WeightVector,
    /// Score of every feasible candidate.
    pub scores: BTreeMap<String, f64>,
    pub chosen: Choice,
}

impl PlacementDecision {
    pub fn server(&self) -> Option<&str> {
        match &self.chosen {
            Choice::Server(id) => Some(id),
            Choice::Rejected(_) => None,
        }
    }
}

/// `(score, id)` ascending.
fn by_score_then_id(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

pub fn place(vm_demand: &ResourceVector, weights: &WeightVector, servers: &[ServerState]) -> PlacementDecision {
    let mut scored: Vec<(f64, &str)> = servers
        .iter()
        .filter(|s| feasible(s, vm_demand))
        .map(|s| (weights.score(&s.usage), s.id.as_str()))
        .collect();
    scored.sort_by(by_score_then_id);
    let chosen = match scored.first() {
        Some((_, id)) => Choice::Server(id.to_string()),
        None => Choice::Rejected(NO_FEASIBLE_SERVER.to_string()),
    };
    PlacementDecision {
        demand_estimate: *vm_demand,
        weights: *weights,
        scores: scored.into_iter().map(|(s, id)| (id.to_string(), s)).collect(),
        chosen,
    }
}

/// Any usage component at or above its threshold.
pub fn detect_overload(server: &ServerState) -> bool {
    server.is_active() && server.usage.any_at_or_above(&server.threshold)
}

fn hosted<'a>(server: &ServerState, vms: &'a [VmRecord]) -> Result<Vec<&'a VmRecord>, SchedError> {
    if server.vms.is_empty() {
        return Err(SchedError::EmptyServer(server.id.clone()));
    }
    server
        .vms
        .iter()
        .map(|id| vms.iter().find(|v| &v.id == id).ok_or_else(|| SchedError::UnknownVm(id.clone())))
        .collect()
}

/// Mean observed usage of the VMs hosted on `server`.
pub fn avg_vm_usage(server: &ServerState, vms: &[VmRecord]) -> Result<ResourceVector, SchedError> {
    let hosted = hosted(server, vms)?;
    Ok(ResourceVector::mean(hosted.iter().map(|v| &v.observed)).expect("non-empty"))
}

/// The hosted VM closest (Euclidean) to `m3`; ties go to the smallest id.
pub fn select_victim(server: &ServerState, m3: &ResourceVector, vms: &[VmRecord]) -> Result<String, SchedError> {
    let hosted = hosted(server, vms)?;
    let best = hosted
        .iter()
        .map(|v| (v.observed.distance(m3), v.id.as_str()))
        .min_by(by_score_then_id)
        .expect("non-empty");
    Ok(best.1.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationKind {
    /// Relieves an overloaded server. Always satisfies
    /// `target_score < source_post_score`.
    Rebalance,
    /// Drains a lightly loaded server before it sleeps. No score ordering is
    /// implied.
    Consolidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub kind: MigrationKind,
    pub source: String,
    pub victim: String,
    pub target: String,
    /// Estimated demand of the migrating VM.
    pub estimate: ResourceVector,
    pub weights: WeightVector,
    pub source_post_score: f64,
    pub target_score: f64,
}

/// One rebalancing move for the most loaded overloaded server, or `None`.
///
/// The source is the overloaded server (with at least one VM) of highest
/// uniform-weight score. The migrant is sized as the mean hosted VM `m3`,
/// weights come from the `m3` profile, and the source is re-scored as if
/// `m3` had already left. The best-scoring feasible target is accepted only
/// if it scores strictly below that.
pub fn plan_migration(cluster: &Cluster) -> Option<MigrationPlan> {
    let uniform = WeightVector::uniform();
    let source = cluster
        .servers
        .iter()
        .filter(|s| detect_overload(s) && !s.vms.is_empty())
        .map(|s| (uniform.score(&s.usage), s))
        // Highest score first; among equal scores the smallest id.
        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.id.cmp(&a.1.id)))?
        .1;

    let m3 = avg_vm_usage(source, &cluster.vms).ok()?;
    let weights = profile_weights(&m3);
    let source_post_score = weights.score(&source.usage.saturating_sub(m3));

    let mut scored: Vec<(f64, &str)> = cluster
        .servers
        .iter()
        .filter(|s| s.id != source.id && feasible(s, &m3))
        .map(|s| (weights.score(&s.usage), s.id.as_str()))
        .collect();
    scored.sort_by(by_score_then_id);

    let &(target_score, target) = scored.iter().find(|(score, _)| *score < source_post_score)?;
    let victim = select_victim(source, &m3, &cluster.vms).ok()?;
    Some(MigrationPlan {
        kind: MigrationKind::Rebalance,
        source: source.id.clone(),
        victim,
        target: target.to_string(),
        estimate: m3,
        weights,
        source_post_score,
        target_score,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Consolidation {
    pub plans: Vec<MigrationPlan>,
    pub sleep: Vec<String>,
}

impl Consolidation {
    pub fn is_empty(&self) -> bool {
        self.plans.is_empty() && self.sleep.is_empty()
    }
}

/// Drains servers whose usage sits below `low_watermark` in every component
/// onto the remaining active servers, then puts them to sleep.
///
/// Servers are tried least-loaded first (uniform score, then id). A server is
/// drained only if every hosted VM, in id order, can be placed elsewhere
/// using its restart estimate, and the receiving server stays below its
/// threshold once the VM's observed load lands. At least one server is
/// always left active.
pub fn consolidate(cluster: &Cluster, low_watermark: &ResourceVector, defaults: &ClassDefaults) -> Consolidation {
    let uniform = WeightVector::uniform();
    let mut work = cluster.clone();
    let mut out = Consolidation::default();

    loop {
        let active = work.servers.iter().filter(|s| s.is_active()).count();
        if active < 2 {
            break;
        }
        let mut eligible: Vec<(f64, &str)> = work
            .servers
            .iter()
            .filter(|s| s.is_active() && s.usage.strictly_less(low_watermark))
            .map(|s| (uniform.score(&s.usage), s.id.as_str()))
            .collect();
        eligible.sort_by(by_score_then_id);
        let eligible: Vec<String> = eligible.into_iter().map(|(_, id)| id.to_string()).collect();

        let drained = eligible.iter().find_map(|sid| try_drain(&work, sid, defaults).map(|r| (sid, r)));
        let Some((sid, (next, plans))) = drained else { break };
        work = next;
        let server = work.server_mut(sid).expect("eligible server exists");
        server.power = PowerState::Asleep;
        server.usage = ResourceVector::ZERO;
        out.plans.extend(plans);
        out.sleep.push(sid.clone());
    }
    out
}

fn try_drain(work: &Cluster, sid: &str, defaults: &ClassDefaults) -> Option<(Cluster, Vec<MigrationPlan>)> {
    let mut trial = work.clone();
    let mut plans = Vec::new();
    let vm_ids: Vec<String> = trial.server(sid)?.vms.iter().cloned().collect();
    for vm_id in vm_ids {
        let vm = trial.vm(&vm_id)?.clone();
        let estimate = estimate_demand_restart(&vm, &trial.vms, defaults);
        let weights = profile_weights(&estimate);
        let others: Vec<ServerState> = trial.servers.iter().filter(|s| s.id != sid).cloned().collect();
        let decision = place(&estimate, &weights, &others);
        let target = decision.server()?.to_string();
        let target_score = decision.scores[&target];

        let tgt = trial.server_mut(&target)?;
        tgt.usage = tgt.usage + vm.observed;
        if detect_overload(tgt) {
            return None;
        }
        let src = trial.server_mut(sid)?;
        src.usage = src.usage.saturating_sub(vm.observed);
        let source_post_score = weights.score(&src.usage);
        trial.relocate(&vm_id, sid, &target);
        plans.push(MigrationPlan {
            kind: MigrationKind::Consolidate,
            source: sid.to_string(),
            victim: vm_id,
            target,
            estimate,
            weights,
            source_post_score,
            target_score,
        });
    }
    Some((trial, plans))
}

/// Wakes the asleep server with the smallest id.
pub fn wake_server(servers: &mut [ServerState]) -> Option<String> {
    let server = servers.iter_mut().filter(|s| !s.is_active()).min_by(|a, b| a.id.cmp(&b.id))?;
    server.power = PowerState::Active;
    Some(server.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::DEFAULT_THRESHOLD;

    fn rv(c: f64, m: f64, b: f64) -> ResourceVector {
        ResourceVector::new(c, m, b)
    }

    fn server(id: &str, usage: ResourceVector) -> ServerState {
        ServerState::new(id, usage, DEFAULT_THRESHOLD)
    }

    fn sampled(id: &str, class: HotspotClass, samples: &[ResourceVector]) -> VmRecord {
        let mut vm = VmRecord::new(id, class, ResourceVector::ZERO);
        for s in samples {
            vm.record_sample(*s);
        }
        vm
    }

    fn close(a: ResourceVector, b: ResourceVector) -> bool {
        a.distance(&b) < 1e-9
    }

    #[test]
    fn first_start_estimates() {
        let defaults = ClassDefaults::default();
        let mem = HotspotClass::MemoryIntensive;
        let db = vec![sampled("a", mem, &[rv(20.0, 60.0, 20.0)]), sampled("b", mem, &[rv(20.0, 60.0, 20.0)])];
        assert!(close(estimate_demand_first_start(mem, &db, &defaults), rv(20.0, 60.0, 20.0)));

        assert_eq!(
            estimate_demand_first_start(HotspotClass::CpuIntensive, &[], &defaults),
            rv(50.0, 20.0, 10.0)
        );

        let db = vec![sampled("a", mem, &[rv(10.0, 50.0, 20.0)]), sampled("b", mem, &[rv(30.0, 70.0, 20.0)])];
        assert!(close(estimate_demand_first_start(mem, &db, &defaults), rv(20.0, 60.0, 20.0)));
    }

    #[test]
    fn restart_estimates() {
        let defaults = ClassDefaults::default();
        let cpu = HotspotClass::CpuIntensive;
        let vm = sampled("v", cpu, &[rv(40.0, 20.0, 10.0)]);
        assert!(close(estimate_demand_restart(&vm, &[], &defaults), rv(40.0, 20.0, 10.0)));
        let vm = sampled("v", cpu, &[rv(30.0, 10.0, 10.0), rv(50.0, 30.0, 10.0)]);
        assert!(close(estimate_demand_restart(&vm, &[], &defaults), rv(40.0, 20.0, 10.0)));
        let vm = VmRecord::new("v", cpu, ResourceVector::ZERO);
        assert_eq!(estimate_demand_restart(&vm, &[], &defaults), rv(50.0, 20.0, 10.0));
    }

    #[test]
    fn candidate_filtering() {
        let s = vec![server("A", rv(50.0, 40.0, 30.0))];
        assert_eq!(filter_candidates(&rv(20.0, 30.0, 40.0), &s), vec!["A"]);
        assert!(filter_candidates(&rv(31.0, 30.0, 40.0), &s).is_empty());
        let asleep = vec![ServerState::asleep("Z", DEFAULT_THRESHOLD)];
        assert!(filter_candidates(&ResourceVector::ZERO, &asleep).is_empty());
    }

    #[test]
    fn placement_reproduces_reference_scores() {
        let w = WeightVector::new(0.2, 0.6, 0.2).unwrap();
        let servers = vec![
            ServerState::new("A", rv(70.4, 40.0, 60.0), ResourceVector::splat(100.0)),
            ServerState::new("B", rv(50.61, 30.0, 40.0), ResourceVector::splat(100.0)),
            ServerState::new("C", rv(71.44, 30.0, 50.0), ResourceVector::splat(100.0)),
        ];
        let d = place(&rv(20.0, 50.0, 20.0), &w, &servers);
        assert!((d.scores["A"] - 50.08).abs() < 1e-9);
        assert!((d.scores["B"] - 36.122).abs() < 1e-9);
        assert!((d.scores["C"] - 42.288).abs() < 1e-9);
        assert_eq!(d.server(), Some("B"));
    }

    #[test]
    fn placement_ties_and_rejection() {
        let w = WeightVector::uniform();
        let servers = vec![server("s2", rv(10.0, 10.0, 10.0)), server("s1", rv(10.0, 10.0, 10.0))];
        assert_eq!(place(&rv(1.0, 1.0, 1.0), &w, &servers).server(), Some("s1"));
        let d = place(&rv(75.0, 1.0, 1.0), &w, &servers);
        assert_eq!(d.chosen, Choice::Rejected(NO_FEASIBLE_SERVER.into()));
        assert!(d.scores.is_empty());
    }

    #[test]
    fn overload_detection() {
        assert!(detect_overload(&server("A", rv(90.0, 60.0, 60.0))));
        assert!(!detect_overload(&server("A", rv(79.0, 79.0, 79.0))));
        assert!(detect_overload(&server("A", rv(80.0, 0.0, 0.0))));
    }

    fn three_vm_source() -> (ServerState, Vec<VmRecord>) {
        let cpu = HotspotClass::CpuIntensive;
        let vms = vec![
            VmRecord::new("v1", cpu, rv(30.0, 20.0, 10.0)),
            VmRecord::new("v2", cpu, rv(40.0, 30.0, 20.0)),
            VmRecord::new("v3", cpu, rv(20.0, 10.0, 30.0)),
        ];
        (server("P1", rv(90.0, 60.0, 60.0)).with_vms(["v1", "v2", "v3"]), vms)
    }

    #[test]
    fn average_vm_usage() {
        let (p1, vms) = three_vm_source();
        assert!(close(avg_vm_usage(&p1, &vms).unwrap(), rv(30.0, 20.0, 20.0)));
        let single = server("S", rv(25.0, 25.0, 25.0)).with_vms(["x"]);
        let x = vec![VmRecord::new("x", HotspotClass::CpuIntensive, rv(25.0, 25.0, 25.0))];
        assert_eq!(avg_vm_usage(&single, &x).unwrap(), rv(25.0, 25.0, 25.0));
        assert_eq!(avg_vm_usage(&server("E", ResourceVector::ZERO), &[]), Err(SchedError::EmptyServer("E".into())));
    }

    #[test]
    fn victim_selection() {
        let (p1, vms) = three_vm_source();
        // Distances to (30,20,20): v1 10, v2 14.14, v3 17.32.
        assert_eq!(select_victim(&p1, &rv(30.0, 20.0, 20.0), &vms).unwrap(), "v1");
        let cpu = HotspotClass::CpuIntensive;
        let pair = vec![VmRecord::new("b", cpu, rv(0.0, 0.0, 2.0)), VmRecord::new("a", cpu, rv(0.0, 0.0, 0.0))];
        let s = server("S", ResourceVector::ZERO).with_vms(["a", "b"]);
        assert_eq!(select_victim(&s, &rv(0.0, 0.0, 1.0), &pair).unwrap(), "a");
        assert!(select_victim(&server("E", ResourceVector::ZERO), &ResourceVector::ZERO, &[]).is_err());
    }

    #[test]
    fn migration_example() {
        let (p1, vms) = three_vm_source();
        let cluster = Cluster::new(vec![p1, server("P2", rv(20.0, 20.0, 20.0))], vms);
        let plan = plan_migration(&cluster).expect("plan");
        assert_eq!((plan.source.as_str(), plan.victim.as_str(), plan.target.as_str()), ("P1", "v1", "P2"));
        assert!((plan.source_post_score - 340.0 / 7.0).abs() < 1e-9);
        assert!((plan.target_score - 20.0).abs() < 1e-9);
        let w = plan.weights.to_array();
        assert!((w[0] - 3.0 / 7.0).abs() < 1e-9 && (w[1] - 2.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn migration_none_cases() {
        let cluster = Cluster::new(vec![server("A", rv(10.0, 10.0, 10.0))], vec![]);
        let before = cluster.clone();
        assert!(plan_migration(&cluster).is_none());
        assert_eq!(cluster, before);

        let (p1, vms) = three_vm_source();
        assert!(plan_migration(&Cluster::new(vec![p1], vms)).is_none());
    }

    #[test]
    fn consolidate_empty_server_sleeps() {
        let cluster = Cluster::new(
            vec![server("A", rv(30.0, 30.0, 30.0)).with_vms(["v"]), server("B", ResourceVector::ZERO)],
            vec![VmRecord::new("v", HotspotClass::CpuIntensive, rv(30.0, 30.0, 30.0))],
        );
        let out = consolidate(&cluster, &ResourceVector::splat(20.0), &ClassDefaults::default());
        assert!(out.plans.is_empty());
        assert_eq!(out.sleep, vec!["B"]);
    }

    #[test]
    fn consolidate_drains_single_vm() {
        let vm = sampled("v", HotspotClass::CpuIntensive, &[rv(10.0, 5.0, 5.0)]);
        let cluster = Cluster::new(
            vec![server("A", rv(10.0, 5.0, 5.0)).with_vms(["v"]), server("B", rv(50.0, 50.0, 50.0)).with_vms(["w"])],
            vec![vm, sampled("w", HotspotClass::CpuIntensive, &[rv(50.0, 50.0, 50.0)])],
        );
        let out = consolidate(&cluster, &ResourceVector::splat(20.0), &ClassDefaults::default());
        // (50,50,50) + (10,5,5) < (80,80,80) holds, so v moves to B.
        assert_eq!(out.plans.len(), 1);
        assert_eq!((out.plans[0].victim.as_str(), out.plans[0].target.as_str()), ("v", "B"));
        assert_eq!(out.sleep, vec!["A"]);
    }

    #[test]
    fn consolidate_noop_above_watermark() {
        let cluster = Cluster::new(vec![server("A", rv(30.0, 30.0, 30.0)), server("B", rv(40.0, 30.0, 30.0))], vec![]);
        assert!(consolidate(&cluster, &ResourceVector::splat(20.0), &ClassDefaults::default()).is_empty());
    }

    #[test]
    fn consolidate_keeps_one_server() {
        let cluster = Cluster::new(vec![server("A", ResourceVector::ZERO), server("B", ResourceVector::ZERO)], vec![]);
        let out = consolidate(&cluster, &ResourceVector::splat(20.0), &ClassDefaults::default());
        assert_eq!(out.sleep, vec!["A"]);
    }

    #[test]
    fn consolidate_skips_when_vm_does_not_fit() {
        let cluster = Cluster::new(
            vec![server("A", rv(15.0, 5.0, 5.0)).with_vms(["v"]), server("B", rv(70.0, 50.0, 50.0)).with_vms(["w"])],
            vec![
                sampled("v", HotspotClass::CpuIntensive, &[rv(15.0, 5.0, 5.0)]),
                sampled("w", HotspotClass::CpuIntensive, &[rv(70.0, 50.0, 50.0)]),
            ],
        );
        assert!(consolidate(&cluster, &ResourceVector::splat(20.0), &ClassDefaults::default()).is_empty());
    }

    #[test]
    fn waking() {
        let mut servers = vec![
            ServerState::asleep("s9", DEFAULT_THRESHOLD),
            server("s1", ResourceVector::ZERO),
            ServerState::asleep("s3", DEFAULT_THRESHOLD),
        ];
        assert_eq!(wake_server(&mut servers).as_deref(), Some("s3"));
        assert!(servers[2].is_active());
        assert_eq!(wake_server(&mut servers).as_deref(), Some("s9"));
        assert_eq!(wake_server(&mut servers), None);
    }
}
