//! Datacenter simulation with AHP-weighted VM placement and migration,
//! consolidation, and per-VM CUSUM detection of SYN floods.
//!
//! The modules map onto the pipeline: [`resource`] and [`ahp`] score servers,
//! [`scheduler`] places and migrates VMs over a [`cluster`], [`traffic`]
//! produces packet streams that [`detector`] watches, and [`sim`] drives all
//! of it tick by tick. [`trace`] reads and writes trace files.

pub mod ahp;
pub mod cluster;
pub mod detector;
pub mod error;
pub mod resource;
pub mod scheduler;
pub mod sim;
pub mod trace;
pub mod traffic;

pub use ahp::{derive_weights, profile_weights, AhpInput, AhpOutcome, PairwiseMatrix};
pub use cluster::{Cluster, HotspotClass, PowerState, ServerState, VmRecord};
pub use detector::{
    cusum_step, process_trace, Alarm, CusumState, DetectorConfig, DetectorParams, FloodMonitor, ResponsePolicy,
    TrafficInterval,
};
pub use error::{AhpError, DetectError, ResourceError, ScenarioError, SchedError, TraceError};
pub use resource::{weighted_score, ResourceVector, WeightVector};
pub use scheduler::{place, plan_migration, ClassDefaults, MigrationPlan, PlacementDecision};
pub use sim::{emit_reports, load_scenario, run, Scenario, SimReport};
pub use traffic::{gen_attack, gen_normal, PacketEvent, PacketKind, TrafficSpec};
