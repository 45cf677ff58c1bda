use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use serde_json::Value;
use tempfile::TempDir;

use vmshield::sim::{emit_reports, load_scenario, run, Scenario, SimReport, REPORT_FILES, UTILIZATION_HEADER};
use vmshield::trace::{read_trace, write_binned, write_raw, Trace};
use vmshield::traffic::{gen_attack, gen_normal, merge_traces, TrafficSpec};
use vmshield::{ScenarioError, TrafficInterval};

fn scenario() -> Scenario {
    load_scenario(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/three_servers.json")).unwrap()
}

fn read_json(dir: &TempDir, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
}

#[test]
fn empty_report_writes_headers_and_empty_arrays() {
    let dir = TempDir::new().unwrap();
    emit_reports(&SimReport::default(), dir.path()).unwrap();
    for name in REPORT_FILES {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_eq!(fs::read_to_string(dir.path().join("utilization.csv")).unwrap(), format!("{UTILIZATION_HEADER}\n"));
    assert_eq!(fs::read_to_string(dir.path().join("detector.csv")).unwrap(), "tick,interval,vm_id,syn,finrst,d,y,alarm\n");
    assert_eq!(read_json(&dir, "alarms.json"), Value::Array(vec![]));
    assert_eq!(read_json(&dir, "placements.json")["placements"], Value::Array(vec![]));
}

#[test]
fn rerun_into_same_dir_is_identical() {
    let dir = TempDir::new().unwrap();
    let mut s = scenario();
    s.duration = 250;
    s.events.retain(|e| e.tick < s.duration);
    let r = run(&s).unwrap();
    emit_reports(&r, dir.path()).unwrap();
    let before: Vec<Vec<u8>> = REPORT_FILES.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    emit_reports(&run(&s).unwrap(), dir.path()).unwrap();
    for (f, b) in REPORT_FILES.iter().zip(before) {
        assert_eq!(fs::read(dir.path().join(f)).unwrap(), b, "{f}");
    }
}

#[test]
fn alarms_match_statistic_log() {
    let dir = TempDir::new().unwrap();
    let r = run(&scenario()).unwrap();
    emit_reports(&r, dir.path()).unwrap();

    let alarms = read_json(&dir, "alarms.json");
    let alarms = alarms.as_array().unwrap();
    assert_eq!(alarms.len() as u64, r.summary.alarms);
    let log = fs::read_to_string(dir.path().join("detector.csv")).unwrap();
    for a in alarms {
        let vm = a["vm_id"].as_str().unwrap();
        let tick = a["tick"].as_u64().unwrap();
        let row = log
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|c| c[0] == tick.to_string() && c[2] == vm)
            .expect("alarm has a statistic row");
        assert_eq!(row[7], "true");
        let y: f64 = row[6].parse().unwrap();
        assert!((y - a["y_value"].as_f64().unwrap()).abs() < 1e-6);
    }
}

#[test]
fn logs_are_totally_ordered() {
    let r = run(&scenario()).unwrap();
    let mut keys: Vec<(u64, u64)> = Vec::new();
    keys.extend(r.placements.iter().map(|p| (p.tick, p.seq)));
    keys.extend(r.lifecycle.iter().map(|p| (p.tick, p.seq)));
    keys.extend(r.migrations.iter().map(|p| (p.tick, p.seq)));
    keys.extend(r.power.iter().map(|p| (p.tick, p.seq)));
    keys.extend(r.detector.iter().map(|p| (p.tick, p.seq)));
    keys.extend(r.alarms.iter().map(|p| (p.tick, p.seq)));
    let seqs: BTreeSet<u64> = keys.iter().map(|k| k.1).collect();
    assert_eq!(seqs.len(), keys.len(), "sequence numbers are unique");
    keys.sort_by_key(|k| k.1);
    assert!(keys.windows(2).all(|w| w[0].0 <= w[1].0), "seq order agrees with tick order");
}

#[test]
fn utilization_covers_every_tick() {
    let s = scenario();
    let r = run(&s).unwrap();
    assert_eq!(r.utilization.len() as u64, (s.duration + 1) * s.servers.len() as u64);
    let csv = r.utilization_csv();
    assert_eq!(csv.lines().count() as u64, 1 + (s.duration + 1) * 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,A,active,"));
}

#[test]
fn load_errors() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    assert!(matches!(load_scenario(&missing), Err(ScenarioError::Io { .. })));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"servers\": [{\"id\": \"A\"}], \"duration\": 2, \"jitter\": 2.0}").unwrap();
    assert!(matches!(load_scenario(&bad), Err(ScenarioError::Validation(m)) if m.contains("jitter")));
}

#[test]
fn trace_files_roundtrip() {
    let dir = TempDir::new().unwrap();
    let normal = gen_normal(&TrafficSpec::normal("vm-a", 30, 0, 20, 5));
    let attack = gen_attack(&TrafficSpec::attack("vm-b", 30, 2.5, 5, 15, 6));
    let merged = merge_traces(vec![normal, attack]).unwrap();

    let raw = dir.path().join("raw.csv");
    write_raw(fs::File::create(&raw).unwrap(), &merged).unwrap();
    match read_trace(fs::File::open(&raw).unwrap()).unwrap() {
        Trace::Raw(events) => assert_eq!(events, merged),
        other => panic!("{other:?}"),
    }

    let binned: Vec<TrafficInterval> = (0..4).map(|i| TrafficInterval::new(i, "vm", 100 + i, 90)).collect();
    let path = dir.path().join("binned.csv");
    write_binned(fs::File::create(&path).unwrap(), &binned).unwrap();
    assert_eq!(read_trace(fs::File::open(&path).unwrap()).unwrap(), Trace::Binned(binned));
}
