use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use vmshield::detector::{bin_events, respond, NetworkTable, DEFAULT_THROTTLE_FACTOR};
use vmshield::trace::{read_trace, write_raw, Trace};
use vmshield::traffic::{generate, merge_traces, PacketEvent};
use vmshield::{
    derive_weights, emit_reports, load_scenario, place, process_trace, profile_weights, run, AhpInput, Cluster,
    DetectorParams, ResourceVector, Scenario, TrafficSpec, WeightVector,
};

use crate::args::{AhpArgs, Command, DetectArgs, GenArgs, PlaceArgs, SimulateArgs};
use crate::config::GlobalConfig;
use crate::error::CliError;
use crate::output::{fixed, Rendered};

pub fn dispatch(command: Command, config: &GlobalConfig) -> Result<(), CliError> {
    let rendered = match command {
        Command::Ahp(a) => ahp(a)?,
        Command::Place(a) => place_cmd(a)?,
        Command::Detect(a) => detect(a)?,
        Command::Gen(a) => gen(a, config)?,
        Command::Simulate(a) => simulate(a, config)?,
    };
    let stdout = io::stdout().lock();
    rendered.write_to(config.format, stdout).map_err(|e| CliError::write(Path::new("<stdout>"), e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn ahp(args: AhpArgs) -> Result<Rendered, CliError> {
    let input: AhpInput = read_json(&args.input)?;
    let out = derive_weights(input, args.tolerance, args.cr_limit)?;
    info!("lambda_max {:.6}, CR {:.6}", out.lambda_max, out.cr);
    let [c, m, b] = out.weights.to_array();
    Ok(Rendered {
        json: serde_json::to_value(out).expect("outcome serializes"),
        header: vec!["w_cpu", "w_mem", "w_bw", "lambda_max", "cr"],
        rows: vec![vec![fixed(c), fixed(m), fixed(b), fixed(out.lambda_max), fixed(out.cr)]],
    })
}

fn place_cmd(args: PlaceArgs) -> Result<Rendered, CliError> {
    let cluster: Cluster = read_json(&args.cluster)?;
    let demand: ResourceVector = read_json(&args.demand)?;
    demand.validate().map_err(|e| CliError::parse(&args.demand, e.to_string()))?;
    let weights: WeightVector = match &args.weights {
        Some(path) => read_json(path)?,
        None => profile_weights(&demand),
    };
    let decision = place(&demand, &weights, &cluster.servers);
    let chosen = decision.server().map(str::to_string);
    let rows = decision
        .scores
        .iter()
        .map(|(id, score)| vec![id.clone(), format!("{score:.3}"), (chosen.as_deref() == Some(id)).to_string()])
        .collect();
    let rendered = Rendered {
        json: serde_json::to_value(&decision).expect("decision serializes"),
        header: vec!["server", "score", "chosen"],
        rows,
    };
    if chosen.is_none() {
        warn!("no feasible server for demand {demand}");
        if args.strict {
            // Still print the decision so the rejection is on record.
            rendered.write_to(crate::args::Format::Json, io::stdout().lock()).ok();
            return Err(CliError::Domain("no feasible server".into()));
        }
    }
    Ok(rendered)
}

fn open_input(path: &Path) -> Result<Box<dyn Read>, CliError> {
    if is_stdio(path) {
        Ok(Box::new(io::stdin().lock()))
    } else {
        let f = File::open(path).map_err(|e| CliError::read(path, e))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

fn detect(args: DetectArgs) -> Result<Rendered, CliError> {
    let params = DetectorParams::new(args.drift, args.threshold).map_err(|e| CliError::Usage(e.to_string()))?;
    let trace_err = |source| CliError::Trace { path: args.trace.clone(), source };
    let intervals = match read_trace(open_input(&args.trace)?).map_err(trace_err)? {
        Trace::Binned(iv) => iv,
        Trace::Raw(events) => bin_events(&events, args.interval).map_err(trace_err)?,
    };
    info!("{} intervals read", intervals.len());
    let mut report = process_trace(&intervals, params);

    let mut network = NetworkTable::new(DEFAULT_THROTTLE_FACTOR);
    for vm in report.series.keys() {
        network.attach(vm);
    }
    let mut actions = Vec::new();
    for alarm in &mut report.alarms {
        alarm.action_taken = args.policy;
        actions.push(respond(alarm, args.policy, &mut network).map_err(|e| CliError::Domain(e.to_string()))?);
    }
    for a in &report.alarms {
        warn!("alarm: {} at interval {} (y = {:.4}), action {}", a.vm_id, a.interval_index, a.y_value, a.action_taken);
    }

    if let Some(path) = &args.stats_out {
        fs::write(path, report.stat_log_csv()).map_err(|e| CliError::write(path, e))?;
    }
    let rows = report
        .log
        .iter()
        .map(|r| {
            vec![r.interval.to_string(), r.vm_id.clone(), r.syn.to_string(), r.finrst.to_string(), fixed(r.d), fixed(r.y), r.alarm.to_string()]
        })
        .collect();
    Ok(Rendered {
        json: json!({ "alarms": report.alarms, "series": report.series, "actions": actions }),
        header: vec!["interval", "vm_id", "syn", "finrst", "d", "y", "alarm"],
        rows,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(TrafficSpec),
    Many(Vec<TrafficSpec>),
}

fn gen(args: GenArgs, config: &GlobalConfig) -> Result<Rendered, CliError> {
    let mut specs = match read_json::<OneOrMany>(&args.spec)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    };
    if let Some(seed) = config.seed {
        for (i, s) in specs.iter_mut().enumerate() {
            s.seed = seed.wrapping_add(i as u64);
        }
    }
    for s in &specs {
        s.validate().map_err(|e| CliError::Domain(format!("{}: {e}", args.spec.display())))?;
    }
    let events: Vec<PacketEvent> = if specs.len() == 1 {
        generate(&specs[0]).collect()
    } else {
        let streams = specs.iter().map(|s| generate(s).collect()).collect();
        merge_traces(streams).map_err(|e| CliError::Domain(e.to_string()))?
    };
    let sink: Box<dyn Write> = if is_stdio(&args.out) {
        Box::new(io::stdout().lock())
    } else {
        Box::new(File::create(&args.out).map_err(|e| CliError::write(&args.out, e))?)
    };
    write_raw(BufWriter::new(sink), &events).map_err(|e| CliError::write(&args.out, e))?;
    info!("wrote {} events to {}", events.len(), args.out.display());

    let syn = events.iter().filter(|e| e.kind.is_syn()).count();
    let finrst = events.iter().filter(|e| e.kind.is_fin_or_rst()).count();
    let out = args.out.display().to_string();
    Ok(Rendered {
        json: json!({ "out": out, "events": events.len(), "syn": syn, "finrst": finrst }),
        header: vec!["out", "events", "syn", "finrst"],
        rows: vec![vec![out.clone(), events.len().to_string(), syn.to_string(), finrst.to_string()]],
    })
}

struct RunSpec {
    scenario: Scenario,
    name: String,
    out: PathBuf,
}

fn simulate(args: SimulateArgs, config: &GlobalConfig) -> Result<Rendered, CliError> {
    let mut runs = Vec::new();
    let total = args.scenario.len() as u64 * args.replicates;
    for path in &args.scenario {
        let base = load_scenario(path)?;
        let stem = path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
        let seed0 = config.seed.unwrap_or(base.seed);
        for r in 0..args.replicates {
            let seed = seed0.wrapping_add(r);
            let out = if total == 1 { args.out.clone() } else { args.out.join(format!("{stem}-seed{seed}")) };
            runs.push(RunSpec { scenario: Scenario { seed, ..base.clone() }, name: path.display().to_string(), out });
        }
    }

    let jobs = (args.jobs as usize).min(runs.len()).max(1);
    let results: Vec<Result<vmshield::sim::Summary, CliError>> = if jobs == 1 {
        runs.iter().map(execute).collect()
    } else {
        let mut slots: Vec<Option<Result<_, _>>> = (0..runs.len()).map(|_| None).collect();
        std::thread::scope(|s| {
            let workers: Vec<_> = (0..jobs)
                .map(|k| {
                    let runs = &runs;
                    s.spawn(move || runs.iter().enumerate().skip(k).step_by(jobs).map(|(i, r)| (i, execute(r))).collect::<Vec<_>>())
                })
                .collect();
            for w in workers {
                for (i, r) in w.join().expect("simulation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every run executed")).collect()
    };

    let mut docs = Vec::new();
    let mut rows = Vec::new();
    for (spec, result) in runs.iter().zip(results) {
        let summary = result?;
        rows.push(vec![
            spec.name.clone(),
            summary.seed.to_string(),
            spec.out.display().to_string(),
            summary.placements.to_string(),
            summary.rejections.to_string(),
            (summary.migrations + summary.consolidation_moves).to_string(),
            summary.alarms.to_string(),
            summary.malicious_vms.join(";"),
        ]);
        docs.push(json!({ "scenario": spec.name, "out": spec.out.display().to_string(), "summary": summary }));
    }
    Ok(Rendered {
        json: serde_json::Value::Array(docs),
        header: vec!["scenario", "seed", "out", "placements", "rejections", "migrations", "alarms", "malicious"],
        rows,
    })
}

fn execute(spec: &RunSpec) -> Result<vmshield::sim::Summary, CliError> {
    info!("running {} with seed {}", spec.name, spec.scenario.seed);
    let report = run(&spec.scenario)?;
    emit_reports(&report, &spec.out)?;
    info!("{}: reports in {}", spec.name, spec.out.display());
    Ok(report.summary)
}
