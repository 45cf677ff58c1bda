//! Trace files.
//!
//! Raw events: `timestamp_s,vm_id,pkt_type`, one packet per row with the
//! timestamp in seconds (up to six decimals). Pre-binned counts:
//! `interval_index,vm_id,syn,finrst`. Readers pick the format from the header.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::detector::TrafficInterval;
use crate::error::TraceError;
use crate::traffic::{PacketEvent, PacketKind, MICROS_PER_SECOND};

pub const RAW_HEADER: [&str; 3] = ["timestamp_s", "vm_id", "pkt_type"];
pub const BINNED_HEADER: [&str; 4] = ["interval_index", "vm_id", "syn", "finrst"];

#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Raw(Vec<PacketEvent>),
    Binned(Vec<TrafficInterval>),
}

/// Formats microseconds as seconds with exactly six decimals.
pub fn format_timestamp(ts_us: u64) -> String {
    format!("{}.{:06}", ts_us / MICROS_PER_SECOND, ts_us % MICROS_PER_SECOND)
}

/// Parses a decimal seconds value into microseconds without going through
/// floating point.
pub fn parse_timestamp(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err("empty timestamp".into());
    }
    if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("timestamp {s:?} must have at most six decimal digits"));
    }
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| format!("bad timestamp {s:?}"))? };
    let frac_us: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<6}").parse().map_err(|_| format!("bad timestamp {s:?}"))? };
    whole
        .checked_mul(MICROS_PER_SECOND)
        .and_then(|w| w.checked_add(frac_us))
        .ok_or_else(|| format!("timestamp {s:?} out of range"))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn field(record: &csv::StringRecord, i: usize) -> Result<&str, TraceError> {
    record.get(i).ok_or_else(|| TraceError::Parse { line: line_of(record), message: format!("missing column {}", i + 1) })
}

pub fn read_trace<R: Read>(reader: R) -> Result<Trace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header == RAW_HEADER {
        read_raw(rdr).map(Trace::Raw)
    } else if header == BINNED_HEADER {
        read_binned(rdr).map(Trace::Binned)
    } else {
        Err(TraceError::UnknownHeader(header))
    }
}

fn read_raw<R: Read>(mut rdr: csv::Reader<R>) -> Result<Vec<PacketEvent>, TraceError> {
    let mut out = Vec::new();
    let mut last_vm: Option<Arc<str>> = None;
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let ts = parse_timestamp(field(&record, 0)?).map_err(|message| TraceError::Parse { line, message })?;
        let vm = field(&record, 1)?;
        let kind: PacketKind = field(&record, 2)?.parse().map_err(|message| TraceError::Parse { line, message })?;
        let vm_id = match &last_vm {
            Some(id) if &**id == vm => id.clone(),
            _ => {
                let id: Arc<str> = Arc::from(vm);
                last_vm = Some(id.clone());
                id
            }
        };
        out.push(PacketEvent { ts_us: ts, vm_id, kind });
    }
    Ok(out)
}

fn read_binned<R: Read>(mut rdr: csv::Reader<R>) -> Result<Vec<TrafficInterval>, TraceError> {
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let num = |i: usize, name: &str| -> Result<u64, TraceError> {
            field(&record, i)?
                .parse()
                .map_err(|_| TraceError::Parse { line, message: format!("{name} must be a non-negative integer") })
        };
        out.push(TrafficInterval::new(num(0, "interval_index")?, field(&record, 1)?, num(2, "syn")?, num(3, "finrst")?));
    }
    Ok(out)
}

pub fn write_raw<W: Write>(mut w: W, events: &[PacketEvent]) -> std::io::Result<()> {
    writeln!(w, "{}", RAW_HEADER.join(","))?;
    for e in events {
        writeln!(w, "{},{},{}", format_timestamp(e.ts_us), e.vm_id, e.kind)?;
    }
    w.flush()
}

pub fn write_binned<W: Write>(mut w: W, intervals: &[TrafficInterval]) -> std::io::Result<()> {
    writeln!(w, "{}", BINNED_HEADER.join(","))?;
    for iv in intervals {
        writeln!(w, "{},{},{},{}", iv.interval_index, iv.vm_id, iv.syn_count, iv.finrst_count)?;
    }
    w.flush()
}
