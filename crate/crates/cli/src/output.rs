//! Artifact writers. Floats carry 17 significant digits and indices are
//! one-based in every file.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use screwdyn::integrator::{Event, EventKind, SimulationRecord};

/// `{:.16e}`: exact round trip through any correct float parser.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn kept(n: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&k| k % stride == 0 || k + 1 == n)
}

/// `t,z1x,z1y,...,zNx,zNy,mode`, one row per kept sample.
pub fn trajectory_csv(record: &SimulationRecord, n: usize, stride: usize) -> String {
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",z{i}x,z{i}y");
    }
    out.push_str(",mode\n");
    for k in kept(record.samples.len(), stride) {
        let s = &record.samples[k];
        out.push_str(&float(s.t));
        for z in &s.z {
            out.push(',');
            out.push_str(&float(*z));
        }
        let _ = writeln!(out, ",{}", s.mode.label());
    }
    out
}

/// `t,energy,power,dissipated`; the energy column is empty off the plane.
pub fn energy_csv(record: &SimulationRecord, stride: usize) -> String {
    let mut out = String::from("t,energy,power,dissipated\n");
    for k in kept(record.energy.len(), stride) {
        let e = &record.energy[k];
        let u = e.energy.map(float).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", float(e.t), u, float(e.power), float(e.dissipated));
    }
    out
}

/// `t,x,y` for dislocation `i` (zero-based).
pub fn path_csv(record: &SimulationRecord, i: usize, stride: usize) -> String {
    let mut out = String::from("t,x,y\n");
    for k in kept(record.samples.len(), stride) {
        let s = &record.samples[k];
        let _ = writeln!(out, "{},{},{}", float(s.t), float(s.z[2 * i]), float(s.z[2 * i + 1]));
    }
    out
}

fn shift(v: &mut Value, up: bool) -> Result<(), EventParseError> {
    match v {
        Value::Number(n) => {
            let k = n.as_u64().ok_or(EventParseError::Detail)?;
            *v = Value::from(if up { k + 1 } else { k.checked_sub(1).ok_or(EventParseError::Detail)? });
        }
        Value::Array(a) => {
            for x in a {
                shift(x, up)?;
            }
        }
        _ => return Err(EventParseError::Detail),
    }
    Ok(())
}

/// One `{t, kind, detail}` object without a trailing newline.
pub fn event_line(t: f64, kind: &EventKind) -> String {
    let Value::Object(mut detail) = serde_json::to_value(kind).expect("event kinds serialize") else { unreachable!("tagged enum") };
    detail.remove("type");
    for v in detail.values_mut() {
        shift(v, true).expect("event fields are indices");
    }
    let detail = serde_json::to_string(&Value::Object(detail)).expect("plain map");
    format!("{{\"t\":{},\"kind\":\"{}\",\"detail\":{}}}", float(t), kind.name(), detail)
}

#[derive(Debug, Error, PartialEq)]
pub enum EventParseError {
    #[error("not a JSON object: {0}")]
    Json(String),
    #[error("missing or invalid field {0}")]
    Field(&'static str),
    #[error("detail fields must be one-based indices")]
    Detail,
    #[error("unknown event: {0}")]
    Kind(String),
}

/// Inverse of [`event_line`]: time and zero-based event kind.
pub fn parse_event_line(line: &str) -> Result<(f64, EventKind), EventParseError> {
    let v: Value = serde_json::from_str(line).map_err(|e| EventParseError::Json(e.to_string()))?;
    let t = v.get("t").and_then(Value::as_f64).ok_or(EventParseError::Field("t"))?;
    let kind = v.get("kind").and_then(Value::as_str).ok_or(EventParseError::Field("kind"))?;
    let Some(Value::Object(detail)) = v.get("detail") else { return Err(EventParseError::Field("detail")) };
    let mut obj = Map::new();
    for (k, x) in detail {
        let mut x = x.clone();
        shift(&mut x, false)?;
        obj.insert(k.clone(), x);
    }
    obj.insert("type".into(), Value::from(kind));
    let parsed: EventKind = serde_json::from_value(Value::Object(obj)).map_err(|e| EventParseError::Kind(e.to_string()))?;
    Ok((t, parsed))
}

pub fn events_jsonl(events: &[Event]) -> String {
    events.iter().map(|e| event_line(e.t, &e.kind) + "\n").collect()
}

pub fn summary_json(record: &SimulationRecord) -> String {
    let end = record.samples.last().map_or(0.0, |s| s.t);
    let v = serde_json::json!({
        "terminal": record.terminal().map(|e| e.kind.name()),
        "t_end": end,
        "events": record.events.len(),
        "accepted_steps": record.accepted,
        "rejected_steps": record.rejected,
        "failure": record.failure.as_ref().map(|f| f.to_string()),
    });
    serde_json::to_string_pretty(&v).expect("plain json") + "\n"
}

/// Writes `trajectory.csv`, `events.jsonl`, `energy.csv`, `summary.json`
/// and `paths/dislocation_<i>.csv` into `dir`.
pub fn write_all(dir: &Path, record: &SimulationRecord, n: usize, stride: usize) -> io::Result<()> {
    fs::create_dir_all(dir.join("paths"))?;
    fs::write(dir.join("trajectory.csv"), trajectory_csv(record, n, stride))?;
    fs::write(dir.join("events.jsonl"), events_jsonl(&record.events))?;
    fs::write(dir.join("energy.csv"), energy_csv(record, stride))?;
    fs::write(dir.join("summary.json"), summary_json(record))?;
    for i in 0..n {
        fs::write(dir.join("paths").join(format!("dislocation_{}.csv", i + 1)), path_csv(record, i, stride))?;
    }
    Ok(())
}
