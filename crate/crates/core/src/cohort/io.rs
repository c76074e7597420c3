//! Cohort file formats.
//!
//! * longitudinal CSV: `subject_id,factor,age,value`
//! * subjects JSON-lines: one [`Subject`] object per line
//! * events CSV: `subject_id,dead,death_age,delta,c_adjudicated,observed_time,event_indicator`,
//!   empty cells for absent optionals
//! * `meta.json` (directory form only): `t_max` and factor names
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is exact.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Cohort, EventRecord, LongitudinalRecord, Subject};
use crate::error::{Error, Result};

const LONG_HEADER: [&str; 4] = ["subject_id", "factor", "age", "value"];
const EVENT_HEADER: [&str; 7] = [
    "subject_id",
    "dead",
    "death_age",
    "delta",
    "c_adjudicated",
    "observed_time",
    "event_indicator",
];

#[derive(Debug, Clone)]
pub struct CohortFiles {
    pub longitudinal: PathBuf,
    pub subjects: PathBuf,
    pub events: PathBuf,
    pub meta: PathBuf,
}

impl CohortFiles {
    pub fn in_dir(dir: &Path) -> Self {
        CohortFiles {
            longitudinal: dir.join("longitudinal.csv"),
            subjects: dir.join("subjects.jsonl"),
            events: dir.join("events.csv"),
            meta: dir.join("meta.json"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    t_max: f64,
    factor_names: Vec<String>,
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        file: file_label(path),
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let h = rdr
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    if h.is_empty() {
        return Ok(());
    }
    if h.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(malformed(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| malformed(path, line, format!("{field}: not a number: {s:?}")))
}

fn parse_opt<T: std::str::FromStr>(path: &Path, line: usize, field: &str, s: &str) -> Result<Option<T>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<T>()
        .map(Some)
        .map_err(|_| malformed(path, line, format!("{field}: cannot parse {s:?}")))
}

fn parse_bool(path: &Path, line: usize, s: &str) -> Result<bool> {
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(malformed(path, line, format!("dead: expected 0/1, got {other:?}"))),
    }
}

fn read_longitudinal(path: &Path) -> Result<Vec<LongitudinalRecord>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &LONG_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(path, line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(malformed(path, line, format!("expected 4 fields, got {}", rec.len())));
        }
        out.push(LongitudinalRecord {
            subject_id: rec[0].trim().to_string(),
            factor: rec[1]
                .trim()
                .parse()
                .map_err(|_| malformed(path, line, "factor: expected integer"))?,
            age: parse_f64(path, line, "age", &rec[2])?,
            value: parse_f64(path, line, "value", &rec[3])?,
        });
    }
    Ok(out)
}

fn read_subjects(path: &Path) -> Result<Vec<Subject>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Subject =
            serde_json::from_str(&line).map_err(|e| malformed(path, line_no, e.to_string()))?;
        s.validate()
            .map_err(|e| malformed(path, line_no, e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let mut rdr = csv_reader(path)?;
    check_header(path, &mut rdr, &EVENT_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(path, line, e.to_string()))?;
        if rec.len() != 7 {
            return Err(malformed(path, line, format!("expected 7 fields, got {}", rec.len())));
        }
        let e = EventRecord {
            subject_id: rec[0].trim().to_string(),
            dead: parse_bool(path, line, &rec[1])?,
            death_age: parse_opt(path, line, "death_age", &rec[2])?,
            delta: parse_opt(path, line, "delta", &rec[3])?,
            c_adjudicated: parse_opt(path, line, "c_adjudicated", &rec[4])?,
            observed_time: parse_f64(path, line, "observed_time", &rec[5])?,
            event_indicator: rec[6]
                .trim()
                .parse()
                .map_err(|_| malformed(path, line, "event_indicator: expected 0/1"))?,
        };
        e.validate()
            .map_err(|err| malformed(path, line, err.to_string()))?;
        out.push(e);
    }
    Ok(out)
}

/// Reads the three cohort files. Without a metadata sidecar the age bound is
/// the largest age seen (longitudinal ages and death ages) and factors are
/// named `factor1..G`.
pub fn read_cohort(longitudinal: &Path, subjects: &Path, events: &Path) -> Result<Cohort> {
    let long = read_longitudinal(longitudinal)?;
    let subs = read_subjects(subjects)?;
    let evs = read_events(events)?;
    let g = long.iter().map(|r| r.factor).max().unwrap_or(0);
    let t_max = long
        .iter()
        .map(|r| r.age)
        .chain(evs.iter().filter_map(|e| e.death_age))
        .chain(
            subs.iter()
                .zip(&evs)
                .map(|(s, e)| s.baseline_age + e.observed_time),
        )
        .fold(f64::MIN_POSITIVE, f64::max);
    Cohort::new(
        subs,
        long,
        evs,
        t_max,
        (1..=g).map(|k| format!("factor{k}")).collect(),
    )
}

pub fn read_cohort_dir(dir: &Path) -> Result<Cohort> {
    let files = CohortFiles::in_dir(dir);
    if !files.meta.exists() {
        return read_cohort(&files.longitudinal, &files.subjects, &files.events);
    }
    let text = std::fs::read_to_string(&files.meta).map_err(|e| Error::io(&files.meta, e))?;
    let meta: Meta = serde_json::from_str(&text)?;
    Cohort::new(
        read_subjects(&files.subjects)?,
        read_longitudinal(&files.longitudinal)?,
        read_events(&files.events)?,
        meta.t_max,
        meta.factor_names,
    )
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_cohort_dir(cohort: &Cohort, dir: &Path) -> Result<()> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = CohortFiles::in_dir(dir);
    let write = |p: &Path, text: String| std::fs::write(p, text).map_err(|e| Error::io(p, e));

    let mut buf = format!("{}\n", LONG_HEADER.join(","));
    for r in &cohort.longitudinal {
        let _ = writeln!(buf, "{},{},{},{}", r.subject_id, r.factor, r.age, r.value);
    }
    write(&files.longitudinal, buf)?;

    let mut buf = String::new();
    for s in &cohort.subjects {
        buf.push_str(&serde_json::to_string(s)?);
        buf.push('\n');
    }
    write(&files.subjects, buf)?;

    let mut buf = format!("{}\n", EVENT_HEADER.join(","));
    for e in &cohort.events {
        let _ = writeln!(
            buf,
            "{},{},{},{},{},{},{}",
            e.subject_id,
            u8::from(e.dead),
            opt(e.death_age),
            opt(e.delta),
            opt(e.c_adjudicated),
            e.observed_time,
            e.event_indicator
        );
    }
    write(&files.events, buf)?;

    let meta = Meta {
        t_max: cohort.t_max,
        factor_names: cohort.factor_names.clone(),
    };
    write(&files.meta, serde_json::to_string_pretty(&meta)?)
}
