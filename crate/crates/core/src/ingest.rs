//! Record parsing and report serialization.
//!
//! Input is JSONL (one object per line) or CSV with a header row, using the
//! keys `t`, `group`, `y_hat` and optionally `propensity`, `density` and
//! `density_estimate`. Parsing is lazy and single pass. Per-group time indices
//! must strictly increase.
//!
//! In strict mode the first bad line ends the stream with an error carrying
//! its line number. In lenient mode unknown keys are ignored and bad lines
//! are skipped, each with a logged warning.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::AuditError;
use crate::simulate::MonteCarloSummary;
use crate::types::{AuditRecord, AuditReport, GroupLabel};

pub const RECORD_KEYS: [&str; 6] = [
    "t",
    "group",
    "y_hat",
    "propensity",
    "density",
    "density_estimate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// `Csv` for a `.csv` extension, `Jsonl` otherwise.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{message} at line {line}")]
    Line { line: u64, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl IngestError {
    fn line(line: u64, message: impl Into<String>) -> Self {
        IngestError::Line {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    t: u64,
    group: u32,
    y_hat: f64,
    propensity: Option<f64>,
    density: Option<f64>,
    density_estimate: Option<f64>,
}

impl RawRecord {
    fn into_record(self) -> Result<AuditRecord, AuditError> {
        let record = AuditRecord {
            t: self.t,
            group: GroupLabel(self.group),
            y_hat: self.y_hat,
            propensity: self.propensity,
            density: self.density,
            density_estimate: self.density_estimate,
        };
        record.validate()?;
        Ok(record)
    }
}

enum Source<R: BufRead> {
    Jsonl(std::io::Lines<R>),
    Csv {
        records: csv::StringRecordsIntoIter<R>,
        columns: HashMap<&'static str, usize>,
    },
}

/// Lazy record iterator returned by [`parse_stream`].
pub struct RecordStream<R: BufRead> {
    source: Option<Source<R>>,
    mode: Mode,
    line: u64,
    last_t: HashMap<u32, u64>,
    done: bool,
    pending: Option<IngestError>,
}

/// Parses `source` lazily in the given format and mode.
pub fn parse_stream<R: BufRead>(source: R, format: Format, mode: Mode) -> RecordStream<R> {
    let mut stream = RecordStream {
        source: None,
        mode,
        line: 0,
        last_t: HashMap::new(),
        done: false,
        pending: None,
    };
    match format {
        Format::Jsonl => stream.source = Some(Source::Jsonl(source.lines())),
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(true)
                .trim(csv::Trim::All)
                .from_reader(source);
            stream.line = 1;
            match csv_columns(&mut reader, mode) {
                Ok(columns) => {
                    stream.source = Some(Source::Csv {
                        records: reader.into_records(),
                        columns,
                    })
                }
                Err(e) => stream.pending = Some(e),
            }
        }
    }
    stream
}

fn csv_columns<R: Read>(
    reader: &mut csv::Reader<R>,
    mode: Mode,
) -> Result<HashMap<&'static str, usize>, IngestError> {
    let headers = reader.headers()?.clone();
    let mut columns = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        match RECORD_KEYS.iter().find(|k| **k == name) {
            Some(key) => {
                if columns.insert(*key, i).is_some() {
                    return Err(IngestError::line(1, format!("duplicate column {name:?}")));
                }
            }
            None => unknown_key(name, 1, mode)?,
        }
    }
    for key in &RECORD_KEYS[..3] {
        if !columns.contains_key(key) {
            return Err(IngestError::line(
                1,
                format!("missing required column {key:?}"),
            ));
        }
    }
    Ok(columns)
}

fn unknown_key(name: &str, line: u64, mode: Mode) -> Result<(), IngestError> {
    match mode {
        Mode::Strict => Err(IngestError::line(line, format!("unknown key {name:?}"))),
        Mode::Lenient => {
            log::warn!("ignoring unknown key {name:?} at line {line}");
            Ok(())
        }
    }
}

fn parse_jsonl_line(text: &str, line: u64, mode: Mode) -> Result<RawRecord, IngestError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| IngestError::line(line, format!("malformed JSON: {e}")))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(IngestError::line(line, "expected a JSON object"));
    };
    let unknown: BTreeSet<String> = map
        .keys()
        .filter(|k| !RECORD_KEYS.contains(&k.as_str()))
        .cloned()
        .collect();
    for key in unknown {
        unknown_key(&key, line, mode)?;
        map.remove(&key);
    }
    serde_json::from_value(serde_json::Value::Object(map))
        .map_err(|e| IngestError::line(line, format!("malformed record: {e}")))
}

fn parse_csv_row(
    row: &csv::StringRecord,
    columns: &HashMap<&'static str, usize>,
    line: u64,
) -> Result<RawRecord, IngestError> {
    let field = |key: &str| {
        columns
            .get(key)
            .and_then(|&i| row.get(i))
            .filter(|s| !s.is_empty())
    };
    let required = |key: &str| {
        field(key).ok_or_else(|| IngestError::line(line, format!("missing value for {key:?}")))
    };
    fn num<T: std::str::FromStr>(key: &str, s: &str, line: u64) -> Result<T, IngestError> {
        s.parse()
            .map_err(|_| IngestError::line(line, format!("cannot parse {key} value {s:?}")))
    }
    let optional = |key: &str| field(key).map(|s| num::<f64>(key, s, line)).transpose();
    Ok(RawRecord {
        t: num("t", required("t")?, line)?,
        group: num("group", required("group")?, line)?,
        y_hat: num("y_hat", required("y_hat")?, line)?,
        propensity: optional("propensity")?,
        density: optional("density")?,
        density_estimate: optional("density_estimate")?,
    })
}

impl<R: BufRead> RecordStream<R> {
    /// Next raw line parsed into a record, `None` at end of input.
    fn next_raw(&mut self) -> Option<Result<RawRecord, IngestError>> {
        loop {
            match self.source.as_mut()? {
                Source::Jsonl(lines) => {
                    let text = match lines.next()? {
                        Ok(text) => text,
                        Err(e) => return Some(Err(e.into())),
                    };
                    self.line += 1;
                    if text.trim().is_empty() {
                        continue;
                    }
                    return Some(parse_jsonl_line(&text, self.line, self.mode));
                }
                Source::Csv { records, columns } => {
                    let row = match records.next()? {
                        Ok(row) => row,
                        Err(e) => return Some(Err(e.into())),
                    };
                    self.line = row.position().map_or(self.line + 1, |p| p.line());
                    return Some(parse_csv_row(&row, columns, self.line));
                }
            }
        }
    }

    fn check(&mut self, raw: RawRecord) -> Result<AuditRecord, IngestError> {
        let line = self.line;
        let record = raw
            .into_record()
            .map_err(|e| IngestError::line(line, audit_message(e)))?;
        if let Some(&prev) = self.last_t.get(&record.group.0) {
            if record.t <= prev {
                return Err(IngestError::line(
                    line,
                    format!(
                        "time index {} for group {} does not increase (previous {prev})",
                        record.t, record.group
                    ),
                ));
            }
        }
        self.last_t.insert(record.group.0, record.t);
        Ok(record)
    }
}

fn audit_message(e: AuditError) -> String {
    match e {
        AuditError::Config(m)
        | AuditError::Domain(m)
        | AuditError::Invariant(m)
        | AuditError::State(m) => m,
    }
}

impl<R: BufRead> Iterator for RecordStream<R> {
    type Item = Result<AuditRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(e) = self.pending.take() {
            self.done = true;
            return Some(Err(e));
        }
        while !self.done {
            let result = match self.next_raw()? {
                Ok(raw) => self.check(raw),
                Err(e) => Err(e),
            };
            match (result, self.mode) {
                (Ok(record), _) => return Some(Ok(record)),
                (Err(e @ (IngestError::Io(_) | IngestError::Csv(_))), _)
                | (Err(e), Mode::Strict) => {
                    self.done = true;
                    return Some(Err(e));
                }
                (Err(e), Mode::Lenient) => log::warn!("skipping record: {e}"),
            }
        }
        None
    }
}

pub fn write_records_jsonl<W: Write>(
    records: &[AuditRecord],
    mut sink: W,
) -> Result<(), IngestError> {
    for r in records {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn write_records_csv<W: Write>(records: &[AuditRecord], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RECORD_KEYS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.group.0.to_string(),
            r.y_hat.to_string(),
            opt(r.propensity),
            opt(r.density),
            opt(r.density_estimate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the report as pretty-printed JSON with a fixed key order.
pub fn emit_report<W: Write>(report: &AuditReport, mut sink: W) -> Result<(), IngestError> {
    serde_json::to_writer_pretty(&mut sink, report)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

pub fn parse_report<R: Read>(source: R) -> Result<AuditReport, IngestError> {
    Ok(serde_json::from_reader(source)?)
}

/// Trajectory as CSV: `step,wealth`, or `step,wealth,game_id` with one block
/// of rows per game when the report has several games.
pub fn write_trajectory_csv<W: Write>(report: &AuditReport, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    match &report.per_game {
        None => {
            w.write_record(["step", "wealth"])?;
            for p in &report.trajectory {
                w.write_record([p.step.to_string(), p.wealth.to_string()])?;
            }
        }
        Some(games) => {
            w.write_record(["step", "wealth", "game_id"])?;
            for game in games {
                for p in &game.trajectory {
                    w.write_record([p.step.to_string(), p.wealth.to_string(), game.game.clone()])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "scenario",
    "alpha",
    "strategy",
    "fpr_or_power",
    "tau_mean",
    "tau_q10",
    "tau_q50",
    "tau_q90",
];

/// One row of a Monte Carlo summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub alpha: f64,
    pub strategy: String,
    pub summary: MonteCarloSummary,
}

/// Summary rows as CSV; stopping-time cells are empty when no run rejected.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SUMMARY_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        let s = &row.summary;
        w.write_record([
            row.scenario.clone(),
            row.alpha.to_string(),
            row.strategy.clone(),
            s.rejection_rate.to_string(),
            opt(s.tau_mean),
            opt(s.tau_q10),
            opt(s.tau_q50),
            opt(s.tau_q90),
        ])?;
    }
    w.flush()?;
    Ok(())
}
