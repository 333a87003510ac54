//! Readers and writers for every on-disk format.
//!
//! * Traces: line-delimited JSON, one trace per line, so partial files are
//!   diagnosable per line.
//! * Embeddings, labels, scores: UTF-8 CSV with `.` decimals and LF line
//!   endings; score tables carry a sidecar JSON metadata file.
//! * Images: portable graymaps, P2 (ASCII) or P5 (binary), maxval <= 65535.
//! * Token feature sequences (probe inputs): line-delimited JSON.
//!
//! Writers emit shortest round-trip float forms, so write-then-parse
//! reproduces values exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Alpha, GenerationTrace, GrayImage, Label, LabeledDataset, Orientation, ScoreTable, Segment,
    StepMode, StepStats, TokenStep, DERIVED_TOL,
};
use crate::probe::TokenFeatureSequence;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Format(String),
}

impl ParseError {
    fn at(line: usize, msg: impl ToString) -> ParseError {
        ParseError::Line {
            line,
            msg: msg.to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Trace JSONL

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    segment: Segment,
    #[serde(skip_serializing_if = "Option::is_none")]
    chosen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chosen_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    second_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    std_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    renyi: Option<BTreeMap<Alpha, f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceRecord {
    id: String,
    label: Option<u8>,
    steps: Vec<StepRecord>,
}

fn step_from_record(record: StepRecord) -> Result<TokenStep, String> {
    match record.logprobs {
        Some(logprobs) => {
            let chosen = record
                .chosen
                .ok_or("full step must carry `chosen` alongside `logprobs`")?;
            let step =
                TokenStep::full(record.segment, chosen, logprobs).map_err(|e| e.to_string())?;
            // Any summary fields shipped alongside a full distribution must
            // agree with what the distribution implies.
            let derived = step.stats();
            let cross = |name: &str, stored: Option<f64>, derived: Option<f64>| {
                if let (Some(s), Some(d)) = (stored, derived) {
                    if (s - d).abs() > DERIVED_TOL {
                        return Err(format!(
                            "stored {name} = {s} disagrees with derived value {d}"
                        ));
                    }
                }
                Ok(())
            };
            cross(
                "chosen_logprob",
                record.chosen_logprob,
                derived.chosen_logprob,
            )?;
            cross("max_logprob", record.max_logprob, derived.max_logprob)?;
            cross(
                "second_logprob",
                record.second_logprob,
                derived.second_logprob,
            )?;
            cross("mean_logprob", record.mean_logprob, derived.mean_logprob)?;
            cross("std_logprob", record.std_logprob, derived.std_logprob)?;
            if let Some(renyi) = record.renyi {
                for (alpha, stored) in renyi {
                    let derived = step
                        .renyi_at(alpha.value())
                        .expect("full mode computes any order");
                    if (stored - derived).abs() > DERIVED_TOL {
                        return Err(format!(
                            "stored renyi[{alpha}] = {stored} disagrees with derived value {derived}"
                        ));
                    }
                }
            }
            Ok(step)
        }
        None => {
            if record.chosen.is_some() {
                return Err("`chosen` requires `logprobs`".to_string());
            }
            let stats = StepStats {
                chosen_logprob: record.chosen_logprob,
                max_logprob: record.max_logprob,
                second_logprob: record.second_logprob,
                mean_logprob: record.mean_logprob,
                std_logprob: record.std_logprob,
                renyi: record.renyi.unwrap_or_default(),
            };
            TokenStep::summary(record.segment, stats).map_err(|e| e.to_string())
        }
    }
}

fn step_to_record(step: &TokenStep) -> StepRecord {
    match step.mode() {
        StepMode::Full => {
            let full = step.full_distribution().expect("full mode");
            StepRecord {
                segment: step.segment,
                chosen: Some(full.chosen_index),
                logprobs: Some(full.logprobs.clone()),
                chosen_logprob: None,
                max_logprob: None,
                second_logprob: None,
                mean_logprob: None,
                std_logprob: None,
                renyi: None,
            }
        }
        StepMode::Summary => {
            let stats = step.stats();
            StepRecord {
                segment: step.segment,
                chosen: None,
                logprobs: None,
                chosen_logprob: stats.chosen_logprob,
                max_logprob: stats.max_logprob,
                second_logprob: stats.second_logprob,
                mean_logprob: stats.mean_logprob,
                std_logprob: stats.std_logprob,
                renyi: if stats.renyi.is_empty() {
                    None
                } else {
                    Some(stats.renyi.clone())
                },
            }
        }
    }
}

/// Parse line-delimited trace records. Fails fast: the first malformed line
/// aborts with its line number and no traces are returned.
pub fn parse_traces<R: BufRead>(reader: R) -> Result<Vec<GenerationTrace>, ParseError> {
    let mut traces = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| ParseError::at(line_no, format!("malformed trace record: {e}")))?;
        let label = match record.label {
            None => None,
            Some(v) => Some(Label::from_u8(v).map_err(|e| ParseError::at(line_no, e))?),
        };
        let mut steps = Vec::with_capacity(record.steps.len());
        for (step_idx, step) in record.steps.into_iter().enumerate() {
            steps.push(
                step_from_record(step)
                    .map_err(|msg| ParseError::at(line_no, format!("step {step_idx}: {msg}")))?,
            );
        }
        if !seen.insert(record.id.clone()) {
            return Err(ParseError::at(
                line_no,
                format!("duplicate id {}", record.id),
            ));
        }
        let trace = GenerationTrace::new(record.id, steps, label)
            .map_err(|e| ParseError::at(line_no, e))?;
        traces.push(trace);
    }
    Ok(traces)
}

pub fn parse_traces_file(path: &Path) -> Result<Vec<GenerationTrace>, ParseError> {
    parse_traces(BufReader::new(File::open(path)?))
}

pub fn write_traces<W: Write>(mut writer: W, traces: &[GenerationTrace]) -> std::io::Result<()> {
    for trace in traces {
        let record = TraceRecord {
            id: trace.id.clone(),
            label: trace.label.map(Label::as_u8),
            steps: trace.steps.iter().map(step_to_record).collect(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_traces_file(path: &Path, traces: &[GenerationTrace]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_traces(&mut w, traces)?;
    w.flush()
}

// ---------------------------------------------------------------------------
// CSV tables

fn split_csv_line(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

/// Parse an embeddings table: header `id,f1..fd`, one row per sample.
pub fn parse_embeddings<R: BufRead>(
    reader: R,
    name: &str,
) -> Result<crate::model::EmbeddingSpace, ParseError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ParseError::Format("missing header".into()))?;
    let header = header?;
    let cols = split_csv_line(&header);
    if cols.len() < 2 || !cols[0].eq_ignore_ascii_case("id") {
        return Err(ParseError::at(1, "header must be `id,f1,...,fd`"));
    }
    let dim = cols.len() - 1;
    let mut rows = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv_line(&line);
        if cells.len() != dim + 1 {
            return Err(ParseError::at(
                line_no,
                format!("expected {} columns, got {}", dim + 1, cells.len()),
            ));
        }
        let id = cells[0].to_string();
        let mut values = Vec::with_capacity(dim);
        for (j, cell) in cells[1..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                ParseError::at(
                    line_no,
                    format!("non-numeric cell `{cell}` in column {}", j + 2),
                )
            })?;
            values.push(v);
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(ParseError::at(line_no, format!("duplicate id {id}")));
        }
    }
    crate::model::EmbeddingSpace::new(name, rows).map_err(|e| ParseError::Format(e.to_string()))
}

pub fn parse_embeddings_file(path: &Path) -> Result<crate::model::EmbeddingSpace, ParseError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "space".to_string());
    parse_embeddings(BufReader::new(File::open(path)?), &name)
}

pub fn write_embeddings<W: Write>(
    mut writer: W,
    space: &crate::model::EmbeddingSpace,
) -> std::io::Result<()> {
    write!(writer, "id")?;
    for j in 1..=space.dim {
        write!(writer, ",f{j}")?;
    }
    writeln!(writer)?;
    for (id, row) in space.iter() {
        write!(writer, "{id}")?;
        for v in row {
            write!(writer, ",{v}")?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

pub fn write_embeddings_file(
    path: &Path,
    space: &crate::model::EmbeddingSpace,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings(&mut w, space)?;
    w.flush()
}

/// Parse a labels table: header `id,label`, labels 0 or 1.
pub fn parse_labels<R: BufRead>(reader: R) -> Result<LabeledDataset, ParseError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ParseError::Format("missing header".into()))?;
    let header = header?;
    let cols = split_csv_line(&header);
    if cols.len() != 2 || !cols[0].eq_ignore_ascii_case("id") {
        return Err(ParseError::at(1, "header must be `id,label`"));
    }
    let mut labels = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv_line(&line);
        if cells.len() != 2 {
            return Err(ParseError::at(line_no, "expected 2 columns"));
        }
        let raw: u8 = cells[1]
            .parse()
            .map_err(|_| ParseError::at(line_no, format!("bad label `{}`", cells[1])))?;
        let label = Label::from_u8(raw).map_err(|e| ParseError::at(line_no, e))?;
        if labels.insert(cells[0].to_string(), label).is_some() {
            return Err(ParseError::at(
                line_no,
                format!("duplicate id {}", cells[0]),
            ));
        }
    }
    Ok(LabeledDataset::new(labels))
}

pub fn parse_labels_file(path: &Path) -> Result<LabeledDataset, ParseError> {
    parse_labels(BufReader::new(File::open(path)?))
}

pub fn write_labels<W: Write>(mut writer: W, labels: &LabeledDataset) -> std::io::Result<()> {
    writeln!(writer, "id,label")?;
    for (id, label) in labels.iter() {
        writeln!(writer, "{id},{}", label.as_u8())?;
    }
    Ok(())
}

pub fn write_labels_file(path: &Path, labels: &LabeledDataset) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_labels(&mut w, labels)?;
    w.flush()
}

/// Sidecar metadata for a score CSV.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreMeta {
    pub method: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub orientation: Orientation,
}

/// Parse a scores table: header `id,score`.
pub fn parse_scores<R: BufRead>(reader: R) -> Result<BTreeMap<String, f64>, ParseError> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ParseError::Format("missing header".into()))?;
    let header = header?;
    let cols = split_csv_line(&header);
    if cols.len() != 2 || !cols[0].eq_ignore_ascii_case("id") {
        return Err(ParseError::at(1, "header must be `id,score`"));
    }
    let mut scores = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_csv_line(&line);
        if cells.len() != 2 {
            return Err(ParseError::at(line_no, "expected 2 columns"));
        }
        let v: f64 = cells[1]
            .parse()
            .map_err(|_| ParseError::at(line_no, format!("non-numeric score `{}`", cells[1])))?;
        if scores.insert(cells[0].to_string(), v).is_some() {
            return Err(ParseError::at(
                line_no,
                format!("duplicate id {}", cells[0]),
            ));
        }
    }
    Ok(scores)
}

pub fn write_scores<W: Write>(
    mut writer: W,
    scores: &BTreeMap<String, f64>,
) -> std::io::Result<()> {
    writeln!(writer, "id,score")?;
    for (id, v) in scores {
        writeln!(writer, "{id},{v}")?;
    }
    Ok(())
}

/// Write a score table as `<csv_path>` plus its sidecar metadata JSON.
pub fn write_score_table(
    csv_path: &Path,
    meta_path: &Path,
    table: &ScoreTable,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(csv_path)?);
    write_scores(&mut w, &table.scores)?;
    w.flush()?;
    let meta = ScoreMeta {
        method: table.method.clone(),
        params: table.params.clone(),
        orientation: table.orientation,
    };
    let mut w = BufWriter::new(File::create(meta_path)?);
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Read a score table from its CSV and sidecar metadata JSON.
pub fn read_score_table(csv_path: &Path, meta_path: &Path) -> Result<ScoreTable, ParseError> {
    let scores = parse_scores(BufReader::new(File::open(csv_path)?))?;
    let meta: ScoreMeta = serde_json::from_reader(BufReader::new(File::open(meta_path)?))
        .map_err(|e| ParseError::Format(format!("bad score metadata: {e}")))?;
    ScoreTable::new(meta.method, meta.params, meta.orientation, scores)
        .map_err(|e| ParseError::Format(e.to_string()))
}

// ---------------------------------------------------------------------------
// PGM images

struct PgmTokenizer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmTokenizer<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        PgmTokenizer { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, ParseError> {
        let tok = self
            .token()
            .ok_or_else(|| ParseError::Format(format!("truncated header: missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ParseError::Format(format!("bad {what} in header")))
    }
}

/// Parse a P2 (ASCII) or P5 (binary) portable graymap. Intensities are
/// rescaled to `[0, 255]` by `255 / maxval`.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, ParseError> {
    let mut tok = PgmTokenizer::new(bytes);
    let magic = tok
        .token()
        .ok_or_else(|| ParseError::Format("bad magic: empty file".into()))?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(ParseError::Format(format!(
                "bad magic `{}`",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = tok.number("width")? as usize;
    let height = tok.number("height")? as usize;
    let maxval = tok.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ParseError::Format("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ParseError::Format(format!("maxval {maxval} out of range")));
    }
    let scale = 255.0 / maxval as f64;
    let n = width * height;
    let mut data = Vec::with_capacity(n);

    if binary {
        // Exactly one whitespace byte separates the header from the payload.
        let payload = &bytes[tok.pos + 1..];
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if payload.len() < need {
            return Err(ParseError::Format(format!(
                "truncated payload: need {need} bytes, have {}",
                payload.len()
            )));
        }
        if payload.len() > need {
            return Err(ParseError::Format("trailing data after payload".into()));
        }
        for i in 0..n {
            let raw = if wide {
                u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]) as u32
            } else {
                payload[i] as u32
            };
            if raw > maxval {
                return Err(ParseError::Format(format!(
                    "pixel value {raw} exceeds maxval {maxval}"
                )));
            }
            data.push(raw as f64 * scale);
        }
    } else {
        for _ in 0..n {
            let tok = tok
                .token()
                .ok_or_else(|| ParseError::Format("truncated payload".into()))?;
            let raw: u32 = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    ParseError::Format(format!("bad pixel `{}`", String::from_utf8_lossy(tok)))
                })?;
            if raw > maxval {
                return Err(ParseError::Format(format!(
                    "pixel value {raw} exceeds maxval {maxval}"
                )));
            }
            data.push(raw as f64 * scale);
        }
        if tok.token().is_some() {
            return Err(ParseError::Format("trailing data after payload".into()));
        }
    }
    GrayImage::new(height, width, data).map_err(|e| ParseError::Format(e.to_string()))
}

pub fn parse_pgm_file(path: &Path) -> Result<GrayImage, ParseError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_pgm(&bytes)
}

/// Encode as binary P5 with maxval 255; intensities are rounded to the
/// nearest integer.
pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn write_pgm_file(path: &Path, image: &GrayImage) -> std::io::Result<()> {
    std::fs::write(path, write_pgm(image))
}

// ---------------------------------------------------------------------------
// Token feature sequences (probe inputs)

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    id: String,
    label: Option<u8>,
    tokens: Vec<Vec<f64>>,
}

/// Parse line-delimited token feature sequences:
/// `{"id":str, "label":0|1|null, "tokens":[[...],...]}`.
pub fn parse_sequences<R: BufRead>(reader: R) -> Result<Vec<TokenFeatureSequence>, ParseError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SequenceRecord = serde_json::from_str(&line)
            .map_err(|e| ParseError::at(line_no, format!("malformed sequence record: {e}")))?;
        let label = match record.label {
            None => None,
            Some(v) => Some(Label::from_u8(v).map_err(|e| ParseError::at(line_no, e))?),
        };
        if !seen.insert(record.id.clone()) {
            return Err(ParseError::at(
                line_no,
                format!("duplicate id {}", record.id),
            ));
        }
        let seq = TokenFeatureSequence::new(record.id, record.tokens, label)
            .map_err(|e| ParseError::at(line_no, e))?;
        out.push(seq);
    }
    Ok(out)
}

pub fn parse_sequences_file(path: &Path) -> Result<Vec<TokenFeatureSequence>, ParseError> {
    parse_sequences(BufReader::new(File::open(path)?))
}

pub fn write_sequences<W: Write>(
    mut writer: W,
    sequences: &[TokenFeatureSequence],
) -> std::io::Result<()> {
    for seq in sequences {
        let record = SequenceRecord {
            id: seq.id.clone(),
            label: seq.label.map(Label::as_u8),
            tokens: seq.tokens.clone(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_sequences_file(
    path: &Path,
    sequences: &[TokenFeatureSequence],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_sequences(&mut w, sequences)?;
    w.flush()
}
