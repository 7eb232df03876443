//! Contract CSV ingestion (`title,clause_text,label_safe,risk_tier`).

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::corpus::{one_hot, ContractDoc, Corpus, DocKind, Vocab, RISKY_TITLE_WORDS};
use crate::error::{Error, Result};
use crate::rng;

pub const COLUMNS: [&str; 4] = ["title", "clause_text", "label_safe", "risk_tier"];

/// One parsed row before tokenization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRow {
    pub title: String,
    pub clause_text: String,
    pub label_safe: bool,
    pub risk_tier: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line in the file, header included.
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: Vec<RawRow>,
    pub errors: Vec<RowError>,
    pub warnings: Vec<String>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Parse rows, collecting per-row problems instead of failing. A missing
/// column fails the whole file.
pub fn read_rows(input: impl Read) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let mut report = IngestReport::default();
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        report.warnings.push("input is empty; no documents ingested".into());
        return Ok(report);
    }
    let mut index = [0usize; 4];
    for (slot, col) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| Error::Data(format!("missing column `{col}`")))?;
    }
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(index[i]);
        let (Some(title), Some(clause), Some(label), Some(tier)) = (field(0), field(1), field(2), field(3)) else {
            report.errors.push(RowError {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
            continue;
        };
        let Some(label_safe) = parse_bool(label) else {
            report.errors.push(RowError {
                line,
                message: format!("label_safe `{label}` is not a boolean"),
            });
            continue;
        };
        let risk_tier = match tier.trim().parse::<usize>() {
            Ok(t) if t <= 3 => t,
            _ => {
                report.errors.push(RowError {
                    line,
                    message: format!("risk_tier `{tier}` is not in 0..=3"),
                });
                continue;
            }
        };
        report.rows.push(RawRow {
            title: title.to_owned(),
            clause_text: clause.to_owned(),
            label_safe,
            risk_tier,
        });
    }
    if report.rows.is_empty() && report.errors.is_empty() {
        report.warnings.push("input has no rows; no documents ingested".into());
    }
    Ok(report)
}

pub fn read_rows_from_path(path: &Path) -> Result<IngestReport> {
    read_rows(std::fs::File::open(path)?)
}

/// A risky row whose title carries none of the risky title words.
pub fn looks_like_trap(row: &RawRow) -> bool {
    !row.label_safe
        && row.risk_tier >= 1
        && !row
            .title
            .split_whitespace()
            .any(|w| RISKY_TITLE_WORDS.contains(&w.to_lowercase().as_str()))
}

pub fn to_doc(row: &RawRow, vocab: &Vocab) -> ContractDoc {
    ContractDoc {
        title: vocab.encode(&row.title),
        clause: vocab.encode(&row.clause_text),
        label_safe: row.label_safe,
        is_trap: looks_like_trap(row),
        risk: one_hot(row.risk_tier),
        kind: DocKind::External,
    }
}

/// Shuffle rows, hold out `test_fraction` of them, and build the vocabulary
/// from the training rows only.
pub fn corpus_from_rows(rows: &[RawRow], test_fraction: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng::stream(seed, "safesigner/ingest"));
    let n_test = (rows.len() as f64 * test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut vocab = Vocab::new();
    for &i in train_idx {
        vocab.encode_growing(&rows[i].title);
        vocab.encode_growing(&rows[i].clause_text);
    }
    let docs = |idx: &[usize]| idx.iter().map(|&i| to_doc(&rows[i], &vocab)).collect::<Vec<_>>();
    Ok(Corpus {
        train: docs(train_idx),
        test: docs(test_idx),
        vocab,
    })
}
