use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Annotation token for one class column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Pos,
    Unk,
    Neg,
}

impl Label {
    fn parse(token: &str) -> Option<Self> {
        match token {
            "POS" => Some(Label::Pos),
            "UNK" => Some(Label::Unk),
            "NEG" => Some(Label::Neg),
            _ => None,
        }
    }
}

/// One annotated span of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub audiofile: String,
    pub start: f64,
    pub end: f64,
    pub labels: BTreeMap<String, Label>,
}

impl AnnotationRow {
    /// Classes marked POS on this row.
    pub fn positive_classes(&self) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == Label::Pos)
            .map(|(c, _)| c.as_str())
    }

    pub fn is_positive(&self) -> bool {
        self.labels.values().any(|l| *l == Label::Pos)
    }

    pub fn is_unknown(&self) -> bool {
        self.labels.values().any(|l| *l == Label::Unk)
    }
}

const REQUIRED: [&str; 3] = ["Audiofilename", "Starttime", "Endtime"];

/// Parses a DCASE annotation CSV: `Audiofilename,Starttime,Endtime` followed
/// by one or more class columns holding POS, UNK or NEG.
pub fn parse_annotations(csv_text: &str) -> Result<Vec<AnnotationRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();

    let mut cols = [0usize; 3];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(1, format!("missing header column {name}")))?;
    }
    let class_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !cols.contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if class_cols.is_empty() {
        return Err(Error::parse(1, "missing header column: at least one class column is required"));
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let time = |i: usize, name: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| Error::parse(line, format!("{name} {:?} is not a number", field(i))))
        };
        let start = time(cols[1], "Starttime")?;
        let end = time(cols[2], "Endtime")?;
        if start < 0.0 || start >= end {
            return Err(Error::parse(
                line,
                format!("need 0 <= Starttime < Endtime, got {start} and {end}"),
            ));
        }
        let mut labels = BTreeMap::new();
        for (i, name) in &class_cols {
            let token = field(*i);
            let label = Label::parse(token).ok_or_else(|| {
                Error::parse(line, format!("unknown token {token:?} in column {name}"))
            })?;
            labels.insert(name.clone(), label);
        }
        rows.push(AnnotationRow {
            audiofile: field(cols[0]).to_string(),
            start,
            end,
            labels,
        });
    }
    Ok(rows)
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}
