//! Reading survey and label records from CSV, JSON Lines or JSON files.
//!
//! Every row becomes a JSON object first, so CSV and JSON inputs share the
//! record types' own deserializers. Ratings may be given as 1..4 or as the
//! agreement labels ("Strongly disagree" .. "Strongly agree").

use std::path::Path;

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

use deepquali_core::metrics::to_interval;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
    /// A single object or an array of objects.
    Json,
}

impl Format {
    fn detect(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "jsonl" | "ndjson" => Some(Format::Jsonl),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SurveyKind {
    Experts,
    Feedback,
    Acceptance,
}

/// Which fields need converting when they arrive as text.
pub struct Shape {
    pub integers: &'static [&'static str],
    pub lists: &'static [&'static str],
}

pub const LABEL_SHAPE: Shape = Shape {
    integers: &["statement_index"],
    lists: &[],
};
pub const FEEDBACK_SHAPE: Shape = Shape {
    integers: &[],
    lists: &[],
};
pub const ACCEPTANCE_SHAPE: Shape = Shape {
    integers: &["item_index"],
    lists: &[],
};
pub const EXPERT_SHAPE: Shape = Shape {
    integers: &[
        "years_in_organization",
        "years_in_position",
        "years_agile",
        "years_user_stories",
    ],
    lists: &["known_frameworks"],
};

/// Parses every row of `path` into `T`. Any bad row fails the whole file,
/// with one listed error per bad row.
pub fn read_records<T: DeserializeOwned>(
    path: &Path,
    format: Option<Format>,
    shape: &Shape,
) -> Result<Vec<T>, CliError> {
    let format = format.or_else(|| Format::detect(path)).ok_or_else(|| {
        CliError::Usage(format!(
            "cannot tell the format of {}; pass --format",
            path.display()
        ))
    })?;
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let rows = match format {
        Format::Csv => csv_rows(&text),
        Format::Jsonl => jsonl_rows(&text),
        Format::Json => json_rows(&text),
    };

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (line, row) in rows {
        match row
            .and_then(|v| normalize(v, shape))
            .and_then(|v| serde_json::from_value::<T>(v).map_err(|e| e.to_string()))
        {
            Ok(r) => records.push(r),
            Err(message) => errors.push(json!({ "line": line, "message": message })),
        }
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(CliError::Listing {
            code: "validation",
            message: format!("{} invalid row(s) in {}", errors.len(), path.display()),
            errors,
            summary: Value::Null,
        })
    }
}

type Row = (usize, Result<Value, String>);

fn csv_rows(text: &str) -> Vec<Row> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return vec![(1, Err(e.to_string()))],
    };
    reader
        .records()
        .map(|r| match r {
            Ok(record) => {
                let line = record.position().map_or(0, |p| p.line() as usize);
                let object: Map<String, Value> = headers
                    .iter()
                    .zip(record.iter())
                    .filter(|(_, v)| !v.is_empty())
                    .map(|(k, v)| (k.to_owned(), Value::String(v.to_owned())))
                    .collect();
                (line, Ok(Value::Object(object)))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                (line, Err(e.to_string()))
            }
        })
        .collect()
}

fn jsonl_rows(text: &str) -> Vec<Row> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
        .collect()
}

fn json_rows(text: &str) -> Vec<Row> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i + 1, Ok(v)))
            .collect(),
        Ok(v) => vec![(1, Ok(v))],
        Err(e) => vec![(e.line(), Err(e.to_string()))],
    }
}

/// Converts text ratings, integers and `;`-separated lists.
fn normalize(value: Value, shape: &Shape) -> Result<Value, String> {
    let Value::Object(mut object) = value else {
        return Err("expected an object".into());
    };
    if let Some(Value::String(s)) = object.get("rating") {
        let rating = parse_rating(s)?;
        object.insert("rating".into(), json!(rating));
    }
    for key in shape.integers {
        if let Some(Value::String(s)) = object.get(*key) {
            let n: u64 = s
                .parse()
                .map_err(|_| format!("{key} must be a non-negative integer, got '{s}'"))?;
            object.insert((*key).into(), json!(n));
        }
    }
    for key in shape.lists {
        if let Some(Value::String(s)) = object.get(*key) {
            let items: Vec<&str> = s
                .split(';')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .collect();
            object.insert((*key).into(), json!(items));
        }
    }
    Ok(Value::Object(object))
}

/// A rating written as a number or as an agreement label.
pub fn parse_rating(text: &str) -> Result<u64, String> {
    let text = text.trim();
    if let Ok(n) = text.parse::<u64>() {
        return Ok(n);
    }
    to_interval(text).map(u64::from).map_err(|e| e.to_string())
}
