//! Validating parsers for backend output. Structured output constrains
//! the shape, but nothing guarantees it, so every field is checked here.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::quality_model::{ModelKind, QualityModel};

use super::{CriterionAssessment, Problem, RtiAssessment, Severity};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed output at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("output does not match the schema: {0}")]
    Schema(String),
    #[error("{field} is {value}, expected an integer in 1..4")]
    Range { field: String, value: String },
    #[error("output violates an invariant: {0}")]
    Invariant(String),
}

fn parse_json(raw: &str) -> Result<Value, ParseError> {
    serde_json::from_str(raw).map_err(|e| ParseError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>, ParseError> {
    v.as_object()
        .ok_or_else(|| ParseError::Schema(format!("{at} must be an object")))
}

/// A field that must be present (not null).
fn field<'a>(obj: &'a Map<String, Value>, name: &str, at: &str) -> Result<&'a Value, ParseError> {
    match obj.get(name) {
        None | Some(Value::Null) => Err(ParseError::Schema(format!("{at} is missing '{name}'"))),
        Some(v) => Ok(v),
    }
}

fn text(obj: &Map<String, Value>, name: &str, at: &str) -> Result<String, ParseError> {
    let s = field(obj, name, at)?
        .as_str()
        .ok_or_else(|| ParseError::Schema(format!("{at}.{name} must be a string")))?;
    if s.trim().is_empty() {
        return Err(ParseError::Invariant(format!("{at}.{name} is empty")));
    }
    Ok(s.to_owned())
}

fn score(v: &Value, at: &str) -> Result<u8, ParseError> {
    let n = v
        .as_i64()
        .ok_or_else(|| ParseError::Schema(format!("{at} must be an integer")))?;
    if !(1..=4).contains(&n) {
        return Err(ParseError::Range {
            field: at.to_owned(),
            value: n.to_string(),
        });
    }
    Ok(n as u8)
}

fn problem(v: &Value, at: &str) -> Result<Problem, ParseError> {
    let obj = object(v, at)?;
    let description = text(obj, "description", at)?;
    let explanation = text(obj, "explanation", at)?;
    let severity = field(obj, "severity", at)?
        .as_str()
        .and_then(Severity::parse)
        .ok_or_else(|| ParseError::Schema(format!("{at}.severity must be low, medium or high")))?;
    let solutions = field(obj, "solutions", at)?
        .as_array()
        .ok_or_else(|| ParseError::Schema(format!("{at}.solutions must be an array")))?
        .iter()
        .enumerate()
        .map(|(i, s)| match s.as_str() {
            Some(s) if !s.trim().is_empty() => Ok(s.to_owned()),
            Some(_) => Err(ParseError::Invariant(format!(
                "{at}.solutions[{i}] is empty"
            ))),
            None => Err(ParseError::Schema(format!(
                "{at}.solutions[{i}] must be a string"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if solutions.is_empty() {
        return Err(ParseError::Invariant(format!("{at} suggests no solution")));
    }
    Ok(Problem {
        description,
        explanation,
        severity,
        solutions,
    })
}

/// Parses a per-criterion assessment document for any criteria-based
/// model. Returns exactly one assessment per criterion, in model order.
pub fn parse_criteria_output(
    raw: &str,
    model: &QualityModel,
) -> Result<Vec<CriterionAssessment>, ParseError> {
    let root = parse_json(raw)?;
    let root = object(&root, "output")?;
    let entries = field(root, "assessments", "output")?
        .as_array()
        .ok_or_else(|| ParseError::Schema("assessments must be an array".into()))?;

    let mut slots: Vec<Option<CriterionAssessment>> = vec![None; model.criteria.len()];
    for (i, entry) in entries.iter().enumerate() {
        let at = format!("assessments[{i}]");
        let obj = object(entry, &at)?;
        let id = field(obj, "criterion_id", &at)?
            .as_str()
            .ok_or_else(|| ParseError::Schema(format!("{at}.criterion_id must be a string")))?;
        let slot = model
            .criteria
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| ParseError::Schema(format!("unknown criterion '{id}'")))?;
        if slots[slot].is_some() {
            return Err(ParseError::Schema(format!(
                "criterion '{id}' assessed twice"
            )));
        }
        let score = score(field(obj, "score", &at)?, &format!("{at}.score"))?;
        let explanation = text(obj, "explanation", &at)?;
        let problems = field(obj, "problems", &at)?
            .as_array()
            .ok_or_else(|| ParseError::Schema(format!("{at}.problems must be an array")))?
            .iter()
            .enumerate()
            .map(|(j, p)| problem(p, &format!("{at}.problems[{j}]")))
            .collect::<Result<Vec<_>, _>>()?;
        slots[slot] = Some(CriterionAssessment {
            criterion_id: id.to_owned(),
            score,
            explanation,
            problems,
        });
    }

    slots
        .into_iter()
        .zip(&model.criteria)
        .map(|(slot, c)| {
            slot.ok_or_else(|| {
                ParseError::Schema(format!(
                    "missing assessment for criterion '{}' ({})",
                    c.id, c.title
                ))
            })
        })
        .collect()
}

pub fn parse_invest_output(
    raw: &str,
    model: &QualityModel,
) -> Result<Vec<CriterionAssessment>, ParseError> {
    if model.kind != ModelKind::Invest {
        return Err(ParseError::Schema(format!(
            "model '{}' is {}, not invest",
            model.id, model.kind
        )));
    }
    parse_criteria_output(raw, model)
}

pub fn parse_dor_output(
    raw: &str,
    model: &QualityModel,
) -> Result<Vec<CriterionAssessment>, ParseError> {
    if model.kind != ModelKind::CustomDor {
        return Err(ParseError::Schema(format!(
            "model '{}' is {}, not custom_dor",
            model.id, model.kind
        )));
    }
    parse_criteria_output(raw, model)
}

/// Parses the ready-to-implement verdict. Either `ready` or `score` may be
/// absent; the missing half is derived from the other.
pub fn parse_rti_output(raw: &str) -> Result<RtiAssessment, ParseError> {
    let root = parse_json(raw)?;
    let obj = object(&root, "output")?;
    let explanation = text(obj, "explanation", "output")?;
    let ready = match obj.get("ready") {
        None | Some(Value::Null) => None,
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => return Err(ParseError::Schema("output.ready must be a boolean".into())),
    };
    let score = match obj.get("score") {
        None | Some(Value::Null) => None,
        Some(v) => Some(score(v, "output.score")?),
    };
    RtiAssessment::from_parts(explanation, ready, score)
        .ok_or_else(|| ParseError::Schema("output needs 'ready' or 'score'".into()))
}
