//! JSON schemas handed to the backend's structured-output parameter.

use serde_json::{json, Value};

use crate::quality_model::{ModelKind, QualityModel};

use super::Task;

/// Which output document the backend must produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseSchema {
    Invest { criteria: Vec<String> },
    Rti,
    Dor { criteria: Vec<String> },
}

impl ResponseSchema {
    /// Schema for assessing against `model`. RTI models map to the fixed
    /// verdict schema.
    pub fn for_model(model: &QualityModel) -> Self {
        let criteria = model.criterion_ids().map(str::to_owned).collect();
        match model.kind {
            ModelKind::Invest => ResponseSchema::Invest { criteria },
            ModelKind::Rti => ResponseSchema::Rti,
            ModelKind::CustomDor => ResponseSchema::Dor { criteria },
        }
    }

    pub fn task(&self) -> Task {
        match self {
            ResponseSchema::Invest { .. } => Task::Invest,
            ResponseSchema::Rti => Task::Rti,
            ResponseSchema::Dor { .. } => Task::Dor,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ResponseSchema::Invest { .. } => "invest_assessment",
            ResponseSchema::Rti => "rti_assessment",
            ResponseSchema::Dor { .. } => "dor_assessment",
        }
    }

    pub fn criteria(&self) -> &[String] {
        match self {
            ResponseSchema::Invest { criteria } | ResponseSchema::Dor { criteria } => criteria,
            ResponseSchema::Rti => &[],
        }
    }

    pub fn to_json_schema(&self) -> Value {
        match self {
            ResponseSchema::Rti => json!({
                "type": "object",
                "properties": {
                    "explanation": {"type": "string"},
                    "ready": {"type": "boolean"},
                    "score": score_schema(),
                },
                "required": ["explanation", "ready", "score"],
                "additionalProperties": false,
            }),
            ResponseSchema::Invest { criteria } | ResponseSchema::Dor { criteria } => json!({
                "type": "object",
                "properties": {
                    "assessments": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "criterion_id": {"type": "string", "enum": criteria},
                                "score": score_schema(),
                                "explanation": {"type": "string"},
                                "problems": {"type": "array", "items": problem_schema()},
                            },
                            "required": ["criterion_id", "score", "explanation", "problems"],
                            "additionalProperties": false,
                        },
                    },
                },
                "required": ["assessments"],
                "additionalProperties": false,
            }),
        }
    }
}

fn score_schema() -> Value {
    json!({"type": "integer", "enum": [1, 2, 3, 4], "description": "1 is the worst, 4 the best"})
}

fn problem_schema() -> Value {
    json!({
        "type": "object",
        "properties": {
            "description": {"type": "string"},
            "explanation": {"type": "string"},
            "severity": {"type": "string", "enum": ["low", "medium", "high"]},
            "solutions": {"type": "array", "items": {"type": "string"}},
        },
        "required": ["description", "explanation", "severity", "solutions"],
        "additionalProperties": false,
    })
}
