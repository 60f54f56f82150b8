//! The assessment pipeline: render prompts, call a chat-completion backend
//! with structured output, parse and validate what comes back, and chain
//! INVEST, ready-to-implement, and optional Definition-of-Ready stages into
//! one report.

mod backend;
mod grounding;
mod parse;
mod pipeline;
mod prompts;
mod remote;
mod schema;
mod stub;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    invoke_llm, BackendError, BoundedBackend, ChatMessage, ChatRequest, Completion, LlmBackend,
};
pub use grounding::{lint_grounding, quoted_spans, GroundingFinding};
pub use parse::{
    parse_criteria_output, parse_dor_output, parse_invest_output, parse_rti_output, ParseError,
};
pub use pipeline::{
    assess_story, invest_json, parse_report, request_key, AssessError, AssessOptions,
    AssessmentPlan, AssessmentReport, ModelRefs, PromptDigests, ReportError, StageError,
    REPORT_FILE_EXTENSION,
};
pub use prompts::{
    bindings, render_prompt, PromptError, PromptPair, Task, DOR_TEMPLATE, INVEST_TEMPLATE,
    RTI_TEMPLATE, SYSTEM_PROMPT,
};
pub use remote::{RemoteBackend, RetryPolicy, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL};
pub use schema::ResponseSchema;
pub use stub::StubBackend;

pub const DEFAULT_MODEL_NAME: &str = "gpt-4o";
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

/// LLM sampling parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionParams {
    pub model_name: String,
    pub temperature: f64,
    pub seed: Option<i64>,
    pub max_tokens: u32,
    pub stop: Option<Vec<String>>,
    pub presence_penalty: f64,
    pub frequency_penalty: f64,
}

impl Default for ExecutionParams {
    fn default() -> Self {
        ExecutionParams {
            model_name: DEFAULT_MODEL_NAME.to_owned(),
            temperature: 0.0,
            seed: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: None,
            presence_penalty: 0.0,
            frequency_penalty: 0.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid execution parameters: {0}")]
pub struct ParamsError(pub String);

impl ExecutionParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.model_name.trim().is_empty() {
            return Err(ParamsError("model name is empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ParamsError(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ParamsError("max_tokens must be at least 1".into()));
        }
        for (name, v) in [
            ("presence_penalty", self.presence_penalty),
            ("frequency_penalty", self.frequency_penalty),
        ] {
            if !v.is_finite() {
                return Err(ParamsError(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl Severity {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(Severity::Low),
            "medium" => Some(Severity::Medium),
            "high" => Some(Severity::High),
            _ => None,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        })
    }
}

/// A specific quality deficit with suggested fixes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub description: String,
    pub explanation: String,
    pub severity: Severity,
    pub solutions: Vec<String>,
}

/// Score (1 worst .. 4 best) and reasoning for one criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionAssessment {
    pub criterion_id: String,
    pub score: u8,
    pub explanation: String,
    pub problems: Vec<Problem>,
}

/// The ready-to-implement verdict, kept both as a binary decision and on
/// the four-point scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtiAssessment {
    pub explanation: String,
    pub ready: bool,
    pub score: u8,
}

impl RtiAssessment {
    /// Fills in whichever half of the verdict the backend left out.
    pub fn from_parts(explanation: String, ready: Option<bool>, score: Option<u8>) -> Option<Self> {
        let (ready, score) = match (ready, score) {
            (Some(r), Some(s)) => (r, s),
            (None, Some(s)) => (s >= 3, s),
            (Some(r), None) => (r, if r { 4 } else { 1 }),
            (None, None) => return None,
        };
        Some(RtiAssessment {
            explanation,
            ready,
            score,
        })
    }
}
