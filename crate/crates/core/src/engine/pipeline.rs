use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::quality_model::{render_criteria_fragment, FragmentStyle, ModelKind, QualityModel};
use crate::story::{story_digest, to_canonical_text, UserStory};

use super::backend::{invoke_llm, BackendError, LlmBackend};
use super::grounding::{lint_grounding, GroundingFinding};
use super::parse::{parse_criteria_output, parse_rti_output, ParseError};
use super::prompts::{bindings, render_prompt, PromptError, PromptPair, Task};
use super::schema::ResponseSchema;
use super::{CriterionAssessment, ExecutionParams, RtiAssessment};

pub const REPORT_FILE_EXTENSION: &str = ".report.json";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Error)]
pub enum AssessError {
    #[error("invalid assessment input: {0}")]
    Input(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Task,
        #[source]
        source: StageError,
    },
}

impl AssessError {
    fn at(stage: Task) -> impl FnOnce(StageError) -> AssessError {
        move |source| AssessError::Stage { stage, source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssessOptions {
    pub story_version: u32,
    /// Verbosity of the `{custom_prompt}` criteria list.
    pub invest_fragment: FragmentStyle,
    pub grounding_lint: bool,
}

impl Default for AssessOptions {
    fn default() -> Self {
        AssessOptions {
            story_version: 1,
            invest_fragment: FragmentStyle::Titles,
            grounding_lint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRefs {
    pub invest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDigests {
    pub invest: String,
    pub rti: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dor: Option<String>,
}

/// Everything one pipeline run produced, plus what it ran with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub report_id: String,
    pub story_id: String,
    pub story_version: u32,
    pub story_digest: String,
    pub backend: String,
    pub models: ModelRefs,
    pub params: ExecutionParams,
    pub invest: Vec<CriterionAssessment>,
    pub rti: RtiAssessment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dor: Option<Vec<CriterionAssessment>>,
    pub prompt_digests: PromptDigests,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<Vec<GroundingFinding>>,
    pub created_at: DateTime<Utc>,
}

impl AssessmentReport {
    pub fn to_canonical(&self) -> String {
        let mut v = serde_json::to_value(self).expect("reports always serialize");
        // Fixed precision keeps the text stable across round trips.
        v["created_at"] =
            Value::String(self.created_at.to_rfc3339_opts(SecondsFormat::Millis, true));
        canonical::canonicalize(&v)
    }

    /// Canonical text with the timestamp removed, for reproducibility checks.
    pub fn canonical_without_timestamp(&self) -> String {
        let mut v = serde_json::to_value(self).expect("reports always serialize");
        v.as_object_mut().unwrap().remove("created_at");
        canonical::canonicalize(&v)
    }

    /// Score the tool gave `criterion_id`, looking through every stage.
    pub fn score_for(&self, criterion_id: &str) -> Option<u8> {
        if criterion_id == "rti" {
            return Some(self.rti.score);
        }
        self.invest
            .iter()
            .chain(self.dor.iter().flatten())
            .find(|a| a.criterion_id == criterion_id)
            .map(|a| a.score)
    }

    /// Checks the report's own invariants.
    pub fn validate(&self) -> Result<(), String> {
        let check = |a: &CriterionAssessment| -> Result<(), String> {
            if !(1..=4).contains(&a.score) {
                return Err(format!(
                    "{}: score {} outside 1..4",
                    a.criterion_id, a.score
                ));
            }
            if a.explanation.trim().is_empty() {
                return Err(format!("{}: empty explanation", a.criterion_id));
            }
            for p in &a.problems {
                if p.description.trim().is_empty() || p.explanation.trim().is_empty() {
                    return Err(format!("{}: problem without description", a.criterion_id));
                }
                if p.solutions.is_empty() {
                    return Err(format!("{}: problem without solutions", a.criterion_id));
                }
            }
            Ok(())
        };
        self.invest
            .iter()
            .chain(self.dor.iter().flatten())
            .try_for_each(check)?;
        if !(1..=4).contains(&self.rti.score) || self.rti.explanation.trim().is_empty() {
            return Err("invalid rti assessment".into());
        }
        if self.dor.is_some() != self.models.dor.is_some() {
            return Err("dor assessments and dor model reference disagree".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
#[error("invalid report: {0}")]
pub struct ReportError(pub String);

pub fn parse_report(text: &str) -> Result<AssessmentReport, ReportError> {
    let report: AssessmentReport =
        serde_json::from_str(text).map_err(|e| ReportError(e.to_string()))?;
    report.validate().map_err(ReportError)?;
    Ok(report)
}

/// The `{invest_json}` binding: canonical JSON of the INVEST assessments,
/// in the same shape the backend produced them.
pub fn invest_json(assessments: &[CriterionAssessment]) -> String {
    canonical::to_canonical_string(&serde_json::json!({ "assessments": assessments }))
        .expect("assessments always serialize")
}

/// Identifies a run by everything that is known before the backend is
/// called: the initial prompts, the models, and the parameters.
pub fn request_key(
    invest_prompt: &PromptPair,
    dor_prompt: Option<&PromptPair>,
    models: &ModelRefs,
    params: &ExecutionParams,
) -> String {
    canonical::digest(&serde_json::json!({
        "invest": invest_prompt.digest(),
        "dor": dor_prompt.map(PromptPair::digest),
        "models": models,
        "params": params,
    }))
    .expect("request keys always serialize")
}

/// Prompts that can be rendered before any backend call.
#[derive(Debug, Clone)]
pub struct AssessmentPlan {
    pub invest_prompt: PromptPair,
    pub dor_prompt: Option<PromptPair>,
    pub models: ModelRefs,
    pub report_id: String,
}

impl AssessmentPlan {
    pub fn new(
        story: &UserStory,
        invest_model: &QualityModel,
        dor_model: Option<&QualityModel>,
        params: &ExecutionParams,
        options: &AssessOptions,
    ) -> Result<Self, AssessError> {
        story
            .validate()
            .map_err(|e| AssessError::Input(e.to_string()))?;
        params
            .validate()
            .map_err(|e| AssessError::Input(e.to_string()))?;
        if invest_model.kind != ModelKind::Invest {
            return Err(AssessError::Input(format!(
                "model '{}' is {}, expected invest",
                invest_model.id, invest_model.kind
            )));
        }
        if let Some(m) = dor_model.filter(|m| m.kind != ModelKind::CustomDor) {
            return Err(AssessError::Input(format!(
                "model '{}' is {}, expected custom_dor",
                m.id, m.kind
            )));
        }

        let story_json = to_canonical_text(story);
        let invest_prompt = render_prompt(
            Task::Invest,
            &bindings([
                (
                    "custom_prompt",
                    &render_criteria_fragment(invest_model, options.invest_fragment),
                ),
                ("user_story_json", &story_json),
            ]),
        )
        .map_err(|e| AssessError::at(Task::Invest)(e.into()))?;
        let dor_prompt = dor_model
            .map(|m| {
                render_prompt(
                    Task::Dor,
                    &bindings([
                        ("dor", &render_criteria_fragment(m, FragmentStyle::Full)),
                        ("user_story_json", &story_json),
                    ]),
                )
                .map_err(|e| AssessError::at(Task::Dor)(e.into()))
            })
            .transpose()?;
        let models = ModelRefs {
            invest: invest_model.id.clone(),
            dor: dor_model.map(|m| m.id.clone()),
        };
        let key = request_key(&invest_prompt, dor_prompt.as_ref(), &models, params);
        Ok(AssessmentPlan {
            report_id: format!("{}.v{}.{}", story.id, options.story_version, &key[..12]),
            invest_prompt,
            dor_prompt,
            models,
        })
    }
}

/// Runs INVEST, then ready-to-implement on the INVEST result, then the
/// optional Definition-of-Ready stage. Any stage failure aborts the run.
pub async fn assess_story(
    story: &UserStory,
    invest_model: &QualityModel,
    dor_model: Option<&QualityModel>,
    params: &ExecutionParams,
    backend: &dyn LlmBackend,
    options: &AssessOptions,
) -> Result<AssessmentReport, AssessError> {
    let plan = AssessmentPlan::new(story, invest_model, dor_model, params, options)?;

    let invest = run_criteria_stage(
        Task::Invest,
        &plan.invest_prompt,
        invest_model,
        params,
        backend,
    )
    .await?;

    let rti_prompt = render_prompt(
        Task::Rti,
        &bindings([("invest_json", &invest_json(&invest))]),
    )
    .map_err(|e| AssessError::at(Task::Rti)(e.into()))?;
    let raw = invoke_llm(backend, &rti_prompt, params, &ResponseSchema::Rti)
        .await
        .map_err(|e| AssessError::at(Task::Rti)(e.into()))?;
    let rti = parse_rti_output(&raw).map_err(|e| AssessError::at(Task::Rti)(e.into()))?;

    let dor = match (dor_model, &plan.dor_prompt) {
        (Some(model), Some(prompt)) => {
            Some(run_criteria_stage(Task::Dor, prompt, model, params, backend).await?)
        }
        _ => None,
    };

    let grounding = options.grounding_lint.then(|| {
        let mut findings = lint_grounding(story, Task::Invest, &invest);
        if let Some(d) = &dor {
            findings.extend(lint_grounding(story, Task::Dor, d));
        }
        findings
    });

    Ok(AssessmentReport {
        report_id: plan.report_id,
        story_id: story.id.clone(),
        story_version: options.story_version,
        story_digest: story_digest(story),
        backend: backend.descriptor(),
        models: plan.models,
        params: params.clone(),
        invest,
        rti,
        dor,
        prompt_digests: PromptDigests {
            invest: plan.invest_prompt.digest(),
            rti: rti_prompt.digest(),
            dor: plan.dor_prompt.as_ref().map(PromptPair::digest),
        },
        grounding,
        created_at: Utc::now(),
    })
}

async fn run_criteria_stage(
    stage: Task,
    prompt: &PromptPair,
    model: &QualityModel,
    params: &ExecutionParams,
    backend: &dyn LlmBackend,
) -> Result<Vec<CriterionAssessment>, AssessError> {
    let raw = invoke_llm(backend, prompt, params, &ResponseSchema::for_model(model))
        .await
        .map_err(|e| AssessError::at(stage)(e.into()))?;
    parse_criteria_output(&raw, model).map_err(|e| AssessError::at(stage)(e.into()))
}
