//! Study bookkeeping: expert profiles, labels, feedback and acceptance
//! surveys stored as flat files in a study directory, and the synthesis
//! tables computed from them.

mod outputs;
mod records;
mod store;
mod tables;

use std::path::PathBuf;

use thiserror::Error;

use crate::engine::ReportError;
use crate::metrics::MetricsError;
use crate::quality_model::{
    builtin_invest, builtin_rti, Criterion, ModelError, ModelKind, QualityModel,
};
use crate::story::StoryError;

pub use outputs::{
    acceptance_output, agreement_output, evaluation_outputs, feedback_output, report_outputs,
    tool_vs_expert_outputs, write_outputs, TableOutput,
};
pub use records::{
    AcceptanceItems, AcceptanceRecord, Construct, ExpertProfile, FeedbackCriterion, FeedbackRecord,
    FeedbackTarget, LabelRecord, RecordKind, StudyRecord,
};
pub use store::{write_atomic, RecordOutcome, StoryVersion, StudyDir, LOCK_FILE};
pub use tables::{
    acceptance_summary, agreement_by_company, expert_agreement_table, feedback_table,
    tool_vs_expert_report, AgreementRow, AgreementTable, ClassificationRow, ConstructSummary,
    DeviationRow, FeedbackColumn, FeedbackRow, FeedbackTable, Granularity, ToolVsExpertReport,
    ALL_COLUMN,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("rating {0} is outside 1..4")]
    Range(u8),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("unknown reference: {0}")]
    Referential(String),
    #[error("no report covers labelled stories: {}", .0.join(", "))]
    Coverage(Vec<String>),
    #[error("agreement needs exactly two experts{}, found {}: [{}]",
        company.as_ref().map(|c| format!(" in company '{c}'")).unwrap_or_default(),
        found.len(), found.join(", "))]
    ExpertCount {
        company: Option<String>,
        found: Vec<String>,
    },
    #[error("{kind} '{id}' not found")]
    NotFound { kind: &'static str, id: String },
    #[error("study directory {} is locked by another process", .0.display())]
    Locked(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("study directory opened read-only")]
    ReadOnly,
    #[error(transparent)]
    Story(#[from] StoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// Stable machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Range(_) => "range",
            HarnessError::Invalid(_) | HarnessError::Story(_) | HarnessError::Model(_) => {
                "validation"
            }
            HarnessError::Referential(_) => "referential",
            HarnessError::Coverage(_) => "coverage",
            HarnessError::ExpertCount { .. } => "expert_count",
            HarnessError::NotFound { .. } => "not_found",
            HarnessError::Locked(_) => "locked",
            HarnessError::Io { .. } => "io",
            HarnessError::Format { .. } | HarnessError::Report(_) => "format",
            HarnessError::ReadOnly => "read_only",
            HarnessError::Metrics(_) => "metrics",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

/// The quality models a study labels and assesses against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSet {
    pub invest: QualityModel,
    pub rti: QualityModel,
    pub dor: Option<QualityModel>,
}

impl Default for ModelSet {
    fn default() -> Self {
        ModelSet {
            invest: builtin_invest(),
            rti: builtin_rti(),
            dor: None,
        }
    }
}

impl ModelSet {
    pub fn new(
        invest: QualityModel,
        rti: QualityModel,
        dor: Option<QualityModel>,
    ) -> Result<Self, HarnessError> {
        let expect = |m: &QualityModel, kind: ModelKind| {
            if m.kind == kind {
                Ok(())
            } else {
                Err(HarnessError::Invalid(format!(
                    "model '{}' is {}, expected {kind}",
                    m.id, m.kind
                )))
            }
        };
        expect(&invest, ModelKind::Invest)?;
        expect(&rti, ModelKind::Rti)?;
        if let Some(d) = &dor {
            expect(d, ModelKind::CustomDor)?;
        }
        let set = ModelSet { invest, rti, dor };
        let mut seen = std::collections::BTreeSet::new();
        for id in set.criteria_order() {
            if !seen.insert(id.clone()) {
                return Err(HarnessError::Invalid(format!(
                    "criterion id '{id}' is used by more than one model"
                )));
            }
        }
        Ok(set)
    }

    pub fn models(&self) -> impl Iterator<Item = &QualityModel> {
        [&self.invest, &self.rti]
            .into_iter()
            .chain(self.dor.as_ref())
    }

    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.models().find_map(|m| m.criterion(id))
    }

    /// INVEST criteria, then RTI, then DoR, each in model order.
    pub fn criteria_order(&self) -> Vec<String> {
        self.models()
            .flat_map(|m| m.criteria.iter().map(|c| c.id.clone()))
            .collect()
    }
}
