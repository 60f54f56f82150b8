//! Quality models: the criteria a story is assessed against.
//!
//! Two models ship built in (INVEST and the summative ready-to-implement
//! criterion). Company-specific Definition-of-Ready models are loaded from
//! `.qm.json` documents of the form
//!
//! ```json
//! {"id": "...", "name": "...", "kind": "invest|rti|custom_dor",
//!  "criteria": [{"id": "...", "title": "...", "definition": "...", "statements": ["..."]}]}
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;

/// File extension for quality model documents.
pub const MODEL_FILE_EXTENSION: &str = ".qm.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed model document at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid quality model: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Invest,
    Rti,
    CustomDor,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Invest => "invest",
            ModelKind::Rti => "rti",
            ModelKind::CustomDor => "custom_dor",
        })
    }
}

/// A sub-aspect sentence of a criterion. Labelling records point at
/// statements by `index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Criterion {
    pub id: String,
    pub title: String,
    pub definition: Option<String>,
    pub statements: Vec<Statement>,
}

impl Criterion {
    /// Number of agreement rows a labeller fills in for this criterion.
    /// Criteria without statements still get one row.
    pub fn label_rows(&self) -> usize {
        self.statements.len().max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ModelDocument", try_from = "ModelDocument")]
pub struct QualityModel {
    pub id: String,
    pub name: String,
    pub kind: ModelKind,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    id: String,
    name: String,
    kind: ModelKind,
    criteria: Vec<CriterionDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriterionDocument {
    id: String,
    title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    definition: Option<String>,
    #[serde(default)]
    statements: Vec<String>,
}

impl From<QualityModel> for ModelDocument {
    fn from(model: QualityModel) -> Self {
        ModelDocument {
            id: model.id,
            name: model.name,
            kind: model.kind,
            criteria: model
                .criteria
                .into_iter()
                .map(|c| CriterionDocument {
                    id: c.id,
                    title: c.title,
                    definition: c.definition,
                    statements: c.statements.into_iter().map(|s| s.text).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDocument> for QualityModel {
    type Error = ModelError;

    fn try_from(doc: ModelDocument) -> Result<Self, Self::Error> {
        let model = QualityModel {
            id: doc.id,
            name: doc.name,
            kind: doc.kind,
            criteria: doc
                .criteria
                .into_iter()
                .map(|c| Criterion {
                    id: c.id,
                    title: c.title,
                    definition: c.definition,
                    statements: c
                        .statements
                        .into_iter()
                        .enumerate()
                        .map(|(index, text)| Statement { index, text })
                        .collect(),
                })
                .collect(),
        };
        model.validate()?;
        Ok(model)
    }
}

impl QualityModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |msg: String| Err(ModelError::Validation(msg));
        if self.id.trim().is_empty() {
            return invalid("model id is empty".into());
        }
        if self.criteria.is_empty() {
            return invalid(format!("model '{}' has no criteria", self.id));
        }
        if self.kind == ModelKind::Rti && self.criteria.len() != 1 {
            return invalid(format!(
                "rti model '{}' must have exactly one criterion, found {}",
                self.id,
                self.criteria.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for c in &self.criteria {
            if c.id.trim().is_empty() {
                return invalid("criterion id is empty".into());
            }
            if !seen.insert(c.id.as_str()) {
                return invalid(format!("duplicate criterion id '{}'", c.id));
            }
            if c.title.trim().is_empty() {
                return invalid(format!("criterion '{}' has an empty title", c.id));
            }
            match self.kind {
                ModelKind::Invest | ModelKind::Rti if c.statements.is_empty() => {
                    return invalid(format!("criterion '{}' has no statements", c.id));
                }
                ModelKind::CustomDor
                    if c.definition.as_deref().is_none_or(|d| d.trim().is_empty()) =>
                {
                    return invalid(format!("criterion '{}' has no definition", c.id));
                }
                _ => {}
            }
            for s in &c.statements {
                if s.text.trim().is_empty() {
                    return invalid(format!(
                        "criterion '{}' statement {} is empty",
                        c.id, s.index
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn criterion(&self, id: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn criterion_ids(&self) -> impl Iterator<Item = &str> {
        self.criteria.iter().map(|c| c.id.as_str())
    }

    /// Canonical document text, suitable for writing a `.qm.json` file.
    pub fn to_document(&self) -> String {
        canonical::to_canonical_string(self).expect("quality models always serialize")
    }

    /// Pretty-printed document text for hand editing.
    pub fn to_pretty_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("quality models always serialize")
    }
}

/// Parses and validates a quality model document.
pub fn load_quality_model(document: &str) -> Result<QualityModel, ModelError> {
    // Parse the untyped form first so syntax errors keep their position,
    // then validate structure.
    let doc: ModelDocument = serde_json::from_str(document).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ModelError::Validation(e.to_string()),
        _ => ModelError::Format {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
    })?;
    QualityModel::try_from(doc)
}

fn criterion(id: &str, title: &str, statements: &[&str]) -> Criterion {
    Criterion {
        id: id.to_owned(),
        title: title.to_owned(),
        definition: None,
        statements: statements
            .iter()
            .enumerate()
            .map(|(index, text)| Statement {
                index,
                text: (*text).to_owned(),
            })
            .collect(),
    }
}

/// INVEST criteria with their three labelling statements each.
pub fn builtin_invest() -> QualityModel {
    QualityModel {
        id: "invest".into(),
        name: "INVEST".into(),
        kind: ModelKind::Invest,
        criteria: vec![
            criterion(
                "independent",
                "User story is independent.",
                &[
                    "The user story describes a single, specific task or feature.",
                    "The user story can be implemented independently of other user stories.",
                    "The user story has minimal dependencies on other stories or external factors.",
                ],
            ),
            criterion(
                "negotiable",
                "User story is negotiable.",
                &[
                    "The user story is open to discussion and refinement.",
                    "The requirements and details of the user story are flexible and adaptable.",
                    "The story can be modified or adjusted as more information becomes available.",
                ],
            ),
            criterion(
                "valuable",
                "User story is valuable.",
                &[
                    "The user story provides value to the end-user or customer.",
                    "The user story is aligned with the project\u{2019}s goals and objectives.",
                    "The user story delivers a tangible benefit or solves a specific problem.",
                ],
            ),
            criterion(
                "estimable",
                "User story is estimable.",
                &[
                    "The user story can be estimated with a reasonable degree of accuracy.",
                    "The requirements and scope of the user story are clear and well-defined.",
                    "The development team can provide a rough estimate of the time and effort required to implement the story.",
                ],
            ),
            criterion(
                "small",
                "User story is small.",
                &[
                    "The user story is small and manageable.",
                    "The user story can be implemented within a single sprint or iteration.",
                    "The user story has a limited scope and a clear, focused objective.",
                ],
            ),
            criterion(
                "testable",
                "User story is testable.",
                &[
                    "The user story can be tested and verified.",
                    "The user story acceptance criteria are clear and well-defined.",
                    "The development team can write automated tests or create a test plan for the user story.",
                ],
            ),
        ],
    }
}

/// The summative ready-to-implement criterion with its four statements.
pub fn builtin_rti() -> QualityModel {
    QualityModel {
        id: "rti".into(),
        name: "Ready to Implement".into(),
        kind: ModelKind::Rti,
        criteria: vec![criterion(
            "rti",
            "User story is ready to implement.",
            &[
                "The user story fulfills acceptance criteria: Clear and understandable, consistent, validated, and realistic.",
                "The effort for the user story is estimated as story points.",
                "The user story description is sufficiently detailed.",
                "The user story description adheres to the predefined user story template.",
            ],
        )],
    }
}

/// A company Definition of Ready with thirteen criteria, shipped as an
/// example of a custom model.
pub fn example_dor() -> QualityModel {
    load_quality_model(include_str!("../models/definition-of-ready.qm.json"))
        .expect("bundled model is valid")
}

/// How much of each criterion goes into a prompt fragment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentStyle {
    /// Criterion titles only; the model works out the definitions itself.
    #[default]
    Titles,
    /// `<title>: <definition or statements>`.
    Full,
}

/// Renders the criteria list substituted into `{custom_prompt}` or `{dor}`.
/// One line per criterion, in model order, no trailing newline.
pub fn render_criteria_fragment(model: &QualityModel, style: FragmentStyle) -> String {
    model
        .criteria
        .iter()
        .map(|c| {
            let body = match (&c.definition, c.statements.is_empty()) {
                (Some(def), _) => def.clone(),
                (None, false) => c
                    .statements
                    .iter()
                    .map(|s| s.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                (None, true) => String::new(),
            };
            match style {
                FragmentStyle::Full if !body.is_empty() => format!("{}: {}", c.title, body),
                _ => c.title.clone(),
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The four-point agreement scale. There is deliberately no neutral level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementLevel {
    StronglyDisagree = 1,
    Disagree = 2,
    Agree = 3,
    StronglyAgree = 4,
}

impl AgreementLevel {
    pub const ALL: [AgreementLevel; 4] = [
        AgreementLevel::StronglyDisagree,
        AgreementLevel::Disagree,
        AgreementLevel::Agree,
        AgreementLevel::StronglyAgree,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            AgreementLevel::StronglyDisagree => "Strongly disagree",
            AgreementLevel::Disagree => "Disagree",
            AgreementLevel::Agree => "Agree",
            AgreementLevel::StronglyAgree => "Strongly agree",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.label() == label)
    }

    pub fn from_value(value: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.value() == value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOR: &str = include_str!("../models/definition-of-ready.qm.json");

    #[test]
    fn invest_has_six_criteria_with_three_statements() {
        let m = builtin_invest();
        let ids: Vec<_> = m.criterion_ids().collect();
        assert_eq!(
            ids,
            [
                "independent",
                "negotiable",
                "valuable",
                "estimable",
                "small",
                "testable"
            ]
        );
        assert!(m.criteria.iter().all(|c| c.statements.len() == 3));
        assert_eq!(
            m.criteria[0].statements[0].text,
            "The user story describes a single, specific task or feature."
        );
        m.validate().unwrap();
        assert_eq!(m, builtin_invest());
    }

    #[test]
    fn rti_has_one_criterion_with_four_statements() {
        let m = builtin_rti();
        assert_eq!(m.criteria.len(), 1);
        assert_eq!(m.criteria[0].statements.len(), 4);
        assert!(m.criteria[0].statements[1]
            .text
            .contains("estimated as story points"));
        assert_eq!(m, builtin_rti());
    }

    #[test]
    fn loads_definition_of_ready() {
        let m = load_quality_model(DOR).unwrap();
        assert_eq!(m.kind, ModelKind::CustomDor);
        assert_eq!(m.criteria.len(), 13);
        assert!(m.criteria.iter().all(|c| c.statements.is_empty()));
    }

    #[test]
    fn rejects_empty_criteria() {
        let err = load_quality_model(r#"{"id":"x","name":"X","kind":"custom_dor","criteria":[]}"#)
            .unwrap_err();
        assert!(matches!(err, ModelError::Validation(_)), "{err:?}");
    }

    #[test]
    fn rejects_duplicate_ids() {
        let doc = r#"{"id":"x","name":"X","kind":"custom_dor","criteria":[
            {"id":"a","title":"A","definition":"d"},{"id":"a","title":"B","definition":"d"}]}"#;
        let err = load_quality_model(doc).unwrap_err();
        assert!(err.to_string().contains("duplicate criterion id 'a'"));
    }

    #[test]
    fn rejects_multi_criterion_rti() {
        let doc = r#"{"id":"x","name":"X","kind":"rti","criteria":[
            {"id":"a","title":"A","statements":["s"]},{"id":"b","title":"B","statements":["s"]}]}"#;
        assert!(matches!(
            load_quality_model(doc),
            Err(ModelError::Validation(_))
        ));
    }

    #[test]
    fn dor_requires_definition() {
        let doc =
            r#"{"id":"x","name":"X","kind":"custom_dor","criteria":[{"id":"a","title":"A"}]}"#;
        assert!(load_quality_model(doc).is_err());
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = load_quality_model("{\n  \"id\": \"x\",\n  oops\n}").unwrap_err();
        match err {
            ModelError::Format { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn document_round_trip() {
        for m in [
            builtin_invest(),
            builtin_rti(),
            load_quality_model(DOR).unwrap(),
        ] {
            let again = load_quality_model(&m.to_document()).unwrap();
            assert_eq!(again, m);
            assert_eq!(load_quality_model(&m.to_pretty_document()).unwrap(), m);
        }
    }

    #[test]
    fn invest_fragment_titles() {
        let text = render_criteria_fragment(&builtin_invest(), FragmentStyle::Titles);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0].starts_with("User story is independent."));
        assert_eq!(
            text,
            render_criteria_fragment(&builtin_invest(), FragmentStyle::Titles)
        );
    }

    #[test]
    fn full_fragment_joins_statements_or_definition() {
        let text = render_criteria_fragment(&builtin_invest(), FragmentStyle::Full);
        assert!(text.starts_with(
            "User story is independent.: The user story describes a single, specific task or feature. The user story can"
        ));
        let dor = load_quality_model(DOR).unwrap();
        let text = render_criteria_fragment(&dor, FragmentStyle::Full);
        assert_eq!(text.lines().count(), 13);
        assert_eq!(
            text.lines().next().unwrap(),
            "Acceptance Criteria (ACs): Clearly defined, consistent, validated by stakeholders, and realistic."
        );
    }

    #[test]
    fn single_criterion_fragment_is_one_line() {
        let text = render_criteria_fragment(&builtin_rti(), FragmentStyle::Full);
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn agreement_labels() {
        assert_eq!(
            AgreementLevel::from_label("Strongly disagree"),
            Some(AgreementLevel::StronglyDisagree)
        );
        assert_eq!(AgreementLevel::from_label("Neutral"), None);
        assert_eq!(AgreementLevel::StronglyAgree.value(), 4);
    }
}
