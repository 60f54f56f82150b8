use std::fmt;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Background of one participating expert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertProfile {
    pub expert_id: String,
    pub company_id: String,
    #[serde(default)]
    pub role: String,
    #[serde(default)]
    pub years_in_organization: u32,
    #[serde(default)]
    pub years_in_position: u32,
    #[serde(default)]
    pub years_agile: u32,
    #[serde(default)]
    pub years_user_stories: u32,
    #[serde(default)]
    pub known_frameworks: Vec<String>,
    #[serde(default)]
    pub gai_experience: String,
}

impl ExpertProfile {
    pub fn new(expert_id: &str, company_id: &str) -> Self {
        ExpertProfile {
            expert_id: expert_id.into(),
            company_id: company_id.into(),
            role: String::new(),
            years_in_organization: 0,
            years_in_position: 0,
            years_agile: 0,
            years_user_stories: 0,
            known_frameworks: Vec::new(),
            gai_experience: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.expert_id.trim().is_empty() || self.company_id.trim().is_empty() {
            return Err(HarnessError::Invalid(
                "expert_id and company_id must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

fn check_rating(rating: u8) -> Result<(), HarnessError> {
    if (1..=4).contains(&rating) {
        Ok(())
    } else {
        Err(HarnessError::Range(rating))
    }
}

/// An expert's agreement with one statement about one story.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub expert_id: String,
    pub story_id: String,
    pub criterion_id: String,
    pub statement_index: usize,
    pub rating: u8,
}

/// The eight aspects on which experts rated the tool's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeedbackCriterion {
    Accurate,
    Complete,
    Relevant,
    #[serde(rename = "Explainable & Clear", alias = "Explainable and Clear")]
    ExplainableClear,
    Actionable,
    Consistent,
    #[serde(rename = "Context-driven")]
    ContextDriven,
    #[serde(rename = "Quality-conform", alias = "Quality conform")]
    QualityConform,
}

impl FeedbackCriterion {
    pub const ALL: [FeedbackCriterion; 8] = [
        FeedbackCriterion::Accurate,
        FeedbackCriterion::Complete,
        FeedbackCriterion::Relevant,
        FeedbackCriterion::ExplainableClear,
        FeedbackCriterion::Actionable,
        FeedbackCriterion::Consistent,
        FeedbackCriterion::ContextDriven,
        FeedbackCriterion::QualityConform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackCriterion::Accurate => "Accurate",
            FeedbackCriterion::Complete => "Complete",
            FeedbackCriterion::Relevant => "Relevant",
            FeedbackCriterion::ExplainableClear => "Explainable & Clear",
            FeedbackCriterion::Actionable => "Actionable",
            FeedbackCriterion::Consistent => "Consistent",
            FeedbackCriterion::ContextDriven => "Context-driven",
            FeedbackCriterion::QualityConform => "Quality-conform",
        }
    }

    /// Accepts the canonical names and the spellings "Explainable and
    /// Clear" and "Quality conform".
    pub fn parse(name: &str) -> Option<Self> {
        match name.trim() {
            "Explainable and Clear" => Some(FeedbackCriterion::ExplainableClear),
            "Quality conform" => Some(FeedbackCriterion::QualityConform),
            n => Self::ALL.into_iter().find(|c| c.name() == n),
        }
    }
}

impl fmt::Display for FeedbackCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which part of the tool's output a feedback rating is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackTarget {
    Invest,
    Rti,
    Problems,
    Dor,
}

impl FeedbackTarget {
    pub const ALL: [FeedbackTarget; 4] = [
        FeedbackTarget::Invest,
        FeedbackTarget::Rti,
        FeedbackTarget::Problems,
        FeedbackTarget::Dor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackTarget::Invest => "invest",
            FeedbackTarget::Rti => "rti",
            FeedbackTarget::Problems => "problems",
            FeedbackTarget::Dor => "dor",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(name.trim()))
    }
}

impl fmt::Display for FeedbackTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub expert_id: String,
    pub story_id: String,
    pub target: FeedbackTarget,
    pub criterion: FeedbackCriterion,
    pub rating: u8,
}

/// The acceptance-model constructs kept in the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construct {
    PerformanceExpectancy,
    EffortExpectancy,
    FacilitatingConditions,
    BehavioralIntention,
}

impl Construct {
    pub const ALL: [Construct; 4] = [
        Construct::PerformanceExpectancy,
        Construct::EffortExpectancy,
        Construct::FacilitatingConditions,
        Construct::BehavioralIntention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Construct::PerformanceExpectancy => "performance_expectancy",
            Construct::EffortExpectancy => "effort_expectancy",
            Construct::FacilitatingConditions => "facilitating_conditions",
            Construct::BehavioralIntention => "behavioral_intention",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name.trim())
    }
}

impl fmt::Display for Construct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceRecord {
    pub expert_id: String,
    pub construct: Construct,
    pub item_index: usize,
    pub rating: u8,
}

/// Survey item texts per construct. The defaults are placeholders meant to
/// be replaced by the wording actually used in a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceItems {
    pub performance_expectancy: Vec<String>,
    pub effort_expectancy: Vec<String>,
    pub facilitating_conditions: Vec<String>,
    pub behavioral_intention: Vec<String>,
}

impl Default for AcceptanceItems {
    fn default() -> Self {
        let items = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        AcceptanceItems {
            performance_expectancy: items(&[
                "Using the tool would improve my work performance.",
                "The tool helps me find quality problems in user stories faster.",
            ]),
            effort_expectancy: items(&[
                "The tool is easy to use.",
                "Learning to work with the tool is easy for me.",
            ]),
            facilitating_conditions: items(&[
                "The tool fits into the environment I use for my daily work.",
                "I have the resources necessary to use the tool.",
            ]),
            behavioral_intention: items(&[
                "I intend to use the tool in my work.",
                "I would recommend the tool to colleagues.",
            ]),
        }
    }
}

impl AcceptanceItems {
    pub fn items(&self, construct: Construct) -> &[String] {
        match construct {
            Construct::PerformanceExpectancy => &self.performance_expectancy,
            Construct::EffortExpectancy => &self.effort_expectancy,
            Construct::FacilitatingConditions => &self.facilitating_conditions,
            Construct::BehavioralIntention => &self.behavioral_intention,
        }
    }
}

/// Any of the three survey record types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StudyRecord {
    Label(LabelRecord),
    Feedback(FeedbackRecord),
    Acceptance(AcceptanceRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Label,
    Feedback,
    Acceptance,
}

impl RecordKind {
    pub fn file_name(self) -> &'static str {
        match self {
            RecordKind::Label => "labels.jsonl",
            RecordKind::Feedback => "feedback.jsonl",
            RecordKind::Acceptance => "acceptance.jsonl",
        }
    }
}

impl StudyRecord {
    pub fn kind(&self) -> RecordKind {
        match self {
            StudyRecord::Label(_) => RecordKind::Label,
            StudyRecord::Feedback(_) => RecordKind::Feedback,
            StudyRecord::Acceptance(_) => RecordKind::Acceptance,
        }
    }

    pub fn expert_id(&self) -> &str {
        match self {
            StudyRecord::Label(r) => &r.expert_id,
            StudyRecord::Feedback(r) => &r.expert_id,
            StudyRecord::Acceptance(r) => &r.expert_id,
        }
    }

    pub fn rating(&self) -> u8 {
        match self {
            StudyRecord::Label(r) => r.rating,
            StudyRecord::Feedback(r) => r.rating,
            StudyRecord::Acceptance(r) => r.rating,
        }
    }

    /// Records with the same key replace each other.
    pub fn key(&self) -> String {
        match self {
            StudyRecord::Label(r) => format!(
                "label/{}/{}/{}/{}",
                r.expert_id, r.story_id, r.criterion_id, r.statement_index
            ),
            StudyRecord::Feedback(r) => format!(
                "feedback/{}/{}/{}/{}",
                r.expert_id, r.story_id, r.target, r.criterion
            ),
            StudyRecord::Acceptance(r) => format!(
                "acceptance/{}/{}/{}",
                r.expert_id, r.construct, r.item_index
            ),
        }
    }

    /// Checks the record on its own, without looking at the study.
    pub fn validate(&self) -> Result<(), HarnessError> {
        check_rating(self.rating())?;
        if self.expert_id().trim().is_empty() {
            return Err(HarnessError::Invalid("expert_id is empty".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> serde_json::Value {
        match self {
            StudyRecord::Label(r) => serde_json::to_value(r),
            StudyRecord::Feedback(r) => serde_json::to_value(r),
            StudyRecord::Acceptance(r) => serde_json::to_value(r),
        }
        .expect("records always serialize")
    }

    pub fn from_value(kind: RecordKind, value: serde_json::Value) -> serde_json::Result<Self> {
        Ok(match kind {
            RecordKind::Label => StudyRecord::Label(serde_json::from_value(value)?),
            RecordKind::Feedback => StudyRecord::Feedback(serde_json::from_value(value)?),
            RecordKind::Acceptance => StudyRecord::Acceptance(serde_json::from_value(value)?),
        })
    }
}

impl From<LabelRecord> for StudyRecord {
    fn from(r: LabelRecord) -> Self {
        StudyRecord::Label(r)
    }
}

impl From<FeedbackRecord> for StudyRecord {
    fn from(r: FeedbackRecord) -> Self {
        StudyRecord::Feedback(r)
    }
}

impl From<AcceptanceRecord> for StudyRecord {
    fn from(r: AcceptanceRecord) -> Self {
        StudyRecord::Acceptance(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_names_round_trip() {
        for c in FeedbackCriterion::ALL {
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{}\"", c.name()));
            assert_eq!(serde_json::from_str::<FeedbackCriterion>(&json).unwrap(), c);
            assert_eq!(FeedbackCriterion::parse(c.name()), Some(c));
        }
        assert_eq!(
            serde_json::from_str::<FeedbackCriterion>("\"Quality conform\"").unwrap(),
            FeedbackCriterion::QualityConform
        );
        assert_eq!(FeedbackCriterion::parse("Helpful"), None);
    }

    #[test]
    fn rating_range() {
        let label = |rating| {
            StudyRecord::Label(LabelRecord {
                expert_id: "e".into(),
                story_id: "s".into(),
                criterion_id: "small".into(),
                statement_index: 0,
                rating,
            })
        };
        assert!(label(4).validate().is_ok());
        assert!(matches!(label(5).validate(), Err(HarnessError::Range(5))));
        assert!(matches!(label(0).validate(), Err(HarnessError::Range(0))));
    }

    #[test]
    fn constructs_are_the_four_retained() {
        let items = AcceptanceItems::default();
        for c in Construct::ALL {
            assert!(!items.items(c).is_empty());
            assert_eq!(Construct::parse(c.name()), Some(c));
        }
        assert!(serde_json::from_str::<Construct>("\"social_influence\"").is_err());
    }
}
