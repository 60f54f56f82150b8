//! Flags problem descriptions that quote text the story does not contain.
//! The lint only reports; it never edits an assessment.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::story::{to_canonical_text, UserStory};

use super::{CriterionAssessment, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingFinding {
    pub stage: Task,
    pub criterion_id: String,
    pub problem_index: usize,
    pub span: String,
}

/// Text between straight or curly double quotes, at least three characters.
pub fn quoted_spans(text: &str) -> Vec<String> {
    static QUOTED: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r#""([^"]{3,}?)"|“([^”]{3,}?)”"#).unwrap());
    QUOTED
        .captures_iter(text)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().trim().to_owned())
        .filter(|s| s.chars().count() >= 3)
        .collect()
}

pub fn lint_grounding(
    story: &UserStory,
    stage: Task,
    assessments: &[CriterionAssessment],
) -> Vec<GroundingFinding> {
    let canonical = to_canonical_text(story);
    let fields = story.text_fields();
    let grounded = |span: &str| canonical.contains(span) || fields.iter().any(|f| f.contains(span));
    let mut findings = Vec::new();
    for a in assessments {
        for (problem_index, p) in a.problems.iter().enumerate() {
            for span in quoted_spans(&p.description) {
                if !grounded(&span) {
                    findings.push(GroundingFinding {
                        stage,
                        criterion_id: a.criterion_id.clone(),
                        problem_index,
                        span,
                    });
                }
            }
        }
    }
    findings
}
