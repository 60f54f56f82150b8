//! Offline backend. Answers from a fixture directory keyed by prompt
//! digest (`<digest>.json`), falling back to a seeded rule-based generator
//! that always produces schema-valid output.

use std::path::{Path, PathBuf};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::canonical;

use super::backend::{BackendError, ChatRequest, Completion, LlmBackend};
use super::ResponseSchema;

const STORY_MARKER: &str = "Here is the user story in JSON: ";
const EVALUATION_MARKER: &str = "Here is the user story evaluation: ";

#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    fixtures: Option<PathBuf>,
    seed: u64,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        StubBackend {
            fixtures: None,
            seed,
        }
    }

    pub fn with_fixtures(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fixtures = Some(dir.into());
        self
    }

    pub fn fixture_path(dir: &Path, prompt_digest: &str) -> PathBuf {
        dir.join(format!("{prompt_digest}.json"))
    }

    /// The rule-based answer for a request, ignoring fixtures.
    pub fn generate(&self, request: &ChatRequest) -> String {
        let prompt = request.prompt();
        let digest = prompt.digest();
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(digest.as_bytes());
        let bytes: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(bytes);

        let value = match &request.schema {
            ResponseSchema::Rti => {
                let evaluation = embedded_json(&prompt.user, EVALUATION_MARKER);
                rti_answer(evaluation.as_ref(), &mut rng)
            }
            ResponseSchema::Invest { criteria } | ResponseSchema::Dor { criteria } => {
                let story = embedded_json(&prompt.user, STORY_MARKER);
                let assessments: Vec<Value> = criteria
                    .iter()
                    .map(|id| {
                        let score = story
                            .as_ref()
                            .and_then(|s| rule_score(id, s))
                            .unwrap_or_else(|| rng.random_range(2..=4));
                        criterion_answer(id, score)
                    })
                    .collect();
                json!({ "assessments": assessments })
            }
        };
        canonical::canonicalize(&value)
    }
}

/// Parses the first JSON value following `marker`.
fn embedded_json(text: &str, marker: &str) -> Option<Value> {
    let start = text.find(marker)? + marker.len();
    let rest = &text[start..];
    let rest = &rest[rest.find(['{', '['])?..];
    serde_json::Deserializer::from_str(rest)
        .into_iter::<Value>()
        .next()?
        .ok()
}

fn count(story: &Value, field: &str) -> usize {
    story
        .get(field)
        .and_then(Value::as_array)
        .map_or(0, Vec::len)
}

fn text_len(story: &Value, field: &str) -> usize {
    story
        .get(field)
        .and_then(Value::as_str)
        .map_or(0, |s| s.trim().len())
}

fn has_key_like(story: &Value, needles: &[&str]) -> bool {
    ["extra", "metadata"].iter().any(|section| {
        story
            .get(section)
            .and_then(Value::as_object)
            .is_some_and(|m| {
                m.keys()
                    .any(|k| needles.iter().any(|n| k.to_lowercase().contains(n)))
            })
    })
}

fn rule_score(criterion: &str, story: &Value) -> Option<u8> {
    let acs = count(story, "acceptance_criteria");
    let steps = count(story, "steps");
    let description = text_len(story, "description");
    let narrative = story.get("narrative").is_some();
    let benefit = story
        .pointer("/narrative/benefit")
        .and_then(Value::as_str)
        .is_some_and(|b| !b.trim().is_empty());
    let present = |yes: bool| if yes { 4 } else { 1 };
    let score = match criterion {
        "independent" => {
            let text = canonical::canonicalize(story).to_lowercase();
            if text.contains("depend") {
                2
            } else {
                3
            }
        }
        "negotiable" => 3,
        "valuable" if benefit => 4,
        "valuable" if description > 0 => 3,
        "valuable" => 2,
        "estimable" => {
            let base = if description >= 80 || acs > 0 { 3 } else { 2 };
            base + u8::from(has_key_like(story, &["estimat", "story_points", "points"]))
        }
        "small" => match acs + steps {
            0..=3 => 4,
            4..=6 => 3,
            _ => 2,
        },
        "testable" => match acs {
            0 => 2,
            1 => 3,
            _ => 4,
        },
        "acceptance_criteria" => present(acs > 0),
        "effort_estimation" => present(has_key_like(
            story,
            &["estimat", "story_points", "points", "size"],
        )),
        "description" => match description {
            0 => 1,
            1..=79 => 2,
            _ => 4,
        },
        "template_completion" | "story_template" => present(narrative),
        "steps_to_achieve_goal" => present(steps > 0),
        other => {
            let key = other.replace('_', "");
            if has_key_like(story, &[other, key.as_str()]) {
                4
            } else {
                return None;
            }
        }
    };
    Some(score)
}

fn criterion_answer(id: &str, score: u8) -> Value {
    let problems = match score {
        4 => vec![],
        _ => {
            let severity = match score {
                1 => "high",
                2 => "medium",
                _ => "low",
            };
            vec![json!({
                "description": format!("The story only partially satisfies '{id}'."),
                "explanation": format!("The content relevant to '{id}' is missing or thin."),
                "severity": severity,
                "solutions": [format!("Extend the story with the information '{id}' asks for.")],
            })]
        }
    };
    json!({
        "criterion_id": id,
        "score": score,
        "explanation": format!("Rule-based stub assessment of '{id}': score {score}."),
        "problems": problems,
    })
}

fn rti_answer(evaluation: Option<&Value>, rng: &mut ChaCha8Rng) -> Value {
    let scores: Vec<u64> = evaluation
        .and_then(|e| e.get("assessments"))
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|a| a.get("score").and_then(Value::as_u64))
                .collect()
        })
        .unwrap_or_default();
    let score = if scores.is_empty() {
        rng.random_range(1..=4u64)
    } else {
        (scores.iter().sum::<u64>() / scores.len() as u64).clamp(1, 4)
    };
    json!({
        "explanation": format!(
            "Rule-based stub verdict from {} criterion scores: overall {score}.",
            scores.len()
        ),
        "ready": score >= 3,
        "score": score,
    })
}

#[async_trait]
impl LlmBackend for StubBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        if let Some(dir) = &self.fixtures {
            let path = Self::fixture_path(dir, &request.prompt().digest());
            match tokio::fs::read_to_string(&path).await {
                Ok(content) => return Ok(Completion::text(content)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(BackendError::Stub(format!("{}: {e}", path.display())));
                }
            }
        }
        Ok(Completion::text(self.generate(request)))
    }

    fn descriptor(&self) -> String {
        format!("stub:seed={}", self.seed)
    }
}
