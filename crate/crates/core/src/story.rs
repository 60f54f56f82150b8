//! User stories: ingestion from arbitrary JSON exports, denylist-based
//! anonymization, canonical serialization, and corpus loading.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;

/// File extension for story documents.
pub const STORY_FILE_EXTENSION: &str = ".story.json";

/// Metadata key used to tag stories picked for a study sample
/// (for example "low complexity").
pub const SAMPLE_LABEL_KEY: &str = "sample_label";

pub const DEFAULT_REPLACEMENT: &str = "[REDACTED]";

#[derive(Debug, Error)]
pub enum StoryError {
    #[error("malformed story document at line {line}, column {column}: {message}")]
    Format {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("story is missing required content: {}", .0.join(", "))]
    MissingFields(Vec<String>),
    #[error("invalid story: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<StoryError>,
    },
    #[error("duplicate story id '{id}' in {} and {}", first.display(), second.display())]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
}

impl StoryError {
    fn from_json(e: serde_json::Error) -> Self {
        StoryError::Format {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// "As a [ROLE], I want [GOAL] so that [BENEFIT]".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Narrative {
    pub role: String,
    pub goal: String,
    pub benefit: String,
}

impl Narrative {
    pub fn is_empty(&self) -> bool {
        self.role.trim().is_empty() && self.goal.trim().is_empty() && self.benefit.trim().is_empty()
    }

    /// Parses the template sentence form.
    pub fn parse(sentence: &str) -> Option<Narrative> {
        static TEMPLATE: LazyLock<Regex> = LazyLock::new(|| {
            Regex::new(r"(?is)^\s*as an?\s+(.+?),\s*i want\s+(.+?),?\s+so that\s+(.+?)\s*\.?\s*$")
                .unwrap()
        });
        let caps = TEMPLATE.captures(sentence)?;
        Some(Narrative {
            role: caps[1].trim().to_owned(),
            goal: caps[2].trim().to_owned(),
            benefit: caps[3].trim().to_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserStory {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<Narrative>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub acceptance_criteria: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl UserStory {
    pub fn validate(&self) -> Result<(), StoryError> {
        let mut missing = Vec::new();
        if self.id.trim().is_empty() {
            missing.push("id".to_owned());
        } else if !is_safe_id(&self.id) {
            return Err(StoryError::Invalid(format!(
                "story id '{}' may only use letters, digits, '.', '_' and '-'",
                self.id
            )));
        }
        let has_narrative = self.narrative.as_ref().is_some_and(|n| !n.is_empty());
        if !has_narrative && self.description.trim().is_empty() {
            missing.push("narrative|description".to_owned());
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(StoryError::MissingFields(missing))
        }
    }

    /// Every piece of free text in the story, in a fixed order.
    pub fn text_fields(&self) -> Vec<&str> {
        let mut out = vec![self.title.as_str()];
        if let Some(n) = &self.narrative {
            out.extend([n.role.as_str(), n.goal.as_str(), n.benefit.as_str()]);
        }
        out.push(&self.description);
        out.extend(self.acceptance_criteria.iter().map(String::as_str));
        out.extend(self.steps.iter().map(String::as_str));
        out.extend(self.extra.values().map(String::as_str));
        out
    }
}

/// Story ids double as file names in the study directory.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

/// Parses a `.story.json` document and checks the story invariants.
pub fn parse_story(text: &str) -> Result<UserStory, StoryError> {
    let story: UserStory = serde_json::from_str(text).map_err(StoryError::from_json)?;
    story.validate()?;
    Ok(story)
}

/// Deterministic serialization used for prompts, hashing, and storage.
pub fn to_canonical_text(story: &UserStory) -> String {
    canonical::to_canonical_string(story).expect("stories always serialize")
}

/// Content hash of the canonical text.
pub fn story_digest(story: &UserStory) -> String {
    canonical::sha256_hex(to_canonical_text(story))
}

/// Names which source paths (dot-separated) feed which story fields.
/// Any field left unset reads the source key of the same name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMapping {
    pub id: Option<String>,
    pub title: Option<String>,
    pub narrative: Option<String>,
    pub description: Option<String>,
    pub acceptance_criteria: Option<String>,
    pub steps: Option<String>,
    /// Target metadata key -> source path. Merged over a source `metadata` object.
    pub metadata: BTreeMap<String, String>,
    /// Top-level source keys to drop instead of carrying into `extra`.
    pub ignore: Vec<String>,
}

fn lookup<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, key| v.get(key))
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(_) | Value::Number(_) => Some(v.to_string()),
        Value::Array(_) | Value::Object(_) => Some(canonical::canonicalize(v)),
    }
}

fn text_list(v: &Value, field: &str) -> Result<Vec<String>, StoryError> {
    match v {
        Value::Null => Ok(Vec::new()),
        Value::Array(items) => items
            .iter()
            .map(|item| {
                scalar_text(item)
                    .ok_or_else(|| StoryError::Invalid(format!("{field} contains a null entry")))
            })
            .collect(),
        Value::String(s) => Ok(s
            .lines()
            .map(|l| l.trim().trim_start_matches(['-', '*', '•']).trim())
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect()),
        _ => Err(StoryError::Invalid(format!(
            "{field} must be a list of text or a bulleted string"
        ))),
    }
}

/// Builds a canonical story from a raw export document.
pub fn ingest_story(raw: &str, mapping: &FieldMapping) -> Result<UserStory, StoryError> {
    let root: Value = serde_json::from_str(raw).map_err(StoryError::from_json)?;
    let Value::Object(source) = &root else {
        return Err(StoryError::Invalid(
            "raw story must be a JSON object".into(),
        ));
    };

    let mut consumed: BTreeSet<String> = mapping.ignore.iter().cloned().collect();
    let mut take = |target: &str, path: &Option<String>| -> Option<&Value> {
        let path = path.as_deref().unwrap_or(target);
        consumed.insert(path.split('.').next().unwrap_or(path).to_owned());
        lookup(&root, path)
    };

    let id = take("id", &mapping.id)
        .and_then(scalar_text)
        .unwrap_or_default();
    let title = take("title", &mapping.title)
        .and_then(scalar_text)
        .unwrap_or_default();
    let description = take("description", &mapping.description)
        .and_then(scalar_text)
        .unwrap_or_default();
    let narrative = match take("narrative", &mapping.narrative) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.trim().is_empty() => None,
        Some(Value::String(s)) => Some(Narrative::parse(s).ok_or_else(|| {
            StoryError::Invalid(format!(
                "narrative does not follow \"As a [ROLE], I want [GOAL] so that [BENEFIT]\": {s}"
            ))
        })?),
        Some(v @ Value::Object(_)) => Some(
            serde_json::from_value(v.clone())
                .map_err(|e| StoryError::Invalid(format!("narrative: {e}")))?,
        ),
        Some(_) => {
            return Err(StoryError::Invalid(
                "narrative must be text or an object".into(),
            ))
        }
    };
    let acceptance_criteria = match take("acceptance_criteria", &mapping.acceptance_criteria) {
        Some(v) => text_list(v, "acceptance_criteria")?,
        None => Vec::new(),
    };
    let steps = match take("steps", &mapping.steps) {
        Some(v) => text_list(v, "steps")?,
        None => Vec::new(),
    };

    let mut metadata = BTreeMap::new();
    if let Some(Value::Object(m)) = take("metadata", &None) {
        for (k, v) in m {
            if let Some(text) = scalar_text(v) {
                metadata.insert(k.clone(), text);
            }
        }
    }
    for (key, path) in &mapping.metadata {
        if let Some(text) = take(key, &Some(path.clone())).and_then(scalar_text) {
            metadata.insert(key.clone(), text);
        }
    }

    let mut extra = BTreeMap::new();
    if let Some(Value::Object(m)) = source.get("extra") {
        consumed.insert("extra".into());
        for (k, v) in m {
            if let Some(text) = scalar_text(v) {
                extra.insert(k.clone(), text);
            }
        }
    }
    for (k, v) in source {
        if consumed.contains(k) {
            continue;
        }
        if let Some(text) = scalar_text(v) {
            extra.insert(k.clone(), text);
        }
    }

    let story = UserStory {
        id: id.trim().to_owned(),
        title,
        narrative,
        description,
        acceptance_criteria,
        steps,
        extra,
        metadata,
    };
    story.validate()?;
    Ok(story)
}

/// Field paths to strip before a story leaves the organization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument")]
pub struct RedactionPolicy {
    pub denied_fields: Vec<String>,
    pub replacement: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDocument {
    #[serde(default)]
    denied_fields: Vec<String>,
    #[serde(default)]
    replacement: Option<String>,
}

impl TryFrom<PolicyDocument> for RedactionPolicy {
    type Error = StoryError;

    fn try_from(doc: PolicyDocument) -> Result<Self, Self::Error> {
        RedactionPolicy::new(
            doc.denied_fields,
            doc.replacement
                .unwrap_or_else(|| DEFAULT_REPLACEMENT.to_owned()),
        )
    }
}

impl Default for RedactionPolicy {
    fn default() -> Self {
        RedactionPolicy {
            denied_fields: Vec::new(),
            replacement: DEFAULT_REPLACEMENT.to_owned(),
        }
    }
}

impl RedactionPolicy {
    pub fn new(denied_fields: Vec<String>, replacement: String) -> Result<Self, StoryError> {
        for path in &denied_fields {
            if path.is_empty() || path.split('.').any(str::is_empty) {
                return Err(StoryError::Invalid(format!(
                    "malformed field path '{path}' in redaction policy"
                )));
            }
        }
        Ok(RedactionPolicy {
            denied_fields,
            replacement,
        })
    }

    pub fn deny(paths: &[&str]) -> Result<Self, StoryError> {
        Self::new(
            paths.iter().map(|p| (*p).to_owned()).collect(),
            DEFAULT_REPLACEMENT.to_owned(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anonymized {
    pub story: UserStory,
    /// Policy paths that name no known story field.
    pub warnings: Vec<String>,
}

/// Applies a redaction policy. Denied map entries and lists are removed;
/// required text fields are overwritten with the policy's replacement.
pub fn anonymize(story: &UserStory, policy: &RedactionPolicy) -> Anonymized {
    let mut out = story.clone();
    let mut warnings = Vec::new();
    let replace = |field: &mut String| {
        if !field.is_empty() {
            field.clone_from(&policy.replacement);
        }
    };

    for path in &policy.denied_fields {
        let (head, rest) = match path.split_once('.') {
            Some((h, r)) => (h, Some(r)),
            None => (path.as_str(), None),
        };
        match (head, rest) {
            ("title", None) => replace(&mut out.title),
            ("description", None) => replace(&mut out.description),
            ("narrative", None) => {
                if let Some(n) = out.narrative.as_mut() {
                    replace(&mut n.role);
                    replace(&mut n.goal);
                    replace(&mut n.benefit);
                }
            }
            ("narrative", Some(part)) => match (out.narrative.as_mut(), part) {
                (Some(n), "role") => replace(&mut n.role),
                (Some(n), "goal") => replace(&mut n.goal),
                (Some(n), "benefit") => replace(&mut n.benefit),
                (None, "role" | "goal" | "benefit") => {}
                _ => warnings.push(format!("unknown field path '{path}'")),
            },
            ("acceptance_criteria", None) => out.acceptance_criteria.clear(),
            ("steps", None) => out.steps.clear(),
            ("extra", None) => out.extra.clear(),
            ("metadata", None) => out.metadata.clear(),
            ("extra", Some(key)) => {
                out.extra.remove(key);
            }
            ("metadata", Some(key)) => {
                out.metadata.remove(key);
            }
            ("id", None) => warnings.push("the story id cannot be redacted".to_owned()),
            _ => warnings.push(format!("unknown field path '{path}'")),
        }
    }
    Anonymized {
        story: out,
        warnings,
    }
}

/// Reads every `*.story.json` file directly inside `dir`, sorted by id.
pub fn load_corpus(dir: &Path) -> Result<Vec<UserStory>, StoryError> {
    let io_err = |source| StoryError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let is_story = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(STORY_FILE_EXTENSION));
        if is_story && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();

    let mut by_id: BTreeMap<String, (PathBuf, UserStory)> = BTreeMap::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|source| StoryError::Io {
            path: path.clone(),
            source,
        })?;
        let story = parse_story(&text).map_err(|e| StoryError::InFile {
            path: path.clone(),
            source: Box::new(e),
        })?;
        if let Some((first, _)) = by_id.get(&story.id) {
            return Err(StoryError::DuplicateId {
                id: story.id,
                first: first.clone(),
                second: path,
            });
        }
        by_id.insert(story.id.clone(), (path, story));
    }
    Ok(by_id.into_values().map(|(_, s)| s).collect())
}
