//! Prompt templates and placeholder substitution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;

pub const SYSTEM_PROMPT: &str = "You are an experienced software engineer with deep knowledge in agile practices and user story evaluation. You evaluate user stories on whether they are ready to be implemented. You respond in a given JSON schema.";

pub const INVEST_TEMPLATE: &str = "I will provide you with a user story below. Your task is to carefully read through the user story and evaluate it using the INVEST criteria: {custom_prompt}. Here is the user story in JSON: {user_story_json}. Please stick to the given JSON schema.";

pub const RTI_TEMPLATE: &str = "I will provide you with a JSON of a user story evaluation against the INVEST criteria. Your task is to carefully read through the evaluation and explain and classify whether the user story is ready to be implemented or not. First, provide an explanation and then give a binary classification whether the user story is ready to be implemented. Here is the user story evaluation: {invest_json}.";

pub const DOR_TEMPLATE: &str = "I will provide you with a user story and a custom definition of ready (DoR) below. Your task is to carefully read through the user story and evaluate it using the custom DoR. Here is the custom DoR: Definition of Ready: {dor} Here is the user story in JSON: User story {user_story_json}.";

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Invest,
    Rti,
    Dor,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Invest, Task::Rti, Task::Dor];

    pub fn template(self) -> &'static str {
        match self {
            Task::Invest => INVEST_TEMPLATE,
            Task::Rti => RTI_TEMPLATE,
            Task::Dor => DOR_TEMPLATE,
        }
    }

    /// Placeholder names the template requires, in order of appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        PLACEHOLDER
            .captures_iter(self.template())
            .map(|c| c.get(1).unwrap().as_str())
            .collect()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Invest => "invest",
            Task::Rti => "rti",
            Task::Dor => "dor",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no binding supplied for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("binding '{0}' does not match any placeholder of the template")]
    ExtraBinding(String),
    #[error("binding '{0}' is empty")]
    EmptyBinding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

impl PromptPair {
    /// Content hash identifying this exact prompt.
    pub fn digest(&self) -> String {
        canonical::digest(self).expect("prompt pairs always serialize")
    }
}

/// Renders the system prompt and the task's user prompt. Substituted values
/// are inserted verbatim and never re-scanned for placeholders.
pub fn render_prompt(
    task: Task,
    bindings: &BTreeMap<String, String>,
) -> Result<PromptPair, PromptError> {
    let required: BTreeSet<&str> = task.placeholders().into_iter().collect();
    for name in &required {
        match bindings.get(*name) {
            None => return Err(PromptError::MissingBinding((*name).to_owned())),
            Some(v) if v.trim().is_empty() => {
                return Err(PromptError::EmptyBinding((*name).to_owned()))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = bindings.keys().find(|k| !required.contains(k.as_str())) {
        return Err(PromptError::ExtraBinding(extra.clone()));
    }
    let user = PLACEHOLDER
        .replace_all(task.template(), |caps: &regex::Captures<'_>| {
            bindings[caps.get(1).unwrap().as_str()].clone()
        })
        .into_owned();
    Ok(PromptPair {
        system: SYSTEM_PROMPT.to_owned(),
        user,
    })
}

/// Convenience for building a binding map from string pairs.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}
