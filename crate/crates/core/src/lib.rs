//! Quality assessment of agile user stories with a chat-completion LLM,
//! plus the statistics used to compare tool assessments with experts.

pub mod canonical;
pub mod config;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod quality_model;
pub mod story;
