//! `deepquali`: batch frontend over a study directory.

mod commands;
mod error;
mod import;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepquali_core::config::{BackendKind, ConfigLayer};
use deepquali_core::quality_model::FragmentStyle;

use crate::error::CliError;
use crate::import::{Format, SurveyKind};

#[derive(Debug, Parser)]
#[command(
    name = "deepquali",
    version,
    about = "Assess user stories against quality models with an LLM and compare the results with expert ratings"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags overriding the config file and environment.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// Study directory [env: DEEPQUALI_STUDY_DIR] [default: .]
    #[arg(long, global = true)]
    study_dir: Option<PathBuf>,
    /// Config file [default: deepquali.toml or deepquali.json in the study directory]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// LLM backend: stub or remote [env: DEEPQUALI_BACKEND] [default: stub]
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Base URL of an OpenAI-compatible API [env: DEEPQUALI_BASE_URL]
    #[arg(long, global = true)]
    base_url: Option<String>,
    /// Model name sent to the backend [env: DEEPQUALI_MODEL] [default: gpt-4o]
    #[arg(long, global = true)]
    model: Option<String>,
    /// Sampling temperature [default: 0]
    #[arg(long, global = true, allow_negative_numbers = true)]
    temperature: Option<f64>,
    /// Sampling seed
    #[arg(long, global = true)]
    seed: Option<i64>,
    /// Completion token limit
    #[arg(long, global = true)]
    max_tokens: Option<u32>,
    /// Stop sequence (repeatable)
    #[arg(long, global = true)]
    stop: Vec<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    presence_penalty: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    frequency_penalty: Option<f64>,
    /// Redaction policy applied by `ingest`
    #[arg(long, global = true)]
    redaction_policy: Option<PathBuf>,
    /// INVEST model file replacing the built-in model
    #[arg(long, global = true)]
    invest_model: Option<PathBuf>,
    /// Definition-of-Ready model file
    #[arg(long, global = true)]
    dor_model: Option<PathBuf>,
    /// How INVEST criteria appear in the prompt
    #[arg(long, global = true, value_enum)]
    fragment_style: Option<FragmentArg>,
    /// Flag problem quotes that do not occur in the story
    #[arg(long, global = true)]
    grounding_lint: bool,
    /// Concurrent backend calls [env: DEEPQUALI_PARALLELISM] [default: 2]
    #[arg(long, global = true, allow_negative_numbers = true)]
    parallelism: Option<i64>,
    /// Per-request timeout in seconds
    #[arg(long, global = true)]
    timeout_secs: Option<u64>,
    /// Attempts per request for transport errors and 5xx answers
    #[arg(long, global = true)]
    retry_attempts: Option<u32>,
    /// Seed of the stub backend's generator
    #[arg(long, global = true)]
    stub_seed: Option<u64>,
    /// Fixture directory consulted by the stub backend
    #[arg(long, global = true)]
    stub_fixtures: Option<PathBuf>,
    /// Listen address for `serve`
    #[arg(long, global = true)]
    bind: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FragmentArg {
    Titles,
    Full,
}

impl GlobalArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            study_dir: self.study_dir.clone(),
            backend: self.backend,
            base_url: self.base_url.clone(),
            model_name: self.model.clone(),
            temperature: self.temperature,
            seed: self.seed,
            max_tokens: self.max_tokens,
            stop: (!self.stop.is_empty()).then(|| self.stop.clone()),
            presence_penalty: self.presence_penalty,
            frequency_penalty: self.frequency_penalty,
            redaction_policy: self.redaction_policy.clone(),
            invest_model: self.invest_model.clone(),
            dor_model: self.dor_model.clone(),
            fragment_style: self.fragment_style.map(|f| match f {
                FragmentArg::Titles => FragmentStyle::Titles,
                FragmentArg::Full => FragmentStyle::Full,
            }),
            grounding_lint: self.grounding_lint.then_some(true),
            parallelism: self.parallelism,
            timeout_secs: self.timeout_secs,
            retry_attempts: self.retry_attempts,
            retry_backoff_ms: None,
            stub_seed: self.stub_seed,
            stub_fixtures: self.stub_fixtures.clone(),
            bind: self.bind.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert raw story exports into canonical, anonymized story files
    Ingest {
        /// JSON files (one story or an array of stories) or directories of them
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Field mapping from the export format to story fields
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Export, validate or inspect quality models
    Models {
        #[command(subcommand)]
        action: ModelsCommand,
    },
    /// Assess stories and write one report per story version
    Assess {
        /// Only assess this story (repeatable) [default: all stories]
        #[arg(long = "story")]
        stories: Vec<String>,
        /// Re-assess stories that already have an up-to-date report
        #[arg(long)]
        force: bool,
        /// Skip the Definition-of-Ready stage even if a DoR model is configured
        #[arg(long)]
        no_dor: bool,
    },
    /// Import expert labels
    Label {
        #[command(subcommand)]
        action: LabelCommand,
    },
    /// Write the agreement, deviation and classification tables to out/
    Evaluate,
    /// Import or summarize survey answers
    Survey {
        #[command(subcommand)]
        action: SurveyCommand,
    },
    /// Write every synthesis table and its boxplot data to out/
    Report,
    /// Run the local HTTP service for the review UI
    Serve,
}

#[derive(Debug, Subcommand)]
enum ModelsCommand {
    /// Write a built-in model to models/<id>.qm.json for editing
    Export {
        #[arg(value_enum, value_name = "MODEL")]
        builtin: commands::BuiltinModel,
        /// Print the document instead of writing it
        #[arg(long)]
        stdout: bool,
    },
    /// Check model files
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Print the response JSON schema used for a model's stage
    Schema {
        #[arg(value_enum)]
        stage: commands::Stage,
    },
}

#[derive(Debug, Subcommand)]
enum LabelCommand {
    /// Import label records from CSV or JSON Lines
    Import {
        file: PathBuf,
        /// Input format [default: from the file extension]
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

#[derive(Debug, Subcommand)]
enum SurveyCommand {
    /// Import expert profiles, feedback ratings or acceptance answers
    Import {
        #[arg(long, value_enum)]
        kind: SurveyKind,
        file: PathBuf,
        /// Input format [default: from the file extension]
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Write the feedback and acceptance tables to out/
    Summarize,
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return CliError::Usage(e.render().to_string()).report(),
    };
    match commands::run(
        cli.command,
        cli.global.config.as_deref(),
        &cli.global.layer(),
    )
    .await
    {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => e.report(),
    }
}
