//! Run configuration, merged from defaults, a study config file,
//! environment variables and command-line flags (later sources win).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    BackendError, BoundedBackend, ExecutionParams, LlmBackend, RemoteBackend, RetryPolicy,
    StubBackend, API_KEY_ENV, BASE_URL_ENV, DEFAULT_BASE_URL,
};
use crate::harness::{HarnessError, ModelSet, StudyDir};
use crate::quality_model::{load_quality_model, FragmentStyle};
use crate::story::RedactionPolicy;

pub const CONFIG_FILES: [&str; 2] = ["deepquali.toml", "deepquali.json"];
pub const STUDY_DIR_ENV: &str = "DEEPQUALI_STUDY_DIR";
pub const BACKEND_ENV: &str = "DEEPQUALI_BACKEND";
pub const MODEL_ENV: &str = "DEEPQUALI_MODEL";
pub const PARALLELISM_ENV: &str = "DEEPQUALI_PARALLELISM";
pub const DEFAULT_PARALLELISM: usize = 2;
pub const DEFAULT_BIND: &str = "127.0.0.1:8787";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    /// Offline and free; the default so that nothing is billed by accident.
    #[default]
    Stub,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "stub" => Ok(BackendKind::Stub),
            other => Err(format!(
                "unknown backend '{other}', expected remote or stub"
            )),
        }
    }
}

/// The effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliConfig {
    pub study_dir: PathBuf,
    pub backend: BackendKind,
    pub base_url: String,
    pub params: ExecutionParams,
    pub redaction_policy: Option<PathBuf>,
    pub invest_model: Option<PathBuf>,
    pub dor_model: Option<PathBuf>,
    pub fragment_style: FragmentStyle,
    pub grounding_lint: bool,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    pub stub_seed: u64,
    pub stub_fixtures: Option<PathBuf>,
    pub bind: String,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            study_dir: PathBuf::from("."),
            backend: BackendKind::default(),
            base_url: DEFAULT_BASE_URL.to_owned(),
            params: ExecutionParams::default(),
            redaction_policy: None,
            invest_model: None,
            dor_model: None,
            fragment_style: FragmentStyle::default(),
            grounding_lint: false,
            parallelism: DEFAULT_PARALLELISM,
            timeout_secs: 120,
            retry_attempts: 3,
            retry_backoff_ms: 1000,
            stub_seed: 0,
            stub_fixtures: None,
            bind: DEFAULT_BIND.to_owned(),
        }
    }
}

/// One configuration source. Every field is optional; unset fields fall
/// through to the next source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub study_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub base_url: Option<String>,
    pub model_name: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<i64>,
    pub max_tokens: Option<u32>,
    pub stop: Option<Vec<String>>,
    pub presence_penalty: Option<f64>,
    pub frequency_penalty: Option<f64>,
    pub redaction_policy: Option<PathBuf>,
    pub invest_model: Option<PathBuf>,
    pub dor_model: Option<PathBuf>,
    pub fragment_style: Option<FragmentStyle>,
    pub grounding_lint: Option<bool>,
    /// Signed so that a negative value is reported instead of failing to
    /// parse.
    pub parallelism: Option<i64>,
    pub timeout_secs: Option<u64>,
    pub retry_attempts: Option<u32>,
    pub retry_backoff_ms: Option<u64>,
    pub stub_seed: Option<u64>,
    pub stub_fixtures: Option<PathBuf>,
    pub bind: Option<String>,
}

impl ConfigLayer {
    /// Reads the variables this tool understands from `env`.
    pub fn from_env(env: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        fn parse<T: std::str::FromStr>(
            env: &BTreeMap<String, String>,
            var: &str,
        ) -> Result<Option<T>, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            env.get(var)
                .filter(|v| !v.is_empty())
                .map(|v| {
                    v.parse().map_err(|e: T::Err| ConfigError::Env {
                        var: var.to_owned(),
                        message: e.to_string(),
                    })
                })
                .transpose()
        }
        Ok(ConfigLayer {
            study_dir: parse(env, STUDY_DIR_ENV)?,
            backend: parse(env, BACKEND_ENV)?,
            base_url: parse(env, BASE_URL_ENV)?,
            model_name: parse(env, MODEL_ENV)?,
            parallelism: parse(env, PARALLELISM_ENV)?,
            ..ConfigLayer::default()
        })
    }

    /// Parses a `.toml` or `.json` config file.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut layer: ConfigLayer = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Format {
                path: path.to_owned(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| {
                let (line, column) = e
                    .span()
                    .map_or((0, 0), |span| line_column(&text, span.start));
                ConfigError::Format {
                    path: path.to_owned(),
                    line,
                    column,
                    message: e.message().to_owned(),
                }
            })?
        };
        // Paths inside a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut layer.redaction_policy,
            &mut layer.invest_model,
            &mut layer.dor_model,
            &mut layer.stub_fixtures,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(layer)
    }

    fn apply(self, c: &mut CliConfig) -> Result<(), ConfigError> {
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        macro_rules! set_some {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = Some(v); } )* };
        }
        set!(
            study_dir,
            backend,
            base_url,
            fragment_style,
            grounding_lint,
            timeout_secs
        );
        set!(retry_attempts, retry_backoff_ms, stub_seed, bind);
        set_some!(redaction_policy, invest_model, dor_model, stub_fixtures);
        if let Some(v) = self.model_name {
            c.params.model_name = v;
        }
        if let Some(v) = self.temperature {
            c.params.temperature = v;
        }
        if let Some(v) = self.seed {
            c.params.seed = Some(v);
        }
        if let Some(v) = self.max_tokens {
            c.params.max_tokens = v;
        }
        if let Some(v) = self.stop {
            c.params.stop = Some(v);
        }
        if let Some(v) = self.presence_penalty {
            c.params.presence_penalty = v;
        }
        if let Some(v) = self.frequency_penalty {
            c.params.frequency_penalty = v;
        }
        if let Some(p) = self.parallelism {
            if p < 1 {
                return Err(ConfigError::Validation(format!(
                    "parallelism must be at least 1, got {p}"
                )));
            }
            c.parallelism = p as usize;
        }
        Ok(())
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

/// Merges defaults, the config file, `env` and `flags`, in increasing
/// precedence. Without an explicit `file`, `deepquali.toml` or
/// `deepquali.json` in the study directory is used when present.
pub fn load_config(
    file: Option<&Path>,
    env: &BTreeMap<String, String>,
    flags: &ConfigLayer,
) -> Result<CliConfig, ConfigError> {
    let env_layer = ConfigLayer::from_env(env)?;
    let study_dir = flags
        .study_dir
        .clone()
        .or_else(|| env_layer.study_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let file = match file {
        Some(f) => Some(f.to_owned()),
        None => CONFIG_FILES
            .iter()
            .map(|name| study_dir.join(name))
            .find(|p| p.is_file()),
    };

    let mut config = CliConfig::default();
    if let Some(path) = file {
        ConfigLayer::from_file(&path)?.apply(&mut config)?;
    }
    env_layer.apply(&mut config)?;
    flags.clone().apply(&mut config)?;
    config.validate()?;
    Ok(config)
}

impl CliConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params
            .validate()
            .map_err(|e| ConfigError::Validation(e.to_string()))?;
        if self.parallelism < 1 {
            return Err(ConfigError::Validation(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.retry_attempts < 1 {
            return Err(ConfigError::Validation(
                "retry_attempts must be at least 1".into(),
            ));
        }
        if self.timeout_secs < 1 {
            return Err(ConfigError::Validation(
                "timeout_secs must be at least 1".into(),
            ));
        }
        if self.study_dir.exists() && !self.study_dir.is_dir() {
            return Err(ConfigError::Validation(format!(
                "study_dir {} is not a directory",
                self.study_dir.display()
            )));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.retry_attempts,
            initial_backoff: Duration::from_millis(self.retry_backoff_ms),
        }
    }

    /// The configured backend, bounded to `parallelism` concurrent calls.
    /// The remote backend reads its key from `api_key`.
    pub fn build_backend(
        &self,
        api_key: Option<String>,
    ) -> Result<Arc<dyn LlmBackend>, BackendError> {
        Ok(match self.backend {
            BackendKind::Stub => {
                let mut stub = StubBackend::new(self.stub_seed);
                if let Some(dir) = &self.stub_fixtures {
                    stub = stub.with_fixtures(dir);
                }
                Arc::new(BoundedBackend::new(stub, self.parallelism))
            }
            BackendKind::Remote => {
                let remote = RemoteBackend::new(
                    &self.base_url,
                    api_key,
                    Duration::from_secs(self.timeout_secs),
                    self.retry_policy(),
                )?;
                Arc::new(BoundedBackend::new(remote, self.parallelism))
            }
        })
    }

    /// The study's models with the configured model files taking
    /// precedence.
    pub fn model_set(&self, study: &StudyDir) -> Result<ModelSet, HarnessError> {
        let mut set = study.model_set()?;
        let load = |p: &PathBuf| -> Result<_, HarnessError> {
            let text = std::fs::read_to_string(p).map_err(HarnessError::io(p))?;
            Ok(load_quality_model(&text)?)
        };
        if let Some(p) = &self.invest_model {
            set.invest = load(p)?;
        }
        if let Some(p) = &self.dor_model {
            set.dor = Some(load(p)?);
        }
        ModelSet::new(set.invest, set.rti, set.dor)
    }

    pub fn redaction(&self) -> Result<RedactionPolicy, HarnessError> {
        match &self.redaction_policy {
            None => Ok(RedactionPolicy::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(HarnessError::io(p))?;
                serde_json::from_str(&text).map_err(|e| HarnessError::Format {
                    path: p.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })
            }
        }
    }
}

/// The process environment restricted to this tool's variables.
pub fn process_env() -> BTreeMap<String, String> {
    [
        STUDY_DIR_ENV,
        BACKEND_ENV,
        BASE_URL_ENV,
        MODEL_ENV,
        PARALLELISM_ENV,
        API_KEY_ENV,
    ]
    .into_iter()
    .filter_map(|k| std::env::var(k).ok().map(|v| (k.to_owned(), v)))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn defaults() {
        let dir = tempfile::tempdir().unwrap();
        let flags = ConfigLayer {
            study_dir: Some(dir.path().into()),
            ..Default::default()
        };
        let c = load_config(None, &env(&[]), &flags).unwrap();
        assert_eq!(c.params.temperature, 0.0);
        assert_eq!(c.params.model_name, "gpt-4o");
        assert_eq!(c.parallelism, 2);
        assert_eq!(c.backend, BackendKind::Stub);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("deepquali.toml"),
            "model_name = \"from-file\"\nparallelism = 3\nbase_url = \"http://file\"\n",
        )
        .unwrap();
        let mut flags = ConfigLayer {
            study_dir: Some(dir.path().into()),
            ..Default::default()
        };
        let e = env(&[(BASE_URL_ENV, "http://env"), (PARALLELISM_ENV, "4")]);
        let c = load_config(None, &e, &flags).unwrap();
        assert_eq!(c.params.model_name, "from-file");
        assert_eq!(c.base_url, "http://env");
        assert_eq!(c.parallelism, 4);

        flags.model_name = Some("from-flag".into());
        flags.parallelism = Some(5);
        let c = load_config(None, &e, &flags).unwrap();
        assert_eq!(c.params.model_name, "from-flag");
        assert_eq!(c.parallelism, 5);
    }

    #[test]
    fn negative_parallelism_rejected() {
        let flags = ConfigLayer {
            parallelism: Some(-1),
            study_dir: Some(std::env::temp_dir()),
            ..Default::default()
        };
        assert!(matches!(
            load_config(None, &env(&[]), &flags),
            Err(ConfigError::Validation(_))
        ));
        assert!(matches!(
            load_config(
                None,
                &env(&[(PARALLELISM_ENV, "0")]),
                &ConfigLayer::default()
            ),
            Err(ConfigError::Validation(_))
        ));
    }

    #[test]
    fn malformed_file_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deepquali.toml");
        std::fs::write(&path, "backend = \"stub\"\ntemperature = = 1\n").unwrap();
        match load_config(Some(&path), &env(&[]), &ConfigLayer::default()) {
            Err(ConfigError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let json = dir.path().join("c.json");
        std::fs::write(&json, "{\n \"backend\": 3\n}").unwrap();
        match load_config(Some(&json), &env(&[]), &ConfigLayer::default()) {
            Err(ConfigError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deepquali.toml");
        std::fs::write(&path, "temprature = 1\n").unwrap();
        assert!(load_config(Some(&path), &env(&[]), &ConfigLayer::default()).is_err());
        assert!(matches!(
            load_config(None, &env(&[(BACKEND_ENV, "gpu")]), &ConfigLayer::default()),
            Err(ConfigError::Env { .. })
        ));
    }
}
