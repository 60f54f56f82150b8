use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::ValueEnum;
use serde_json::{json, Value};
use tokio::task::JoinSet;

use deepquali_core::canonical;
use deepquali_core::config::{load_config, process_env, CliConfig, ConfigLayer};
use deepquali_core::engine::{
    assess_story, AssessOptions, AssessmentPlan, ResponseSchema, API_KEY_ENV,
};
use deepquali_core::harness::{
    acceptance_output, evaluation_outputs, feedback_output, report_outputs, write_outputs,
    AcceptanceRecord, ExpertProfile, FeedbackRecord, LabelRecord, StudyDir, StudyRecord,
    TableOutput,
};
use deepquali_core::quality_model::{
    builtin_invest, builtin_rti, example_dor, load_quality_model, QualityModel,
};
use deepquali_core::story::{anonymize, ingest_story, FieldMapping, UserStory};

use crate::error::CliError;
use crate::import::{
    read_records, Format, SurveyKind, ACCEPTANCE_SHAPE, EXPERT_SHAPE, FEEDBACK_SHAPE, LABEL_SHAPE,
};
use crate::{Command, LabelCommand, ModelsCommand, SurveyCommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BuiltinModel {
    Invest,
    Rti,
    /// A sample company Definition of Ready to start from.
    DorExample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Stage {
    Invest,
    Rti,
    Dor,
}

pub async fn run(
    command: Command,
    config_file: Option<&Path>,
    flags: &ConfigLayer,
) -> Result<String, CliError> {
    let env = process_env();
    let config = load_config(config_file, &env, flags)?;
    let api_key = env.get(API_KEY_ENV).cloned();
    let value = match command {
        Command::Ingest { inputs, mapping } => ingest(&config, &inputs, mapping.as_deref())?,
        Command::Models { action } => return models(&config, action),
        Command::Assess {
            stories,
            force,
            no_dor,
        } => assess(&config, api_key, &stories, force, no_dor).await?,
        Command::Label {
            action: LabelCommand::Import { file, format },
        } => import_records::<LabelRecord>(&config, &file, format, &LABEL_SHAPE)?,
        Command::Evaluate => write_tables(&config, |s, c| evaluation_outputs(s, &c.model_set(s)?))?,
        Command::Survey { action } => match action {
            SurveyCommand::Import { kind, file, format } => match kind {
                SurveyKind::Experts => import_experts(&config, &file, format)?,
                SurveyKind::Feedback => {
                    import_records::<FeedbackRecord>(&config, &file, format, &FEEDBACK_SHAPE)?
                }
                SurveyKind::Acceptance => {
                    import_records::<AcceptanceRecord>(&config, &file, format, &ACCEPTANCE_SHAPE)?
                }
            },
            SurveyCommand::Summarize => write_tables(&config, |s, _| {
                Ok(vec![feedback_output(s)?, acceptance_output(s)?])
            })?,
        },
        Command::Report => write_tables(&config, |s, c| report_outputs(s, &c.model_set(s)?))?,
        Command::Serve => {
            deepquali_service::serve(config, api_key).await?;
            json!({ "stopped": true })
        }
    };
    Ok(canonical::canonicalize(&value))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(CliError::io(path))
}

/// Expands directories into their `*.json` files, sorted.
fn input_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(CliError::io(input))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn ingest(
    config: &CliConfig,
    inputs: &[PathBuf],
    mapping: Option<&Path>,
) -> Result<Value, CliError> {
    let mapping: FieldMapping = match mapping {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Listing {
            code: "format",
            message: format!("{}: {e}", p.display()),
            errors: Vec::new(),
            summary: Value::Null,
        })?,
        None => FieldMapping::default(),
    };
    let policy = config.redaction()?;

    let mut stories: Vec<UserStory> = Vec::new();
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    for file in input_files(inputs)? {
        let text = read_text(&file)?;
        // An array holds several raw stories; anything else is one story.
        let raws: Vec<(Option<usize>, String)> = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| (Some(i), v.to_string()))
                .collect(),
            _ => vec![(None, text)],
        };
        for (index, raw) in raws {
            let result = ingest_story(&raw, &mapping).and_then(|story| {
                let anonymized = anonymize(&story, &policy);
                anonymized.story.validate()?;
                Ok(anonymized)
            });
            match result {
                Ok(a) => {
                    warnings.extend(a.warnings.into_iter().map(|w| json!(w)));
                    stories.push(a.story);
                }
                Err(e) => errors.push(json!({
                    "file": file,
                    "index": index,
                    "message": e.to_string(),
                })),
            }
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Listing {
            code: "validation",
            message: format!(
                "{} story document(s) rejected; nothing was written",
                errors.len()
            ),
            errors,
            summary: Value::Null,
        });
    }

    let mut study = StudyDir::open_writer(&config.study_dir)?;
    let versions = stories
        .iter()
        .map(|s| study.add_story_version(s, false))
        .collect::<Result<Vec<_>, _>>()?;
    warnings.sort_by_key(|w| w.to_string());
    warnings.dedup();
    Ok(json!({ "stories": versions, "warnings": warnings }))
}

fn builtin(model: BuiltinModel) -> QualityModel {
    match model {
        BuiltinModel::Invest => builtin_invest(),
        BuiltinModel::Rti => builtin_rti(),
        BuiltinModel::DorExample => example_dor(),
    }
}

fn models(config: &CliConfig, action: ModelsCommand) -> Result<String, CliError> {
    match action {
        ModelsCommand::Export {
            builtin: which,
            stdout,
        } => {
            let model = builtin(which);
            let document = model.to_pretty_document();
            if stdout {
                return Ok(document.trim_end().to_owned());
            }
            let study = StudyDir::open_writer(&config.study_dir)?;
            let path = study.models_dir().join(format!("{}.qm.json", model.id));
            deepquali_core::harness::write_atomic(&path, document.as_bytes())?;
            Ok(canonical::canonicalize(&json!({ "written": path })))
        }
        ModelsCommand::Validate { files } => {
            let mut valid = Vec::new();
            let mut errors = Vec::new();
            for file in files {
                match read_text(&file).map(|t| load_quality_model(&t)) {
                    Ok(Ok(m)) => valid.push(json!({
                        "file": file,
                        "id": m.id,
                        "kind": m.kind,
                        "criteria": m.criteria.len(),
                    })),
                    Ok(Err(e)) => errors.push(json!({ "file": file, "message": e.to_string() })),
                    Err(e) => errors.push(json!({ "file": file, "message": e.to_string() })),
                }
            }
            if errors.is_empty() {
                Ok(canonical::canonicalize(&json!({ "valid": valid })))
            } else {
                Err(CliError::Listing {
                    code: "validation",
                    message: format!("{} invalid model file(s)", errors.len()),
                    errors,
                    summary: json!({ "valid": valid }),
                })
            }
        }
        ModelsCommand::Schema { stage } => {
            let set = config.model_set(&StudyDir::open(&config.study_dir)?)?;
            let model = match stage {
                Stage::Invest => set.invest,
                Stage::Rti => set.rti,
                Stage::Dor => set.dor.ok_or_else(|| {
                    CliError::Usage("no DoR model is configured for this study".into())
                })?,
            };
            Ok(canonical::canonicalize(
                &ResponseSchema::for_model(&model).to_json_schema(),
            ))
        }
    }
}

async fn assess(
    config: &CliConfig,
    api_key: Option<String>,
    ids: &[String],
    force: bool,
    no_dor: bool,
) -> Result<Value, CliError> {
    let mut study = StudyDir::open_writer(&config.study_dir)?;
    let models = config.model_set(&study)?;
    let invest = Arc::new(models.invest);
    let dor = Arc::new(if no_dor { None } else { models.dor });
    let params = Arc::new(config.params.clone());
    let backend = config.build_backend(api_key)?;

    let stories = if ids.is_empty() {
        study.stories()?
    } else {
        ids.iter()
            .map(|id| study.story(id))
            .collect::<Result<Vec<_>, _>>()?
    };

    let mut skipped = Vec::new();
    let mut pending = Vec::new();
    for story in stories {
        let options = AssessOptions {
            story_version: study.latest_version(&story.id)?,
            invest_fragment: config.fragment_style,
            grounding_lint: config.grounding_lint,
        };
        let plan = AssessmentPlan::new(&story, &invest, dor.as_ref().as_ref(), &params, &options)?;
        if !force && study.has_report(&plan.report_id) {
            skipped.push(plan.report_id);
        } else {
            pending.push((story, options));
        }
    }

    let mut pending = pending.into_iter();
    let mut running = JoinSet::new();
    let mut written = Vec::new();
    let mut failed = Vec::new();
    loop {
        while running.len() < config.parallelism {
            let Some((story, options)) = pending.next() else {
                break;
            };
            let (invest, dor, params, backend) =
                (invest.clone(), dor.clone(), params.clone(), backend.clone());
            running.spawn(async move {
                let result = assess_story(
                    &story,
                    &invest,
                    dor.as_ref().as_ref(),
                    &params,
                    backend.as_ref(),
                    &options,
                )
                .await;
                (story.id, result)
            });
        }
        match running.join_next().await {
            None => break,
            Some(Ok((_, Ok(report)))) => written.push(study.save_report(&report)?),
            Some(Ok((story_id, Err(e)))) => {
                failed.push(json!({ "story_id": story_id, "message": e.to_string() }))
            }
            Some(Err(e)) => failed.push(json!({ "story_id": null, "message": e.to_string() })),
        }
    }
    written.sort();
    skipped.sort();
    let summary = json!({ "reports": written, "skipped": skipped });
    if failed.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Listing {
            code: "assessment",
            message: format!("{} stor(ies) could not be assessed", failed.len()),
            errors: failed,
            summary,
        })
    }
}

fn import_records<T>(
    config: &CliConfig,
    file: &Path,
    format: Option<Format>,
    shape: &crate::import::Shape,
) -> Result<Value, CliError>
where
    T: serde::de::DeserializeOwned + Into<StudyRecord>,
{
    let records: Vec<StudyRecord> = read_records::<T>(file, format, shape)?
        .into_iter()
        .map(Into::into)
        .collect();
    let mut study = StudyDir::open_writer(&config.study_dir)?;
    let outcomes = study.record_all(records)?;
    let replaced = outcomes.iter().filter(|o| o.replaced).count();
    Ok(json!({ "imported": outcomes.len(), "replaced": replaced }))
}

fn import_experts(
    config: &CliConfig,
    file: &Path,
    format: Option<Format>,
) -> Result<Value, CliError> {
    let experts: Vec<ExpertProfile> = read_records(file, format, &EXPERT_SHAPE)?;
    let mut study = StudyDir::open_writer(&config.study_dir)?;
    let mut replaced = 0;
    for e in &experts {
        e.validate()?;
    }
    let count = experts.len();
    for e in experts {
        replaced += usize::from(study.put_expert(e)?);
    }
    Ok(json!({ "imported": count, "replaced": replaced }))
}

/// Computes tables, writes them under `out/` and lists the files.
fn write_tables(
    config: &CliConfig,
    build: impl FnOnce(
        &StudyDir,
        &CliConfig,
    ) -> Result<Vec<TableOutput>, deepquali_core::harness::HarnessError>,
) -> Result<Value, CliError> {
    let mut study = StudyDir::open_writer(&config.study_dir)?;
    let outputs = build(&study, config)?;
    write_outputs(&mut study, &outputs)?;
    let files: BTreeMap<&str, Value> = outputs
        .iter()
        .map(|o| {
            (
                o.name.as_str(),
                json!([
                    format!("out/{}.json", o.name),
                    format!("out/{}.csv", o.name)
                ]),
            )
        })
        .collect();
    Ok(json!({ "written": files }))
}
