mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use common::{fixture, read_fixture};
use deepquali_core::engine::{
    assess_story, invest_json, parse_report, AssessError, AssessOptions, AssessmentPlan,
    BackendError, BoundedBackend, ChatRequest, Completion, ExecutionParams, LlmBackend, ParseError,
    ResponseSchema, StageError, StubBackend, Task,
};
use deepquali_core::quality_model::{builtin_invest, example_dor, FragmentStyle};
use deepquali_core::story::{load_corpus, UserStory};

fn corpus() -> Vec<UserStory> {
    load_corpus(&fixture("stories")).unwrap()
}

/// Answers each stage from a fixed table and records the requests.
struct Scripted {
    invest: String,
    rti: String,
    dor: String,
    seen: Mutex<Vec<ChatRequest>>,
}

impl Scripted {
    fn from_fixtures() -> Self {
        Scripted {
            invest: read_fixture("outputs/invest_valid.json"),
            rti: read_fixture("outputs/rti_valid.json"),
            dor: read_fixture("outputs/dor_valid.json"),
            seen: Mutex::default(),
        }
    }
}

#[async_trait]
impl LlmBackend for Scripted {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        Ok(Completion::text(match request.schema {
            ResponseSchema::Invest { .. } => self.invest.clone(),
            ResponseSchema::Rti => self.rti.clone(),
            ResponseSchema::Dor { .. } => self.dor.clone(),
        }))
    }
    fn descriptor(&self) -> String {
        "scripted".into()
    }
}

#[tokio::test]
async fn stub_reports_have_every_stage() {
    let dor = example_dor();
    for story in corpus() {
        let report = assess_story(
            &story,
            &builtin_invest(),
            Some(&dor),
            &ExecutionParams::default(),
            &StubBackend::new(0),
            &AssessOptions::default(),
        )
        .await
        .unwrap();
        assert_eq!(report.invest.len(), 6);
        assert_eq!(report.dor.as_ref().unwrap().len(), 13);
        assert_eq!(report.rti.ready, report.rti.score >= 3, "{}", story.id);
        report.validate().unwrap();
        assert!(report.report_id.starts_with(&format!("{}.v1.", story.id)));
        let reparsed = parse_report(&report.to_canonical()).unwrap();
        assert_eq!(
            reparsed.canonical_without_timestamp(),
            report.canonical_without_timestamp()
        );
    }
}

#[tokio::test]
async fn stub_is_deterministic_per_seed() {
    let story = &corpus()[0];
    let run = |seed| async move {
        assess_story(
            story,
            &builtin_invest(),
            None,
            &ExecutionParams::default(),
            &StubBackend::new(seed),
            &AssessOptions::default(),
        )
        .await
        .unwrap()
        .canonical_without_timestamp()
    };
    assert_eq!(run(1).await, run(1).await);
}

#[tokio::test]
async fn rti_stage_sees_only_the_invest_result() {
    let backend = Scripted::from_fixtures();
    let story = &corpus()[0];
    let report = assess_story(
        story,
        &builtin_invest(),
        Some(&example_dor()),
        &ExecutionParams::default(),
        &backend,
        &AssessOptions::default(),
    )
    .await
    .unwrap();
    let seen = backend.seen.lock().unwrap();
    let stages: Vec<Task> = seen.iter().map(|r| r.schema.task()).collect();
    assert_eq!(stages, [Task::Invest, Task::Rti, Task::Dor]);

    let rti_user = &seen[1].prompt().user;
    assert!(rti_user.contains(&invest_json(&report.invest)));
    assert!(!rti_user.contains(&story.title));
    assert!(seen[0].prompt().user.contains(&story.title));
    assert!(seen[2]
        .prompt()
        .user
        .contains("Definition of Ready: Acceptance Criteria (ACs): Clearly defined"));

    assert_eq!(report.score_for("small"), Some(2));
    assert_eq!(report.score_for("rti"), Some(4));
    assert_eq!(report.score_for("hints"), Some(1));
    assert_eq!(report.backend, "scripted");
}

#[tokio::test]
async fn stage_failures_name_the_stage() {
    let story = &corpus()[0];
    let params = ExecutionParams::default();
    let options = AssessOptions::default();

    let mut b = Scripted::from_fixtures();
    b.invest = "{\"assessments\":[]}".into();
    let err = assess_story(story, &builtin_invest(), None, &params, &b, &options)
        .await
        .unwrap_err();
    assert!(matches!(
        &err,
        AssessError::Stage {
            stage: Task::Invest,
            source: StageError::Parse(ParseError::Schema(_))
        }
    ));
    assert!(err.to_string().starts_with("invest stage failed"));

    let mut b = Scripted::from_fixtures();
    b.rti = "{\"explanation\":\"x\",\"score\":9}".into();
    let err = assess_story(story, &builtin_invest(), None, &params, &b, &options)
        .await
        .unwrap_err();
    assert!(matches!(
        err,
        AssessError::Stage {
            stage: Task::Rti,
            source: StageError::Parse(ParseError::Range { .. })
        }
    ));

    let mut b = Scripted::from_fixtures();
    b.dor = "   ".into();
    let err = assess_story(
        story,
        &builtin_invest(),
        Some(&example_dor()),
        &params,
        &b,
        &options,
    )
    .await
    .unwrap_err();
    assert!(matches!(
        err,
        AssessError::Stage {
            stage: Task::Dor,
            source: StageError::Backend(BackendError::EmptyContent { .. })
        }
    ));
}

#[test]
fn invalid_inputs_are_rejected_before_any_call() {
    let mut story = corpus()[0].clone();
    let params = ExecutionParams::default();
    let options = AssessOptions::default();
    story.narrative = None;
    story.description.clear();
    assert!(matches!(
        AssessmentPlan::new(&story, &builtin_invest(), None, &params, &options),
        Err(AssessError::Input(_))
    ));
    let story = corpus()[0].clone();
    assert!(matches!(
        AssessmentPlan::new(&story, &example_dor(), None, &params, &options),
        Err(AssessError::Input(_))
    ));
    let hot = ExecutionParams {
        temperature: -1.0,
        ..params
    };
    assert!(matches!(
        AssessmentPlan::new(&story, &builtin_invest(), None, &hot, &options),
        Err(AssessError::Input(_))
    ));
}

#[test]
fn report_ids_track_inputs() {
    let story = corpus()[0].clone();
    let params = ExecutionParams::default();
    let base = AssessOptions::default();
    let id = |story: &UserStory, params: &ExecutionParams, options: &AssessOptions| {
        AssessmentPlan::new(story, &builtin_invest(), None, params, options)
            .unwrap()
            .report_id
    };
    let a = id(&story, &params, &base);
    assert_eq!(a, id(&story, &params, &base));
    let v2 = AssessOptions {
        story_version: 2,
        ..base.clone()
    };
    assert!(id(&story, &params, &v2).starts_with(&format!("{}.v2.", story.id)));
    let full = AssessOptions {
        invest_fragment: FragmentStyle::Full,
        ..base.clone()
    };
    assert_ne!(a, id(&story, &params, &full));
    let seeded = ExecutionParams {
        seed: Some(1),
        ..params.clone()
    };
    assert_ne!(a, id(&story, &seeded, &base));
    let mut edited = story.clone();
    edited.acceptance_criteria.push("Totals are shown".into());
    assert_ne!(a, id(&edited, &params, &base));
}

#[tokio::test]
async fn grounding_lint_flags_invented_quotes() {
    let story = &corpus()[0];
    let mut backend = Scripted::from_fixtures();
    let mut doc: serde_json::Value = serde_json::from_str(&backend.invest).unwrap();
    doc["assessments"][0]["problems"][0]["description"] =
        "Mentions \"I can archive them\" but also \"nightly batch job\"".into();
    backend.invest = doc.to_string();

    let run = |lint| {
        let options = AssessOptions {
            grounding_lint: lint,
            ..AssessOptions::default()
        };
        let backend = &backend;
        async move {
            assess_story(
                story,
                &builtin_invest(),
                None,
                &ExecutionParams::default(),
                backend,
                &options,
            )
            .await
            .unwrap()
        }
    };
    let findings = run(true).await.grounding.unwrap();
    assert_eq!(findings.len(), 1, "{findings:?}");
    assert_eq!(findings[0].span, "nightly batch job");
    assert_eq!(
        (findings[0].stage, findings[0].criterion_id.as_str()),
        (Task::Invest, "independent")
    );
    assert!(run(false).await.grounding.is_none());
}

/// Counts concurrent calls.
struct Gauge {
    now: AtomicUsize,
    peak: AtomicUsize,
}

#[async_trait]
impl LlmBackend for Gauge {
    async fn complete(&self, _: &ChatRequest) -> Result<Completion, BackendError> {
        let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(n, Ordering::SeqCst);
        tokio::time::sleep(Duration::from_millis(20)).await;
        self.now.fetch_sub(1, Ordering::SeqCst);
        Ok(Completion::text("{}"))
    }
    fn descriptor(&self) -> String {
        "gauge".into()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bounded_backend_caps_concurrency() {
    let gauge = Arc::new(Gauge {
        now: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let bounded = Arc::new(BoundedBackend::new(gauge.clone(), 2));
    let request = ChatRequest::new(
        &deepquali_core::engine::PromptPair {
            system: "s".into(),
            user: "u".into(),
        },
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    );
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let b = bounded.clone();
            let r = request.clone();
            tokio::spawn(async move { b.complete(&r).await })
        })
        .collect();
    for t in tasks {
        t.await.unwrap().unwrap();
    }
    assert_eq!(gauge.peak.load(Ordering::SeqCst), 2);
}
