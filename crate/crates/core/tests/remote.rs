use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use deepquali_core::engine::{
    invoke_llm, BackendError, ExecutionParams, LlmBackend, PromptPair, RemoteBackend,
    ResponseSchema, RetryPolicy,
};
use deepquali_core::quality_model::builtin_invest;

type Answer = (u16, Value, u64);
type Seen = Arc<Mutex<Vec<(Option<String>, Value)>>>;

/// Canned answers, served in order; the last one repeats.
#[derive(Clone)]
struct Mock {
    answers: Arc<Vec<Answer>>,
    seen: Seen,
}

async fn handler(
    State(m): State<Mock>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let auth = headers
        .get("authorization")
        .map(|v| v.to_str().unwrap().to_owned());
    let i = {
        let mut seen = m.seen.lock().unwrap();
        seen.push((auth, body));
        seen.len() - 1
    };
    let (status, answer, delay_ms) = m.answers[i.min(m.answers.len() - 1)].clone();
    tokio::time::sleep(Duration::from_millis(delay_ms)).await;
    (StatusCode::from_u16(status).unwrap(), Json(answer))
}

async fn serve(answers: Vec<Answer>) -> (String, Mock) {
    let mock = Mock {
        answers: Arc::new(answers),
        seen: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/chat/completions", post(handler))
        .with_state(mock.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), mock)
}

fn message(content: Value, refusal: Value) -> Value {
    json!({ "choices": [{ "message": { "role": "assistant", "content": content, "refusal": refusal } }] })
}

fn backend(url: &str, attempts: u32, timeout_ms: u64) -> RemoteBackend {
    RemoteBackend::new(
        url,
        Some("secret-key".into()),
        Duration::from_millis(timeout_ms),
        RetryPolicy {
            attempts,
            initial_backoff: Duration::from_millis(5),
        },
    )
    .unwrap()
}

fn prompt() -> PromptPair {
    PromptPair {
        system: "system text".into(),
        user: "user text".into(),
    }
}

#[tokio::test]
async fn request_body_carries_every_parameter() {
    let (url, mock) = serve(vec![(200, message(json!("{\"ok\":1}"), Value::Null), 0)]).await;
    let params = ExecutionParams {
        model_name: "gpt-4o".into(),
        temperature: 0.0,
        seed: Some(7),
        max_tokens: 512,
        stop: Some(vec!["END".into()]),
        presence_penalty: 0.5,
        frequency_penalty: -0.5,
    };
    let schema = ResponseSchema::for_model(&builtin_invest());
    let b = backend(&url, 1, 5_000);
    let out = invoke_llm(&b, &prompt(), &params, &schema).await.unwrap();
    assert_eq!(out, "{\"ok\":1}");
    assert_eq!(b.descriptor(), format!("openai-compatible:{url}"));

    let seen = mock.seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer secret-key"));
    assert_eq!(body["model"], "gpt-4o");
    assert_eq!(
        body["messages"],
        json!([
            { "role": "system", "content": "system text" },
            { "role": "user", "content": "user text" }
        ])
    );
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["seed"], 7);
    assert_eq!(body["max_tokens"], 512);
    assert_eq!(body["stop"], json!(["END"]));
    assert_eq!(body["presence_penalty"], 0.5);
    assert_eq!(body["frequency_penalty"], -0.5);
    assert_eq!(body["response_format"]["type"], "json_schema");
    assert_eq!(
        body["response_format"]["json_schema"]["name"],
        "invest_assessment"
    );
    assert_eq!(body["response_format"]["json_schema"]["strict"], true);
    assert_eq!(
        body["response_format"]["json_schema"]["schema"],
        schema.to_json_schema()
    );
}

#[tokio::test]
async fn server_errors_are_retried() {
    let (url, mock) = serve(vec![
        (503, json!({"error": "busy"}), 0),
        (500, json!({"error": "oops"}), 0),
        (200, message(json!("{}"), Value::Null), 0),
    ])
    .await;
    let out = invoke_llm(
        &backend(&url, 3, 5_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap();
    assert_eq!(out, "{}");
    assert_eq!(mock.seen.lock().unwrap().len(), 3);
}

#[tokio::test]
async fn retries_are_bounded() {
    let (url, mock) = serve(vec![(502, json!({"error": "down"}), 0)]).await;
    let err = invoke_llm(
        &backend(&url, 2, 5_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    assert!(
        matches!(
            err,
            BackendError::Status {
                status: 502,
                attempts: 2,
                ..
            }
        ),
        "{err:?}"
    );
    assert_eq!(mock.seen.lock().unwrap().len(), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, mock) = serve(vec![(401, json!({"error": "bad key"}), 0)]).await;
    let err = invoke_llm(
        &backend(&url, 3, 5_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    match err {
        BackendError::Status {
            status,
            attempts,
            body,
        } => {
            assert_eq!((status, attempts), (401, 1));
            assert!(body.contains("bad key"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn slow_answers_time_out() {
    let (url, mock) = serve(vec![(200, message(json!("{}"), Value::Null), 2_000)]).await;
    let err = invoke_llm(
        &backend(&url, 3, 100),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
    assert_eq!(mock.seen.lock().unwrap().len(), 1);
}

#[tokio::test]
async fn refusal_and_empty_content() {
    let (url, _) = serve(vec![(200, message(Value::Null, json!("I cannot help")), 0)]).await;
    let err = invoke_llm(
        &backend(&url, 1, 5_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    match err {
        BackendError::Refusal { refusal, raw } => {
            assert_eq!(refusal, "I cannot help");
            assert!(raw.contains("choices"));
        }
        other => panic!("unexpected {other:?}"),
    }

    let (url, _) = serve(vec![(200, message(json!(""), Value::Null), 0)]).await;
    let err = invoke_llm(
        &backend(&url, 1, 5_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, BackendError::EmptyContent { .. }), "{err:?}");

    let (url, _) = serve(vec![(200, json!({"unexpected": true}), 0)]).await;
    let err = invoke_llm(
        &backend(&url, 1, 5_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
}

#[tokio::test]
async fn unreachable_host_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = invoke_llm(
        &backend(&url, 2, 1_000),
        &prompt(),
        &ExecutionParams::default(),
        &ResponseSchema::Rti,
    )
    .await
    .unwrap_err();
    assert!(
        matches!(err, BackendError::Transport { attempts: 2, .. }),
        "{err:?}"
    );
}
