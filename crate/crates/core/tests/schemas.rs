mod common;

use common::read_fixture;
use deepquali_core::engine::{
    ChatRequest, ExecutionParams, PromptPair, ResponseSchema, StubBackend,
};
use deepquali_core::quality_model::{builtin_invest, builtin_rti, example_dor};
use serde_json::Value;

fn published(name: &str) -> Value {
    let path = format!("{}/schemas/{name}.schema.json", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn schemas() -> [(&'static str, ResponseSchema); 3] {
    [
        ("invest", ResponseSchema::for_model(&builtin_invest())),
        ("rti", ResponseSchema::for_model(&builtin_rti())),
        ("dor", ResponseSchema::for_model(&example_dor())),
    ]
}

fn validate(schema: &Value, doc: &Value) -> Vec<String> {
    let v = jsonschema::validator_for(schema).unwrap();
    v.iter_errors(doc).map(|e| e.to_string()).collect()
}

#[test]
fn published_schemas_are_current() {
    for (name, schema) in schemas() {
        assert_eq!(
            published(name),
            schema.to_json_schema(),
            "schemas/{name}.schema.json is stale"
        );
    }
}

#[test]
fn schemas_are_valid_documents() {
    for (name, _) in schemas() {
        let schema = published(name);
        assert!(jsonschema::meta::is_valid(&schema), "{name}");
    }
}

#[test]
fn valid_fixtures_conform() {
    for (schema, fixture) in [
        ("invest", "outputs/invest_valid.json"),
        ("rti", "outputs/rti_valid.json"),
        ("dor", "outputs/dor_valid.json"),
    ] {
        let doc: Value = serde_json::from_str(&read_fixture(fixture)).unwrap();
        let errors = validate(&published(schema), &doc);
        assert!(errors.is_empty(), "{fixture}: {errors:?}");
    }
}

#[test]
fn stub_answers_conform() {
    let prompt = PromptPair {
        system: "s".into(),
        user: "Here is the user story in JSON: {\"id\":\"X\",\"description\":\"Some text\"}."
            .into(),
    };
    for seed in 0..20 {
        let stub = StubBackend::new(seed);
        for (name, schema) in schemas() {
            let request = ChatRequest::new(&prompt, &ExecutionParams::default(), &schema);
            let doc: Value = serde_json::from_str(&stub.generate(&request)).unwrap();
            let errors = validate(&published(name), &doc);
            assert!(errors.is_empty(), "seed {seed}, {name}: {errors:?}");
        }
    }
}

#[test]
fn schema_rejects_out_of_range_and_unknown_criterion() {
    let schema = published("invest");
    let mut doc: Value = serde_json::from_str(&read_fixture("outputs/invest_valid.json")).unwrap();
    doc["assessments"][0]["score"] = 5.into();
    assert!(!validate(&schema, &doc).is_empty());
    doc["assessments"][0]["score"] = 3.into();
    doc["assessments"][0]["criterion_id"] = "clear".into();
    assert!(!validate(&schema, &doc).is_empty());
}
