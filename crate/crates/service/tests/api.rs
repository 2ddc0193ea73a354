use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use syngen::grammar::{gen_paraphrase_corpus, load_pcfg, ParallelCorpus, Record, TransformSet, TOY_GRAMMAR};
use syngen::model::{train_count, AnyModel};
use syngen::tree::{parse_bracketed, Whitelist};
use syngen::triplet::{TripletSet, Vocab};
use syngen_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

const QUESTION: &str = "(S did (NP you) (VP see (NP a pear)) ?)";

fn model() -> AnyModel {
    let g = load_pcfg(TOY_GRAMMAR).unwrap();
    let mut corpus = gen_paraphrase_corpus(&g, &TransformSet::parse("identity").unwrap(), 60, 4).unwrap();
    let q = parse_bracketed(QUESTION).unwrap();
    corpus.records.push(Record::new(q.yield_tokens(), q.yield_tokens(), q));
    let wl = Whitelist::default();
    let ts = TripletSet::from_corpus(&corpus, &wl).unwrap();
    AnyModel::Count(train_count(&ts, Vocab::build(&corpus, &wl), 0.01).unwrap())
}

fn first_source() -> Vec<String> {
    let g = load_pcfg(TOY_GRAMMAR).unwrap();
    let c: ParallelCorpus = gen_paraphrase_corpus(&g, &TransformSet::parse("identity").unwrap(), 60, 4).unwrap();
    c.records
        .iter()
        .find(|r| r.tree.clone().attach_root().frontier_at_depth(2).to_string() == "<NP> <VP> .")
        .unwrap()
        .source
        .clone()
}

fn app_with(config: ServiceConfig) -> Router {
    router(AppState::new(model(), config))
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, source: &[String], config: Value) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(json!({ "source": source, "config": config }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

async fn run_to_end(app: &Router, id: &str) -> Value {
    loop {
        let (status, body) = call(app, "POST", &format!("/sessions/{id}/step"), Some(json!({}))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        if body["status"] != "active" {
            break;
        }
    }
    let (status, body) = call(app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    body
}

fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap_or_else(|| panic!("no error object in {body}"))
}

#[tokio::test]
async fn healthz_reports_the_model() {
    let (status, body) = call(&app(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["model_kind"], "count");
    assert!(body["vocab_size"].as_u64().unwrap() > 5);
}

#[tokio::test]
async fn new_session_holds_the_root() {
    let app = app();
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "source": first_source(), "config": { "k": 5 } }))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["depth"], 0);
    assert_eq!(body["status"], "active");
    assert_eq!(body["beam"], json!([{ "index": 0, "context": ["<T>"], "score": 0.0, "finished": false, "failed": false }]));
}

#[tokio::test]
async fn stepping_without_edits_matches_generate() {
    let app = app();
    for k in [1, 3, 5] {
        let config = json!({ "k": k, "alpha": 0.8 });
        let id = create(&app, &first_source(), config.clone()).await;
        let history = run_to_end(&app, &id).await;
        assert_eq!(history["status"], "finished");
        let (status, one_shot) = call(&app, "POST", "/generate", Some(json!({ "source": first_source(), "config": config }))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(history["hypotheses"], one_shot["hypotheses"]);
        assert_eq!(history["hypotheses"][0]["tokens"], json!(first_source()));
    }
}

#[tokio::test]
async fn edits_steer_the_next_depth() {
    let app = app();
    let id = create(&app, &first_source(), json!({ "k": 3 })).await;
    call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({}))).await;
    let (_, depth2) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({}))).await;
    let slot = depth2["beam"]
        .as_array()
        .unwrap()
        .iter()
        .position(|c| c["context"] == json!(["<NP>", "<VP>", "."]))
        .expect("declarative context in the beam");
    let score = depth2["beam"][slot]["score"].clone();

    let edit = json!({ "edits": [{ "index": slot, "context": ["did", "<NP>", "<VP>", "?"] }] });
    let (status, depth3) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(edit)).await;
    assert_eq!(status, StatusCode::OK, "{depth3}");
    assert_eq!(depth3["edits"][0]["after"], json!(["did", "<NP>", "<VP>", "?"]));
    assert_eq!(depth3["edits"][0]["origin"], "human");
    let children: Vec<&Value> = depth3["expansions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["parent_index"] == slot)
        .collect();
    assert!(!children.is_empty());
    for child in children {
        let items = child["context"].as_array().unwrap();
        assert_eq!(items.first().unwrap(), "did");
        assert_eq!(items.last().unwrap(), "?");
        assert_eq!(child["delta_s"], score);
    }

    let history = run_to_end(&app, &id).await;
    assert_eq!(history["history"][2]["edits"][0]["before"], json!(["<NP>", "<VP>", "."]));
    let edited: Vec<&Value> = history["hypotheses"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|h| h["trace"]["steps"].as_array().unwrap().iter().any(|s| !s["edited_from"].is_null()))
        .collect();
    assert!(!edited.is_empty());
    for h in edited {
        let steps = h["trace"]["steps"].as_array().unwrap();
        assert_eq!(steps[2]["context"], json!(["did", "<NP>", "<VP>", "?"]));
        assert_eq!(steps[2]["edited_from"], json!(["<NP>", "<VP>", "."]));
        assert_eq!(h["tokens"][0], "did");
    }
}

#[tokio::test]
async fn invalid_edits_are_rejected_and_leave_the_session_alone() {
    let app = app();
    let id = create(&app, &first_source(), json!({ "k": 2 })).await;
    call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({}))).await;
    let uri = format!("/sessions/{id}/step");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "edits": [{ "index": 0, "context": ["<ZZZ>", "."] }] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_edit");
    assert!(body["error"]["message"].as_str().unwrap().contains("ZZZ"));

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "edits": [{ "index": 9, "context": ["<NP>"] }] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_edit");

    let (status, body) = call(&app, "POST", &uri, Some(json!({ "edits": [{ "index": 0, "context": [] }] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_edit");

    let (_, snapshot) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(snapshot["depth"], 1);
    assert_eq!(snapshot["history"].as_array().unwrap().len(), 1);
    assert!(snapshot["history"][0].get("edits").is_none_or(|e| e.as_array().unwrap().is_empty()));
}

#[tokio::test]
async fn request_errors_use_the_error_envelope() {
    let app = app();
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "source": [] }))).await;
    assert_eq!((status, error_code(&body)), (StatusCode::BAD_REQUEST, "empty_source"));

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "source": ["the", "zebra"] }))).await;
    assert_eq!((status, error_code(&body)), (StatusCode::BAD_REQUEST, "unknown_token"));
    assert!(body["error"]["message"].as_str().unwrap().contains("zebra"));

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "source": ["the"], "config": { "k": 0 } }))).await;
    assert_eq!((status, error_code(&body)), (StatusCode::BAD_REQUEST, "invalid_config"));

    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "source": ["the"], "config": { "template": "(S (NP" } }))).await;
    assert_eq!((status, error_code(&body)), (StatusCode::BAD_REQUEST, "bad_request"));

    let (status, body) = call(&app, "GET", "/sessions/not-a-session", None).await;
    assert_eq!((status, error_code(&body)), (StatusCode::NOT_FOUND, "session_not_found"));

    let id = create(&app, &first_source(), json!({})).await;
    run_to_end(&app, &id).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({}))).await;
    assert_eq!((status, error_code(&body)), (StatusCode::CONFLICT, "session_finished"));
}

#[tokio::test]
async fn lenient_vocab_accepts_unknown_tokens() {
    let app = app_with(ServiceConfig {
        strict_vocab: false,
        ..ServiceConfig::default()
    });
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({ "source": ["the", "zebra"] }))).await;
    assert_eq!(status, StatusCode::CREATED);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let state = AppState::new(
        model(),
        ServiceConfig {
            idle_timeout: Duration::from_millis(20),
            ..ServiceConfig::default()
        },
    );
    let app = router(state.clone());
    let id = create(&app, &first_source(), json!({})).await;
    assert_eq!(state.session_count(), 1);
    tokio::time::sleep(Duration::from_millis(60)).await;
    let (status, body) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!((status, error_code(&body)), (StatusCode::NOT_FOUND, "session_not_found"));
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn interleaved_sessions_are_isolated() {
    let app = app();
    let g = load_pcfg(TOY_GRAMMAR).unwrap();
    let c = gen_paraphrase_corpus(&g, &TransformSet::parse("identity").unwrap(), 60, 4).unwrap();
    let sources: Vec<Vec<String>> = c.records.iter().take(3).map(|r| r.source.clone()).collect();
    let mut ids = Vec::new();
    for s in &sources {
        ids.push(create(&app, s, json!({ "k": 4 })).await);
    }
    let mut active = ids.clone();
    while !active.is_empty() {
        let mut next = Vec::new();
        for id in &active {
            let (_, body) = call(&app, "POST", &format!("/sessions/{id}/step"), Some(json!({}))).await;
            if body["status"] == "active" {
                next.push(id.clone());
            }
        }
        active = next;
    }
    for (id, s) in ids.iter().zip(&sources) {
        let (_, history) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        let (_, one_shot) = call(&app, "POST", "/generate", Some(json!({ "source": s, "config": { "k": 4 } }))).await;
        assert_eq!(history["hypotheses"], one_shot["hypotheses"]);
    }
}
