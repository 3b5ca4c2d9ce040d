use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use clinrag::config::RetrievalConfig;
use clinrag::qa::{
    prompt_digest, MockDigestClient, UnavailableClient, GUIDELINE_HEADER, PATIENT_HEADER,
};
use clinrag::synth::{
    fixture_store, rng, soap_text, synth_case, synth_cases, synth_guidelines, SynthVocab,
};
use clinrag::text::char_slice;
use clinrag::{Engine, EvidenceReport, HashedTrigramEmbedder, LlmClient, RetrieveOptions, Toggles};
use clinrag_service::{router, AppState, ErrorBody, QaResponse, ServiceOptions, SessionCreated};
use http_body_util::BodyExt;
use rand::Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

fn engine(n_cases: usize) -> (Engine, SynthVocab) {
    let sv = SynthVocab::generate(201);
    let store = fixture_store(
        &sv,
        &synth_cases(n_cases, 202, &sv),
        &synth_guidelines(6, 203, &sv).docs,
    )
    .unwrap();
    let e = Engine::build(
        store,
        Box::new(HashedTrigramEmbedder::default()),
        3,
        2400,
        RetrievalConfig::default(),
    )
    .unwrap();
    (e, sv)
}

fn app_with(
    engine: Option<Engine>,
    client: Arc<dyn LlmClient>,
    opts: ServiceOptions,
) -> (Router, Arc<AppState>) {
    let state = AppState::new(engine, client, opts);
    (router(state.clone()), state)
}

fn app(engine: Engine) -> (Router, Arc<AppState>) {
    app_with(
        Some(engine),
        Arc::new(MockDigestClient),
        ServiceOptions::default(),
    )
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: impl Into<String>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.into()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn lock(app: &Router, text: &str) -> SessionCreated {
    let (status, v) = call(app, "POST", "/sessions", text).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

#[tokio::test]
async fn randomized_retrieve_calls_equal_library_results() {
    let (engine, sv) = engine(200);
    let (app, state) = app(engine);
    let lib = state.engine().unwrap();
    let mut r = rng(204);
    for i in 0..25 {
        let case = synth_case(&mut r, &sv, &format!("probe-{i}"));
        let created = lock(&app, &soap_text(&case)).await;
        let opts = RetrieveOptions {
            use_patients: r.random_bool(0.75),
            use_guidelines: r.random_bool(0.75),
            k_patients: r.random_bool(0.5).then(|| r.random_range(1..=15)),
            k_communities: r.random_bool(0.5).then(|| r.random_range(1..=5)),
        };
        let (status, got) = call(
            &app,
            "POST",
            &format!("/sessions/{}/retrieve", created.session_id),
            serde_json::to_string(&opts).unwrap(),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let locked = lib
            .lock_case(&soap_text(&case), &created.case.case_id)
            .unwrap();
        assert_eq!(locked, created.case);
        let want = lib.retrieve(&locked, &opts).unwrap();
        assert_eq!(got, serde_json::to_value(&want).unwrap(), "call {i}");
        let parsed: EvidenceReport = serde_json::from_value(got).unwrap();
        assert_eq!(parsed, want);
    }
}

#[tokio::test]
async fn empty_retrieve_body_uses_defaults() {
    let (engine, sv) = engine(40);
    let (app, state) = app(engine);
    let case = synth_case(&mut rng(1), &sv, "x");
    let s = lock(&app, &soap_text(&case)).await;
    let (status, got) = call(
        &app,
        "POST",
        &format!("/sessions/{}/retrieve", s.session_id),
        "",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let e = state.engine().unwrap();
    let want = e.retrieve(&s.case, &RetrieveOptions::default()).unwrap();
    assert_eq!(got, serde_json::to_value(want).unwrap());
    let (_, off) = call(
        &app,
        "POST",
        &format!("/sessions/{}/retrieve", s.session_id),
        r#"{"use_patients":false,"use_guidelines":false}"#,
    )
    .await;
    assert_eq!(off["evidence"]["patient_hits"], json!([]));
    assert_eq!(off["evidence"]["guideline_hits"], json!([]));
}

#[tokio::test]
async fn prompt_blocks_follow_toggles() {
    let (engine, sv) = engine(60);
    let (app, state) = app(engine);
    let repo_ids: Vec<String> = state
        .engine()
        .unwrap()
        .store
        .repo
        .iter()
        .map(|c| c.case_id.clone())
        .collect();
    let case = synth_case(&mut rng(9), &sv, "locked");
    let s = lock(&app, &soap_text(&case)).await;
    for t in Toggles::all() {
        let body = json!({"question": "What is the next step?", "use_patients": t.use_patients, "use_guidelines": t.use_guidelines});
        let (status, v) = call(
            &app,
            "POST",
            &format!("/sessions/{}/qa", s.session_id),
            body.to_string(),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let qa: QaResponse = serde_json::from_value(v).unwrap();
        assert_eq!(qa.prompt_echo.contains(PATIENT_HEADER), t.use_patients);
        assert_eq!(qa.prompt_echo.contains(GUIDELINE_HEADER), t.use_guidelines);
        assert_eq!(qa.prompt_echo.contains("[P-1]"), t.use_patients);
        assert_eq!(qa.prompt_echo.contains("[G-1]"), t.use_guidelines);
        assert!(qa.prompt_echo.contains("What is the next step?"));
        assert!(qa.prompt_echo.contains(&case.subjective));
        assert_eq!(qa.answer, prompt_digest(&qa.prompt_echo));
        for c in &qa.citations {
            assert!(qa.prompt_echo.contains(&format!("[{}]", c.marker)));
        }
        if !t.use_patients {
            assert!(repo_ids
                .iter()
                .all(|id| !qa.prompt_echo.contains(id.as_str())));
        }
    }
}

#[tokio::test]
async fn every_unit_resolves_over_http() {
    let (engine, _) = engine(10);
    let (app, state) = app(engine);
    let e = state.engine().unwrap();
    assert!(!e.store.graph.unit_index.is_empty());
    for (id, unit) in &e.store.graph.unit_index {
        let (status, v) = call(&app, "GET", &format!("/provenance/{id}"), "").await;
        assert_eq!(status, StatusCode::OK, "{id}");
        let doc = e.store.corpus.get(&unit.doc_id).unwrap();
        assert_eq!(v["doc_id"], json!(unit.doc_id));
        assert_eq!(v["section_path"], json!(unit.section_path));
        let text = v["text"].as_str().unwrap();
        assert_eq!(
            text,
            char_slice(&doc.body, unit.span.char_start, unit.span.char_end)
        );
    }
}

fn error_code(v: &Value) -> String {
    let body: ErrorBody = serde_json::from_value(v.clone()).unwrap();
    assert!(!body.message.is_empty());
    body.code
}

#[tokio::test]
async fn error_statuses_and_codes() {
    let (engine, sv) = engine(20);
    let text = soap_text(&synth_case(&mut rng(5), &sv, "e"));
    let (app, state) = app(engine);

    let (status, v) = call(&app, "POST", "/sessions", "").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&v), "NoSectionFound");

    let a = lock(&app, &text).await;
    let b = lock(&app, &text).await;
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(state.sessions().len(), 2);

    let (status, v) = call(&app, "POST", "/sessions/nope/retrieve", "{}").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&v), "SessionNotFound");
    let (status, _) = call(&app, "POST", "/sessions/nope/qa", r#"{"question":"q"}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{}/retrieve", a.session_id),
        "{not json",
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&v), "InvalidRequest");
    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{}/retrieve", a.session_id),
        r#"{"k_patients":0}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&v), "InvalidK");
    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{}/qa", a.session_id),
        r#"{"question":"  "}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&v), "EmptyQuestion");

    let (status, v) = call(&app, "GET", "/provenance/missing:u0000", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&v), "UnitNotFound");

    let (status, v) = call(&app, "GET", "/health", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["loaded"], json!(true));
}

#[tokio::test]
async fn unavailable_client_gives_502_without_answer() {
    let (engine, sv) = engine(20);
    let (app, _) = app_with(
        Some(engine),
        Arc::new(UnavailableClient),
        ServiceOptions::default(),
    );
    let s = lock(&app, &soap_text(&synth_case(&mut rng(6), &sv, "u"))).await;
    let (status, v) = call(
        &app,
        "POST",
        &format!("/sessions/{}/qa", s.session_id),
        r#"{"question":"why?"}"#,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(error_code(&v), "ClientUnavailable");
    assert!(v.get("answer").is_none());
}

#[tokio::test]
async fn no_index_gives_409_until_loaded() {
    let (engine, sv) = engine(20);
    let (app, state) = app_with(None, Arc::new(MockDigestClient), ServiceOptions::default());
    let text = soap_text(&synth_case(&mut rng(7), &sv, "n"));
    let (status, v) = call(&app, "POST", "/sessions", text.clone()).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&v), "IndexNotLoaded");
    let (status, _) = call(&app, "GET", "/provenance/x:u0000", "").await;
    assert_eq!(status, StatusCode::CONFLICT);
    state.load_engine(engine);
    lock(&app, &text).await;
}

#[tokio::test]
async fn sessions_expire_after_ttl() {
    let (engine, sv) = engine(20);
    let opts = ServiceOptions {
        session_ttl: Duration::from_millis(50),
        ..Default::default()
    };
    let (app, _) = app_with(Some(engine), Arc::new(MockDigestClient), opts);
    let s = lock(&app, &soap_text(&synth_case(&mut rng(8), &sv, "t"))).await;
    let uri = format!("/sessions/{}/retrieve", s.session_id);
    assert_eq!(call(&app, "POST", &uri, "{}").await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(80)).await;
    assert_eq!(
        call(&app, "POST", &uri, "{}").await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn sessions_are_isolated() {
    let (engine, sv) = engine(50);
    let (app, _) = app(engine);
    let mut r = rng(10);
    let a_case = synth_case(&mut r, &sv, "a");
    let b_case = synth_case(&mut r, &sv, "b");
    let a = lock(&app, &soap_text(&a_case)).await;
    let b = lock(&app, &soap_text(&b_case)).await;
    let body = json!({"question": "plan?"}).to_string();
    let (_, va) = call(
        &app,
        "POST",
        &format!("/sessions/{}/qa", a.session_id),
        body.clone(),
    )
    .await;
    let (_, vb) = call(
        &app,
        "POST",
        &format!("/sessions/{}/qa", b.session_id),
        body,
    )
    .await;
    let (pa, pb) = (
        va["prompt_echo"].as_str().unwrap(),
        vb["prompt_echo"].as_str().unwrap(),
    );
    assert!(pa.contains(&a_case.subjective) && !pa.contains(&b_case.subjective));
    assert!(pb.contains(&b_case.subjective) && !pb.contains(&a_case.subjective));
}
