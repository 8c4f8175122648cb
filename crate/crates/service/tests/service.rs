mod common;

use std::sync::Arc;

use ner_core::model::NerModel;
use ner_service::api::parse_request;
use ner_service::registry::{ModelRegistry, RegistryConfig};
use ner_service::{handle_ner_request, router, ApiError, NerRequest, NerResponse};

fn registry() -> (tempfile::TempDir, ModelRegistry) {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_fixture(dir.path());
    let reg = ModelRegistry::load(&RegistryConfig::from_file(path).unwrap()).unwrap();
    (dir, reg)
}

fn tokens(s: &str) -> Vec<String> {
    s.split(' ').map(String::from).collect()
}

#[test]
fn fixture_model_tags_the_example() {
    let (model, store) = common::fixture_model();
    assert_eq!(
        model.predict(&store, &["Aachen", "liegt", "im", "Westen"]).unwrap(),
        ["B-LOC", "O", "O", "O"]
    );
}

#[test]
fn request_handling_matches_offline_predict() {
    let (dir, reg) = registry();
    let offline = NerModel::load(dir.path().join("fixture.mner")).unwrap();
    let store = ner_core::embeddings::EmbeddingStore::load(dir.path().join("fixture.vec")).unwrap();
    let sentences = vec![
        tokens("Aachen liegt im Westen"),
        tokens("Lena wohnt in Trier"),
        tokens("Unbekannt besucht Bonn seit 2018 ."),
    ];
    let resp = handle_ner_request(
        &reg,
        &NerRequest {
            model: "germeval-outer".into(),
            sentences: sentences.clone(),
        },
    )
    .unwrap();
    assert_eq!(resp.labels.len(), 3);
    for (s, l) in sentences.iter().zip(&resp.labels) {
        assert_eq!(s.len(), l.len());
        assert_eq!(&offline.predict(&store, s).unwrap(), l);
    }
}

#[test]
fn request_errors() {
    let (_dir, reg) = registry();
    let err = handle_ner_request(
        &reg,
        &NerRequest {
            model: "nope".into(),
            sentences: vec![tokens("a")],
        },
    )
    .unwrap_err();
    assert_eq!(err.status(), 404);
    assert_eq!(err.body()["available_models"][0], "germeval-outer");

    let err = handle_ner_request(
        &reg,
        &NerRequest {
            model: "germeval-outer".into(),
            sentences: vec![vec![]],
        },
    )
    .unwrap_err();
    assert_eq!(err.status(), 400);

    let err = parse_request(br#"{"model":"germeval-outer","sentences":["raw string"]}"#).unwrap_err();
    assert!(matches!(err, ApiError::BadRequest(_)));
    assert!(parse_request(b"not json").is_err());
}

#[test]
fn registry_fails_on_missing_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.toml");
    std::fs::write(&p, "[[model]]\nname = \"x\"\npath = \"missing.mner\"\nembeddings = \"v.vec\"\n").unwrap();
    let err = ModelRegistry::load(&RegistryConfig::from_file(&p).unwrap()).unwrap_err();
    assert!(err.to_string().contains("missing.mner"), "{err}");
}

#[test]
fn registry_shares_embedding_stores() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path());
    let p = dir.path().join("two.toml");
    std::fs::write(
        &p,
        "[[model]]\nname = \"a\"\npath = \"fixture.mner\"\nembeddings = \"fixture.vec\"\n\
         [[model]]\nname = \"b\"\npath = \"fixture.mner\"\nembeddings = \"fixture.vec\"\n",
    )
    .unwrap();
    let reg = ModelRegistry::load(&RegistryConfig::from_file(&p).unwrap()).unwrap();
    assert_eq!(reg.names(), ["a", "b"]);
    assert!(Arc::ptr_eq(&reg.get("a").unwrap().store, &reg.get("b").unwrap().store));
}

async fn spawn(reg: ModelRegistry) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(Arc::new(reg))).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_endpoints() {
    let (_dir, reg) = registry();
    let base = spawn(reg).await;
    let client = reqwest::Client::new();

    let health: serde_json::Value = client.get(format!("{base}/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health, serde_json::json!({"status": "ok"}));
    let models: serde_json::Value = client.get(format!("{base}/models")).send().await.unwrap().json().await.unwrap();
    assert_eq!(models["models"], serde_json::json!(["germeval-outer"]));

    let resp = client
        .post(format!("{base}/ner"))
        .json(&serde_json::json!({"model": "germeval-outer", "sentences": [["Aachen", "liegt", "im", "Westen"]]}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("application/json"));
    let body: NerResponse = resp.json().await.unwrap();
    assert_eq!(body.labels, vec![vec!["B-LOC", "O", "O", "O"]]);
    assert_eq!(body.model, "germeval-outer");

    let bad = client
        .post(format!("{base}/ner"))
        .body(r#"{"model":"germeval-outer","sentences":["raw string"]}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), 400);
    let missing = client
        .post(format!("{base}/ner"))
        .json(&serde_json::json!({"model": "nope", "sentences": [["a"]]}))
        .send()
        .await
        .unwrap();
    assert_eq!(missing.status(), 404);
    let body: serde_json::Value = missing.json().await.unwrap();
    assert_eq!(body["available_models"], serde_json::json!(["germeval-outer"]));
}
