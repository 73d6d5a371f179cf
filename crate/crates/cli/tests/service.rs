use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use lshensemble::partition::PowerLawModel;
use lshensemble::synth::{generate, SynthConfig};
use lshensemble::{Domain, Ensemble, EnsembleConfig, HashFamily};
use lshensemble_cli::server;
use lshensemble_cli::shard::round_robin;
use lshensemble_cli::wire::{HealthResponse, QueryRequest, QueryResponse};
use lshensemble_cli::{CliError, ShardSet};

fn corpus(n: usize, seed: u64) -> Vec<Domain> {
    generate(&SynthConfig::new(n, PowerLawModel::new(2.0, 10, 400).unwrap(), seed)).unwrap()
}

fn config() -> EnsembleConfig {
    EnsembleConfig { num_partitions: 8, ..Default::default() }
}

async fn spawn(index: Arc<Ensemble>) -> String {
    let (listener, addr) = server::bind("127.0.0.1:0").await.unwrap();
    tokio::spawn(server::serve(listener, index));
    format!("http://{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_reports_the_snapshot_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    Ensemble::bootstrap(&corpus(300, 1), config()).unwrap().save(dir.path()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let url = spawn(Arc::new(Ensemble::load(dir.path()).unwrap())).await;
    let health: HealthResponse = reqwest::get(format!("{url}/health")).await.unwrap().json().await.unwrap();
    assert_eq!(health.fingerprint, manifest["fingerprint"].as_str().unwrap());
    assert_eq!(health.indexed, 300);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn query_matches_in_process_results() {
    let domains = corpus(400, 2);
    let index = Arc::new(Ensemble::bootstrap(&domains, config()).unwrap());
    let url = spawn(index.clone()).await;
    let client = reqwest::Client::new();
    for (k, d) in domains.iter().step_by(37).enumerate() {
        let sig = index.signature(d).unwrap();
        let t = [0.3, 0.5, 1.0][k % 3];
        let size = if k % 2 == 0 { Some(d.len() as u64) } else { None };
        let direct = index.query(&sig, t, size).unwrap();
        let resp: QueryResponse = client
            .post(format!("{url}/query"))
            .json(&QueryRequest::new(&sig, t, size))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(resp.candidates, direct.candidates);
        assert_eq!(resp.diagnostics.partitions, direct.partitions);
        assert_eq!(resp.diagnostics.query_size_estimated, size.is_none());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_agree() {
    let domains = corpus(300, 3);
    let index = Arc::new(Ensemble::bootstrap(&domains, config()).unwrap());
    let url = spawn(index.clone()).await;
    let req = QueryRequest::new(&index.signature(&domains[5]).unwrap(), 0.4, None);
    let client = reqwest::Client::new();
    let calls = (0..16).map(|_| {
        let (client, url, req) = (client.clone(), url.clone(), req.clone());
        tokio::spawn(async move {
            let r: QueryResponse = client.post(format!("{url}/query")).json(&req).send().await.unwrap().json().await.unwrap();
            r.candidates
        })
    });
    let results: Vec<Vec<String>> = futures::future::join_all(calls).await.into_iter().map(Result::unwrap).collect();
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_requests_are_rejected_with_a_reason() {
    let index = Arc::new(Ensemble::bootstrap(&corpus(100, 4), config()).unwrap());
    let url = spawn(index.clone()).await;
    let client = reqwest::Client::new();
    let sig = index.signature(&corpus(100, 4)[0]).unwrap();
    let bodies = [
        "not json".to_string(),
        r#"{"threshold": 0.5}"#.to_string(),
        r#"{"signature": "@@@", "threshold": 0.5}"#.to_string(),
        serde_json::to_string(&QueryRequest::new(&sig, 1.5, None)).unwrap(),
        serde_json::to_string(&QueryRequest::new(&sig, 0.5, Some(0))).unwrap(),
    ];
    for body in bodies {
        let resp = client.post(format!("{url}/query")).body(body.clone()).send().await.unwrap();
        assert_eq!(resp.status(), 400, "{body}");
        let err: serde_json::Value = resp.json().await.unwrap();
        assert!(!err["error"].as_str().unwrap().is_empty());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mismatched_signature_is_reported_in_diagnostics() {
    let domains = corpus(100, 5);
    let index = Arc::new(Ensemble::bootstrap(&domains, config()).unwrap());
    let url = spawn(index).await;
    let other = HashFamily::new(256, 99).unwrap().domain_signature(&domains[0]).unwrap();
    let resp: QueryResponse = reqwest::Client::new()
        .post(format!("{url}/query"))
        .json(&QueryRequest::new(&other, 0.5, None))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(resp.candidates.is_empty());
    assert!(resp.diagnostics.mismatch.unwrap().contains("seed 99"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn single_shard_fanout_equals_direct_query() {
    let domains = corpus(300, 6);
    let index = Arc::new(Ensemble::bootstrap(&domains, config()).unwrap());
    let url = spawn(index.clone()).await;
    let shards = ShardSet::connect(&[url], Duration::from_secs(5)).await.unwrap();
    assert_eq!(shards.fingerprint(), index.fingerprint());
    for d in domains.iter().step_by(41) {
        let sig = shards.family().unwrap().domain_signature(d).unwrap();
        let result = shards.query(&sig, 0.5, Some(d.len() as u64)).await;
        assert!(result.is_complete());
        assert_eq!(result.shards.len(), 1);
        assert_eq!(result.candidates, index.query(&sig, 0.5, Some(d.len() as u64)).unwrap().candidates);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn fanout_union_covers_every_shard() {
    let domains = corpus(600, 7);
    let parts = round_robin(&domains, 3);
    let mut urls = Vec::new();
    let mut indexes = Vec::new();
    for part in &parts {
        let index = Arc::new(Ensemble::bootstrap(part, config()).unwrap());
        urls.push(spawn(index.clone()).await);
        indexes.push(index);
    }
    let shards = ShardSet::connect(&urls, Duration::from_secs(5)).await.unwrap();
    for d in domains.iter().step_by(53) {
        let sig = shards.family().unwrap().domain_signature(d).unwrap();
        let result = shards.query(&sig, 0.5, None).await;
        assert!(result.is_complete());
        let union: BTreeSet<&String> = result.candidates.iter().collect();
        for index in &indexes {
            for id in index.query(&sig, 0.5, None).unwrap().candidates {
                assert!(union.contains(&id));
            }
        }
        assert!(result.candidates.contains(&d.id().to_string()));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn down_shard_is_listed_as_missing() {
    let domains = corpus(200, 8);
    let index = Arc::new(Ensemble::bootstrap(&domains, config()).unwrap());
    let live = spawn(index.clone()).await;
    let (listener, addr) = server::bind("127.0.0.1:0").await.unwrap();
    drop(listener);
    let dead = format!("http://{addr}");

    match ShardSet::connect(&[live.clone(), dead.clone()], Duration::from_secs(2)).await {
        Err(CliError::MissingShards(list)) => assert!(list[0].contains(&dead)),
        other => panic!("expected missing shard error, got {other:?}"),
    }

    // A shard that is healthy but fails queries is reported per query.
    let health = server::health_of(&index);
    let stub = axum::Router::new()
        .route("/health", axum::routing::get(move || async move { axum::Json(health) }))
        .route("/query", axum::routing::post(|| async { axum::http::StatusCode::SERVICE_UNAVAILABLE }));
    let (listener, addr) = server::bind("127.0.0.1:0").await.unwrap();
    tokio::spawn(async move { axum::serve(listener, stub).await });
    let flaky = format!("http://{addr}");
    let shards = ShardSet::connect(&[live, flaky.clone()], Duration::from_secs(2)).await.unwrap();
    let sig = index.signature(&domains[0]).unwrap();
    let result = shards.query(&sig, 0.5, None).await;
    assert_eq!(result.missing, vec![flaky.clone()]);
    assert!(!result.candidates.is_empty());
    assert!(result.shards.iter().any(|s| s.endpoint == flaky && s.error.is_some()));
    match result.into_complete() {
        Err(e) => assert!(e.one_line().starts_with("error: missing_shards:") && e.to_string().contains(&flaky)),
        Ok(_) => panic!("partial result reported as complete"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shards_with_different_configs_are_refused() {
    let domains = corpus(100, 9);
    let a = Arc::new(Ensemble::bootstrap(&domains, config()).unwrap());
    let b = Arc::new(Ensemble::bootstrap(&domains, EnsembleConfig { seed: 2, ..config() }).unwrap());
    let urls = vec![spawn(a).await, spawn(b).await];
    let err = ShardSet::connect(&urls, Duration::from_secs(2)).await.unwrap_err();
    assert_eq!(err.kind(), "protocol");
}
