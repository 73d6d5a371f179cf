//! Scatter-gather client: sends one query to every shard concurrently and
//! unions the candidate sets.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use futures::future::join_all;
use lshensemble::{HashFamily, MinHashSignature};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::wire::{ErrorResponse, HealthResponse, QueryRequest, QueryResponse};

/// `host:port` or a full URL, without a trailing slash.
pub fn normalize_endpoint(endpoint: &str) -> String {
    let trimmed = endpoint.trim().trim_end_matches('/');
    if trimmed.starts_with("http://") || trimmed.starts_with("https://") {
        trimmed.to_string()
    } else {
        format!("http://{trimmed}")
    }
}

/// Shards that share one signature configuration.
#[derive(Debug, Clone)]
pub struct ShardSet {
    endpoints: Vec<String>,
    health: HealthResponse,
    client: reqwest::Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardReport {
    pub endpoint: String,
    pub latency_micros: u64,
    pub candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoutResult {
    /// Union over the shards that answered. Sorted.
    pub candidates: Vec<String>,
    pub shards: Vec<ShardReport>,
    /// Shards whose candidates are absent from the union: unreachable,
    /// timed out, failed, or built with a different configuration.
    pub missing: Vec<String>,
}

impl FanoutResult {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    /// The candidates, or an error naming every missing shard.
    pub fn into_complete(self) -> Result<Vec<String>> {
        if self.missing.is_empty() {
            Ok(self.candidates)
        } else {
            Err(CliError::MissingShards(self.missing))
        }
    }
}

impl ShardSet {
    /// Checks every shard's health and that all fingerprints agree.
    /// Each request is limited by `timeout`.
    pub async fn connect(endpoints: &[String], timeout: Duration) -> Result<Self> {
        if endpoints.is_empty() {
            return Err(CliError::Usage("at least one shard is required".into()));
        }
        let endpoints: Vec<String> = endpoints.iter().map(|e| normalize_endpoint(e)).collect();
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| CliError::Http(e.to_string()))?;
        let checks = join_all(endpoints.iter().map(|e| fetch_health(&client, e))).await;
        let mut missing = Vec::new();
        let mut healths = Vec::new();
        for (endpoint, check) in endpoints.iter().zip(checks) {
            match check {
                Ok(h) => healths.push((endpoint, h)),
                Err(e) => missing.push(format!("{endpoint} ({e})")),
            }
        }
        if !missing.is_empty() {
            return Err(CliError::MissingShards(missing));
        }
        let (first, health) = healths[0].clone();
        for (endpoint, h) in &healths[1..] {
            if h.fingerprint != health.fingerprint {
                return Err(CliError::Protocol(format!(
                    "shard {endpoint} has fingerprint {} but {first} has {}",
                    h.fingerprint, health.fingerprint
                )));
            }
        }
        Ok(ShardSet {
            endpoints,
            health,
            client,
        })
    }

    pub fn endpoints(&self) -> &[String] {
        &self.endpoints
    }

    pub fn fingerprint(&self) -> &str {
        &self.health.fingerprint
    }

    /// Hash family queries must be signed with.
    pub fn family(&self) -> Result<HashFamily> {
        Ok(HashFamily::new(self.health.num_perm, self.health.seed)?)
    }

    /// Queries every shard concurrently. Failures do not abort the query;
    /// they are listed in [`FanoutResult::missing`].
    pub async fn query(&self, sig: &MinHashSignature, threshold: f64, query_size: Option<u64>) -> FanoutResult {
        let request = QueryRequest::new(sig, threshold, query_size);
        let calls = self.endpoints.iter().map(|e| {
            let request = &request;
            async move {
                let start = Instant::now();
                let outcome = post_query(&self.client, e, request).await;
                (e, start.elapsed(), outcome)
            }
        });
        let mut union = BTreeSet::new();
        let mut shards = Vec::with_capacity(self.endpoints.len());
        let mut missing = Vec::new();
        for (endpoint, latency, outcome) in join_all(calls).await {
            let outcome = outcome.and_then(|resp| match resp.diagnostics.mismatch {
                Some(m) => Err(CliError::Protocol(m)),
                None => Ok(resp),
            });
            let latency_micros = latency.as_micros() as u64;
            match outcome {
                Ok(resp) => {
                    shards.push(ShardReport {
                        endpoint: endpoint.clone(),
                        latency_micros,
                        candidates: resp.candidates.len(),
                        error: None,
                    });
                    union.extend(resp.candidates);
                }
                Err(e) => {
                    shards.push(ShardReport {
                        endpoint: endpoint.clone(),
                        latency_micros,
                        candidates: 0,
                        error: Some(e.to_string()),
                    });
                    missing.push(endpoint.clone());
                }
            }
        }
        FanoutResult {
            candidates: union.into_iter().collect(),
            shards,
            missing,
        }
    }
}

async fn fetch_health(client: &reqwest::Client, endpoint: &str) -> Result<HealthResponse> {
    let resp = client
        .get(format!("{endpoint}/health"))
        .send()
        .await
        .map_err(|e| CliError::Http(e.to_string()))?;
    decode(resp).await
}

async fn post_query(client: &reqwest::Client, endpoint: &str, request: &QueryRequest) -> Result<QueryResponse> {
    let resp = client
        .post(format!("{endpoint}/query"))
        .json(request)
        .send()
        .await
        .map_err(|e| CliError::Http(e.to_string()))?;
    decode(resp).await
}

async fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
    let status = resp.status();
    let body = resp.bytes().await.map_err(|e| CliError::Http(e.to_string()))?;
    if !status.is_success() {
        let reason = serde_json::from_slice::<ErrorResponse>(&body)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        return Err(CliError::Http(format!("status {status}: {reason}")));
    }
    serde_json::from_slice(&body).map_err(|e| CliError::Protocol(format!("bad response: {e}")))
}
