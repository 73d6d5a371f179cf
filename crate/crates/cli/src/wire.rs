//! JSON messages exchanged between the fan-out client and shard servers.
//! Signatures travel in their binary form, base64 encoded.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use lshensemble::ensemble::PartitionDiagnostics;
use lshensemble::MinHashSignature;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    /// Base64 of the binary signature format.
    pub signature: String,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_size: Option<u64>,
}

impl QueryRequest {
    pub fn new(sig: &MinHashSignature, threshold: f64, query_size: Option<u64>) -> Self {
        QueryRequest {
            signature: encode_signature(sig),
            threshold,
            query_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDiagnostics {
    pub fingerprint: String,
    /// Set when the query signature does not match the index; no
    /// candidates are returned in that case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<String>,
    pub query_size: Option<f64>,
    pub query_size_estimated: bool,
    pub partitions: Vec<PartitionDiagnostics>,
    pub elapsed_micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub candidates: Vec<String>,
    pub diagnostics: QueryDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub fingerprint: String,
    pub num_perm: usize,
    pub seed: u64,
    pub indexed: u64,
    pub partitions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub fn encode_signature(sig: &MinHashSignature) -> String {
    STANDARD.encode(sig.to_bytes())
}

pub fn decode_signature(text: &str) -> Result<MinHashSignature> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| CliError::Protocol(format!("signature is not valid base64: {e}")))?;
    Ok(MinHashSignature::from_bytes(&bytes)?)
}
