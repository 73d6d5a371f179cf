//! Comparison indexes: a single-partition MinHash LSH index and asymmetric
//! minwise hashing, which pads every domain to a common size before hashing.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, EnsembleConfig, IndexKind};
use crate::error::{Error, Result};
use crate::minhash::{Domain, HashFamily, MinHashSignature};
use crate::tuner::{TuningParams, TuningTable};

/// Namespace of generated padding values. Real values may not start with it.
pub const PAD_PREFIX: &[u8] = b"\xff\x00pad/";

/// Padding target and the per-domain number of padding values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedCorpusInfo {
    pub pad_to: u64,
    pub pad_counts: Vec<(String, u64)>,
}

impl PaddedCorpusInfo {
    /// Pads to the largest domain size.
    pub fn for_corpus(domains: &[Domain]) -> Result<Self> {
        let pad_to = domains
            .iter()
            .map(|d| d.len() as u64)
            .max()
            .ok_or_else(|| Error::invalid("cannot pad an empty corpus"))?;
        let pad_counts = domains
            .iter()
            .map(|d| (d.id().to_string(), pad_to - d.len() as u64))
            .collect();
        Ok(PaddedCorpusInfo { pad_to, pad_counts })
    }
}

/// The `index`-th padding value of domain `id`. The id is length-prefixed so
/// values of different domains never coincide.
pub fn pad_value(id: &str, index: u64) -> Vec<u8> {
    let mut v = PAD_PREFIX.to_vec();
    v.extend_from_slice(format!("{}:{id}/{index}", id.len()).as_bytes());
    v
}

/// Signature of `domain` extended with `pad_to - |domain|` fresh values.
/// The padding is streamed into the sketch and never materialized.
pub fn padded_signature(family: &HashFamily, domain: &Domain, pad_to: u64) -> Result<MinHashSignature> {
    let size = domain.len() as u64;
    if size > pad_to {
        return Err(Error::invalid(format!(
            "domain `{}` has {size} values, above the padding target {pad_to}",
            domain.id()
        )));
    }
    let mut builder = family.builder();
    for v in domain.values() {
        if v.starts_with(PAD_PREFIX) {
            return Err(Error::invalid(format!(
                "domain `{}` contains a value in the reserved padding namespace",
                domain.id()
            )));
        }
        builder.push(v);
    }
    for i in 0..pad_to - size {
        builder.push(&pad_value(domain.id(), i));
    }
    builder
        .finish()
        .map_err(|_| Error::EmptyDomain(domain.id().to_string()))
}

/// Single-partition index: the ensemble machinery with `n = 1`.
pub fn build_baseline(
    domains: &[Domain],
    config: EnsembleConfig,
    table: Option<Arc<TuningTable>>,
) -> Result<Ensemble> {
    Ensemble::build(domains, config, IndexKind::Baseline, table)
}

/// Asymmetric minwise hashing index padded to the largest indexed domain.
/// With `partitioned` the padded domains are additionally split by original
/// size into `config.num_partitions` partitions.
pub fn build_asym(
    domains: &[Domain],
    config: EnsembleConfig,
    partitioned: bool,
    table: Option<Arc<TuningTable>>,
) -> Result<(Ensemble, PaddedCorpusInfo)> {
    let kept: Vec<Domain> = domains
        .iter()
        .filter(|d| d.len() as u64 >= config.min_size)
        .cloned()
        .collect();
    let info = PaddedCorpusInfo::for_corpus(&kept)?;
    let kind = IndexKind::Asym {
        pad_to: info.pad_to,
        partitioned,
    };
    let index = Ensemble::build(domains, config, kind, table)?;
    Ok((index, info))
}

/// Probability that a padded domain fully containing a query of size `q` is
/// returned, with every domain padded to `pad_to`.
pub fn asym_candidate_probability(pad_to: f64, q: f64, params: TuningParams) -> f64 {
    1.0 - (1.0 - (q / pad_to).powi(params.r as i32)).powi(params.b as i32)
}

/// Smallest number of single-row bands for which a fully contained query of
/// size `q` is found with probability at least `target` after padding to `pad_to`.
pub fn min_hash_count(pad_to: f64, q: f64, target: f64) -> Result<u64> {
    if !(target > 0.0 && target < 1.0) || !(q > 0.0 && q <= pad_to) {
        return Err(Error::invalid("need 0 < target < 1 and 0 < q <= pad_to"));
    }
    if q == pad_to {
        return Ok(1);
    }
    let m = ((1.0 - target).ln() / (1.0 - q / pad_to).ln()).ceil();
    Ok(m.max(1.0) as u64)
}
