//! Size-partitioned containment index.
//!
//! Indexed domains are split into size intervals. Every interval owns an LSH
//! Forest, and a query probes each forest with banding parameters tuned for
//! the interval's upper size bound. The per-partition candidate sets are
//! unioned.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::padded_signature;
use crate::codec::{put_u32, put_u64, Reader};
use crate::containment::conservative_jaccard_threshold;
use crate::error::{Error, Result};
use crate::forest::{BandLattice, ForestIndex};
use crate::minhash::{Domain, HashFamily, MinHashSignature, DEFAULT_NUM_PERM};
use crate::partition::{equi_depth_partition, Partitioning};
use crate::tuner::{Tuned, TuningParams, TuningTable};

const SNAPSHOT_VERSION: u32 = 1;
const SIZES_MAGIC: &[u8; 4] = b"LSHZ";
const MANIFEST_FILE: &str = "manifest.json";
const TUNING_FILE: &str = "tuning.lsht";
const SIZES_FILE: &str = "sizes.bin";

/// Build-time settings shared by every index kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub num_perm: usize,
    pub num_partitions: usize,
    /// Depth of each forest tree; the number of trees is `num_perm / r_max`.
    pub r_max: usize,
    pub seed: u64,
    /// Domains with fewer distinct values are skipped at build time.
    pub min_size: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            num_perm: DEFAULT_NUM_PERM,
            num_partitions: 32,
            r_max: 4,
            seed: 1,
            min_size: 10,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_partitions == 0 {
            return Err(Error::invalid("num_partitions must be at least 1"));
        }
        if self.min_size == 0 {
            return Err(Error::invalid("min_size must be at least 1"));
        }
        HashFamily::new(self.num_perm, self.seed)?;
        BandLattice::for_signature(self.num_perm, self.r_max)?;
        Ok(())
    }

    pub fn lattice(&self) -> Result<BandLattice> {
        BandLattice::for_signature(self.num_perm, self.r_max)
    }

    /// Identifies everything a query signature must agree with.
    pub fn fingerprint(&self) -> String {
        format!(
            "lshe-v1/m{}/b{}/r{}/seed{:016x}",
            self.num_perm,
            self.num_perm / self.r_max.max(1),
            self.r_max,
            self.seed
        )
    }
}

/// What the index was built as; controls signature construction and the
/// size bound used for tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndexKind {
    /// Equi-depth size partitions.
    Ensemble,
    /// One partition over all domains.
    Baseline,
    /// Every domain padded to `pad_to` values before hashing; tuned with
    /// `u = pad_to` in every partition.
    Asym { pad_to: u64, partitioned: bool },
}

/// Parameters and outcome of one partition probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDiagnostics {
    pub lower: u64,
    pub upper: u64,
    /// Size bound the Jaccard threshold and tuning were computed with.
    pub tuned_for: u64,
    pub jaccard_threshold: f64,
    pub b: usize,
    pub r: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    /// Sorted, without duplicates.
    pub candidates: Vec<String>,
    pub query_size: f64,
    pub query_size_estimated: bool,
    pub partitions: Vec<PartitionDiagnostics>,
    #[serde(with = "micros")]
    pub elapsed: Duration,
}

mod micros {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    fingerprint: String,
    config: EnsembleConfig,
    kind: IndexKind,
    partitioning: Partitioning,
    indexed: u64,
    skipped_small: u64,
    partition_files: Vec<String>,
    tuning_file: String,
    sizes_file: String,
}

/// Signatures of every domain that passes the size filter, computed once so
/// several indexes can be built over the same corpus.
#[derive(Debug, Clone)]
pub struct SignedCorpus {
    num_perm: usize,
    seed: u64,
    pad_to: Option<u64>,
    ids: Vec<String>,
    sizes: Vec<u64>,
    signatures: Vec<MinHashSignature>,
    skipped_small: u64,
}

impl SignedCorpus {
    pub fn new(domains: &[Domain], config: EnsembleConfig) -> Result<Self> {
        SignedCorpus::sign(domains, config, None)
    }

    /// Signatures of the domains padded to `pad_to` values, by default the
    /// largest size that passes the filter.
    pub fn padded(domains: &[Domain], config: EnsembleConfig, pad_to: Option<u64>) -> Result<Self> {
        let largest = domains
            .iter()
            .map(|d| d.len() as u64)
            .filter(|&s| s >= config.min_size)
            .max()
            .unwrap_or(0);
        let target = pad_to.unwrap_or(largest);
        if target < largest {
            return Err(Error::invalid(format!(
                "padding target {target} is below the largest domain size {largest}"
            )));
        }
        SignedCorpus::sign(domains, config, Some(target))
    }

    fn sign(domains: &[Domain], config: EnsembleConfig, pad_to: Option<u64>) -> Result<Self> {
        config.validate()?;
        let family = HashFamily::new(config.num_perm, config.seed)?;
        let kept: Vec<&Domain> = domains
            .iter()
            .filter(|d| d.len() as u64 >= config.min_size)
            .collect();
        if kept.is_empty() {
            return Err(Error::invalid(format!(
                "no domains with at least {} values to index",
                config.min_size
            )));
        }
        let mut seen = HashSet::with_capacity(kept.len());
        for d in &kept {
            if !seen.insert(d.id()) {
                return Err(Error::DuplicateId(d.id().to_string()));
            }
        }
        let signatures = kept
            .par_iter()
            .map(|d| match pad_to {
                Some(p) => padded_signature(&family, d, p),
                None => family.domain_signature(d),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SignedCorpus {
            num_perm: config.num_perm,
            seed: config.seed,
            pad_to,
            ids: kept.iter().map(|d| d.id().to_string()).collect(),
            sizes: kept.iter().map(|d| d.len() as u64).collect(),
            signatures,
            skipped_small: (domains.len() - kept.len()) as u64,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Original (unpadded) sizes, aligned with [`SignedCorpus::ids`].
    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn pad_to(&self) -> Option<u64> {
        self.pad_to
    }

    pub fn max_size(&self) -> u64 {
        self.sizes.iter().copied().max().unwrap_or(1)
    }
}

/// Partitioned LSH index over a fixed corpus.
#[derive(Debug, Clone)]
pub struct Ensemble {
    config: EnsembleConfig,
    kind: IndexKind,
    family: HashFamily,
    partitioning: Partitioning,
    forests: Vec<ForestIndex>,
    /// Domain sizes aligned with each forest's local ids.
    sizes: Vec<Vec<u64>>,
    table: Arc<TuningTable>,
    skipped_small: u64,
}

impl Ensemble {
    /// Equi-depth partitioned index with a tuning table sized for the corpus.
    pub fn bootstrap(domains: &[Domain], config: EnsembleConfig) -> Result<Self> {
        Ensemble::build(domains, config, IndexKind::Ensemble, None)
    }

    /// Builds any index kind, reusing `table` when given. The table must use
    /// the configuration's lattice.
    pub fn build(
        domains: &[Domain],
        config: EnsembleConfig,
        kind: IndexKind,
        table: Option<Arc<TuningTable>>,
    ) -> Result<Self> {
        let corpus = match kind {
            IndexKind::Asym { pad_to, .. } => SignedCorpus::padded(domains, config, Some(pad_to))?,
            _ => SignedCorpus::new(domains, config)?,
        };
        Ensemble::from_corpus(&corpus, config, kind, None, table)
    }

    /// Builds an index over precomputed signatures. Without an explicit
    /// `partitioning`, ensembles use equi-depth partitions and the baseline a
    /// single one.
    pub fn from_corpus(
        corpus: &SignedCorpus,
        config: EnsembleConfig,
        kind: IndexKind,
        partitioning: Option<Partitioning>,
        table: Option<Arc<TuningTable>>,
    ) -> Result<Self> {
        config.validate()?;
        if (config.num_perm, config.seed) != (corpus.num_perm, corpus.seed) {
            return Err(Error::Incompatible(
                "signed corpus was built with a different hash family".into(),
            ));
        }
        match (kind, corpus.pad_to) {
            (IndexKind::Asym { pad_to, .. }, Some(p)) if p == pad_to => {}
            (IndexKind::Asym { .. }, _) => {
                return Err(Error::invalid("asymmetric index needs a corpus padded to its target"))
            }
            (_, Some(_)) => return Err(Error::invalid("padded corpus used for an unpadded index")),
            (_, None) => {}
        }
        let lattice = config.lattice()?;
        let family = HashFamily::new(config.num_perm, config.seed)?;
        let sizes = &corpus.sizes;

        let partitioning = match partitioning {
            Some(p) => {
                let mut counts = vec![0u64; p.len()];
                for &size in sizes {
                    let i = p.locate(size).ok_or_else(|| {
                        Error::invalid(format!("partitioning does not cover size {size}"))
                    })?;
                    counts[i] += 1;
                }
                if counts != p.counts() {
                    return Err(Error::invalid("partition counts do not match the corpus"));
                }
                p
            }
            None => {
                let n = match kind {
                    IndexKind::Ensemble | IndexKind::Asym { partitioned: true, .. } => {
                        config.num_partitions
                    }
                    IndexKind::Baseline | IndexKind::Asym { partitioned: false, .. } => 1,
                };
                equi_depth_partition(sizes, n)?
            }
        };

        let mut forests: Vec<ForestIndex> =
            (0..partitioning.len()).map(|_| ForestIndex::new(lattice)).collect();
        let mut part_sizes = vec![Vec::new(); partitioning.len()];
        for ((id, sig), &size) in corpus.ids.iter().zip(&corpus.signatures).zip(sizes) {
            let i = partitioning
                .locate(size)
                .expect("partitioning covers every indexed size");
            forests[i].insert_unchecked(id.clone(), sig.mins())?;
            part_sizes[i].push(size);
        }
        forests.par_iter_mut().try_for_each(|f| f.freeze())?;

        let table = match table {
            Some(t) => {
                if t.lattice() != lattice {
                    return Err(Error::invalid(
                        "tuning table lattice does not match the configuration",
                    ));
                }
                t
            }
            None => {
                let top = match kind {
                    IndexKind::Asym { pad_to, .. } => pad_to,
                    _ => corpus.max_size(),
                };
                Arc::new(TuningTable::for_max_size(top, lattice)?)
            }
        };

        Ok(Ensemble {
            config,
            kind,
            family,
            partitioning,
            forests,
            sizes: part_sizes,
            table,
            skipped_small: corpus.skipped_small,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn partitioning(&self) -> &Partitioning {
        &self.partitioning
    }

    pub fn tuning_table(&self) -> &Arc<TuningTable> {
        &self.table
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    /// Number of indexed domains.
    pub fn len(&self) -> usize {
        self.forests.iter().map(|f| f.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Domains dropped for being below `min_size`.
    pub fn skipped_small(&self) -> u64 {
        self.skipped_small
    }

    /// Every indexed `(id, size)` pair, in partition order.
    pub fn domain_sizes(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.forests
            .iter()
            .zip(&self.sizes)
            .flat_map(|(f, s)| f.ids().iter().map(String::as_str).zip(s.iter().copied()))
    }

    /// Query signature for a domain, built with this index's hash family.
    pub fn signature(&self, domain: &Domain) -> Result<MinHashSignature> {
        self.family.domain_signature(domain)
    }

    /// Size bound used to tune partition `i`: the largest size its interval
    /// admits, or the padding target.
    fn tuning_bound(&self, i: usize) -> u64 {
        match self.kind {
            IndexKind::Asym { pad_to, .. } => pad_to,
            _ => self.partitioning.intervals()[i].upper() - 1,
        }
    }

    /// Banding parameters partition `i` would use for a query of size `q` at `t*`.
    pub fn partition_params(&self, i: usize, q: f64, t_star: f64) -> Tuned {
        self.table.lookup(self.tuning_bound(i) as f64, q, t_star)
    }

    fn prepare(&self, sig: &MinHashSignature, t_star: f64, q_size: Option<u64>) -> Result<(f64, bool)> {
        if !(t_star > 0.0 && t_star <= 1.0) {
            return Err(Error::invalid(format!(
                "containment threshold must lie in (0, 1], got {t_star}"
            )));
        }
        if sig.seed() != self.family.seed() || sig.num_perm() != self.family.num_perm() {
            return Err(Error::Incompatible(format!(
                "query signature (seed {}, {} permutations) does not match index {}",
                sig.seed(),
                sig.num_perm(),
                self.fingerprint()
            )));
        }
        match q_size {
            Some(0) => Err(Error::invalid("query size must be at least 1")),
            Some(q) => Ok((q as f64, false)),
            None => Ok((sig.cardinality(), true)),
        }
    }

    /// Probes a single partition.
    pub fn query_partition(
        &self,
        i: usize,
        sig: &MinHashSignature,
        t_star: f64,
        q: f64,
    ) -> Result<(PartitionDiagnostics, Vec<&str>)> {
        let interval = self.partitioning.intervals()[i];
        let bound = self.tuning_bound(i);
        let jaccard_threshold = conservative_jaccard_threshold(t_star, bound as f64, q)?;
        let TuningParams { b, r } = self.partition_params(i, q, t_star).params;
        let forest = &self.forests[i];
        let ids: Vec<&str> = forest
            .query(sig.mins(), b, r)?
            .into_iter()
            .map(|local| forest.id(local))
            .collect();
        let diag = PartitionDiagnostics {
            lower: interval.lower(),
            upper: interval.upper(),
            tuned_for: bound,
            jaccard_threshold,
            b,
            r,
            candidates: ids.len(),
        };
        Ok((diag, ids))
    }

    fn merge(
        &self,
        parts: Vec<(PartitionDiagnostics, Vec<&str>)>,
        q: f64,
        estimated: bool,
        start: Instant,
    ) -> QueryResult {
        let mut candidates: Vec<String> = parts
            .iter()
            .flat_map(|(_, ids)| ids.iter().map(|s| s.to_string()))
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        QueryResult {
            candidates,
            query_size: q,
            query_size_estimated: estimated,
            partitions: parts.into_iter().map(|(d, _)| d).collect(),
            elapsed: start.elapsed(),
        }
    }

    /// Containment search. The query size is `q_size` when given, otherwise
    /// estimated from the signature.
    pub fn query(&self, sig: &MinHashSignature, t_star: f64, q_size: Option<u64>) -> Result<QueryResult> {
        let start = Instant::now();
        let (q, estimated) = self.prepare(sig, t_star, q_size)?;
        let parts = (0..self.forests.len())
            .map(|i| self.query_partition(i, sig, t_star, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.merge(parts, q, estimated, start))
    }

    /// Same as [`Ensemble::query`], probing partitions on the rayon pool.
    pub fn query_parallel(
        &self,
        sig: &MinHashSignature,
        t_star: f64,
        q_size: Option<u64>,
    ) -> Result<QueryResult> {
        let start = Instant::now();
        let (q, estimated) = self.prepare(sig, t_star, q_size)?;
        let parts = (0..self.forests.len())
            .into_par_iter()
            .map(|i| self.query_partition(i, sig, t_star, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.merge(parts, q, estimated, start))
    }

    /// Writes the snapshot directory, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        let mut partition_files = Vec::with_capacity(self.forests.len());
        for (i, forest) in self.forests.iter().enumerate() {
            let name = format!("partition-{i:03}.lshf");
            write(&name, &forest.to_bytes()?)?;
            partition_files.push(name);
        }
        write(TUNING_FILE, &self.table.to_bytes())?;

        let mut sizes = Vec::new();
        sizes.extend_from_slice(SIZES_MAGIC);
        sizes.push(1);
        put_u32(&mut sizes, self.sizes.len() as u32);
        for part in &self.sizes {
            put_u32(&mut sizes, part.len() as u32);
            for &s in part {
                put_u64(&mut sizes, s);
            }
        }
        write(SIZES_FILE, &sizes)?;

        let manifest = Manifest {
            format_version: SNAPSHOT_VERSION,
            fingerprint: self.fingerprint(),
            config: self.config,
            kind: self.kind,
            partitioning: self.partitioning.clone(),
            indexed: self.len() as u64,
            skipped_small: self.skipped_small,
            partition_files,
            tuning_file: TUNING_FILE.to_string(),
            sizes_file: SIZES_FILE.to_string(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write(MANIFEST_FILE, &json)
    }

    /// Reads a snapshot written by [`Ensemble::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|e| Error::io(path, e))
        };
        let manifest: Manifest = serde_json::from_slice(&read(MANIFEST_FILE)?)
            .map_err(|e| Error::parse(format!("snapshot manifest: {e}")))?;
        if manifest.format_version != SNAPSHOT_VERSION {
            return Err(Error::parse(format!(
                "snapshot format version {} is not supported",
                manifest.format_version
            )));
        }
        let config = manifest.config;
        config.validate()?;
        if manifest.fingerprint != config.fingerprint() {
            return Err(Error::parse("snapshot fingerprint does not match its configuration"));
        }
        let lattice = config.lattice()?;
        let family = HashFamily::new(config.num_perm, config.seed)?;
        let partitioning = manifest.partitioning;
        if manifest.partition_files.len() != partitioning.len() {
            return Err(Error::parse("snapshot lists the wrong number of partition files"));
        }

        let mut forests = Vec::with_capacity(partitioning.len());
        for (name, &count) in manifest.partition_files.iter().zip(partitioning.counts()) {
            let forest = ForestIndex::from_bytes(&read(name)?)?;
            if forest.lattice() != lattice || forest.len() as u64 != count {
                return Err(Error::parse(format!("{name} does not match the manifest")));
            }
            forests.push(forest);
        }

        let table = TuningTable::from_bytes(&read(&manifest.tuning_file)?)?;
        if table.lattice() != lattice {
            return Err(Error::parse("tuning table lattice does not match the manifest"));
        }

        let raw = read(&manifest.sizes_file)?;
        let mut rd = Reader::new(&raw);
        rd.expect_magic(SIZES_MAGIC, "size table")?;
        if rd.u8()? != 1 {
            return Err(Error::parse("size table: unsupported version"));
        }
        let parts = rd.u32()? as usize;
        if parts != forests.len() {
            return Err(Error::parse("size table does not match the manifest"));
        }
        let mut sizes = Vec::with_capacity(parts);
        for (forest, interval) in forests.iter().zip(partitioning.intervals()) {
            let len = rd.u32()? as usize;
            if len != forest.len() {
                return Err(Error::parse("size table does not match the manifest"));
            }
            let part = (0..len).map(|_| rd.u64()).collect::<Result<Vec<_>>>()?;
            if part.iter().any(|&s| !interval.contains(s)) {
                return Err(Error::parse("size table entry outside its partition"));
            }
            sizes.push(part);
        }
        rd.finish()?;

        Ok(Ensemble {
            config,
            kind: manifest.kind,
            family,
            partitioning,
            forests,
            sizes,
            table: Arc::new(table),
            skipped_small: manifest.skipped_small,
        })
    }
}
