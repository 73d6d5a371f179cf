//! Exact ground truth, accuracy metrics and experiment sweeps.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, EnsembleConfig, IndexKind, SignedCorpus};
use crate::error::{Error, Result};
use crate::minhash::Domain;
use crate::partition::{deviated_partition, stats};
use crate::tuner::{default_thresholds, TuningTable};

/// Anything that answers containment queries over a fixed corpus.
pub trait ContainmentSearch: Sync {
    fn name(&self) -> String;

    /// Ids of the candidate domains for `query` at threshold `t_star`.
    fn search(&self, query: &Domain, t_star: f64) -> Result<Vec<String>>;

    /// One result per threshold; implementations may share per-query work.
    fn search_thresholds(&self, query: &Domain, thresholds: &[f64]) -> Result<Vec<Vec<String>>> {
        thresholds.iter().map(|&t| self.search(query, t)).collect()
    }
}

impl ContainmentSearch for Ensemble {
    fn name(&self) -> String {
        match self.kind() {
            IndexKind::Ensemble => format!("ensemble-n{}", self.partitioning().len()),
            IndexKind::Baseline => "minhash-lsh".to_string(),
            IndexKind::Asym { partitioned: false, .. } => "asym".to_string(),
            IndexKind::Asym { partitioned: true, .. } => {
                format!("asym-n{}", self.partitioning().len())
            }
        }
    }

    /// Queries with the exact query size, which the evaluation always knows.
    fn search(&self, query: &Domain, t_star: f64) -> Result<Vec<String>> {
        let sig = self.signature(query)?;
        Ok(self.query(&sig, t_star, Some(query.len() as u64))?.candidates)
    }

    fn search_thresholds(&self, query: &Domain, thresholds: &[f64]) -> Result<Vec<Vec<String>>> {
        let sig = self.signature(query)?;
        thresholds
            .iter()
            .map(|&t| Ok(self.query(&sig, t, Some(query.len() as u64))?.candidates))
            .collect()
    }
}

/// Inverted index answering containment queries exactly.
pub struct ExactIndex<'a> {
    ids: Vec<&'a str>,
    postings: HashMap<&'a [u8], Vec<u32>>,
}

impl<'a> ExactIndex<'a> {
    pub fn new(domains: &'a [Domain]) -> Self {
        let mut postings: HashMap<&[u8], Vec<u32>> = HashMap::new();
        for (i, d) in domains.iter().enumerate() {
            for v in d.values() {
                postings.entry(v.as_slice()).or_default().push(i as u32);
            }
        }
        ExactIndex {
            ids: domains.iter().map(|d| d.id()).collect(),
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `(id, |Q ∩ X| / |Q|)` for every domain sharing a value with the query,
    /// sorted by id.
    pub fn containments(&self, query: &Domain) -> Vec<(&'a str, f64)> {
        let mut overlap: HashMap<u32, u64> = HashMap::new();
        for v in query.values() {
            if let Some(list) = self.postings.get(v.as_slice()) {
                for &i in list {
                    *overlap.entry(i).or_default() += 1;
                }
            }
        }
        let q = query.len() as f64;
        let mut out: Vec<(&str, f64)> = overlap
            .into_iter()
            .map(|(i, c)| (self.ids[i as usize], c as f64 / q))
            .collect();
        out.sort_unstable_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// Ids with containment at least `t_star`, sorted. A threshold of zero or
    /// below returns every domain, overlapping or not.
    pub fn exact_search(&self, query: &Domain, t_star: f64) -> Vec<String> {
        if t_star <= 0.0 {
            let mut all: Vec<String> = self.ids.iter().map(|s| s.to_string()).collect();
            all.sort_unstable();
            return all;
        }
        self.containments(query)
            .into_iter()
            .filter(|&(_, t)| t >= t_star)
            .map(|(id, _)| id.to_string())
            .collect()
    }
}

impl ContainmentSearch for ExactIndex<'_> {
    fn name(&self) -> String {
        "exact".to_string()
    }

    fn search(&self, query: &Domain, t_star: f64) -> Result<Vec<String>> {
        Ok(self.exact_search(query, t_star))
    }
}

/// Exact containment of one query against every overlapping domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub query: String,
    pub size: u64,
    /// Sorted by id.
    pub containment: Vec<(String, f64)>,
}

impl QueryTruth {
    /// Relevant ids at a threshold in `(0, 1]`.
    pub fn relevant(&self, t_star: f64) -> Vec<&str> {
        self.containment
            .iter()
            .filter(|(_, t)| *t >= t_star)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub queries: Vec<QueryTruth>,
}

impl GroundTruth {
    pub fn compute(index: &ExactIndex<'_>, queries: &[Domain]) -> Self {
        let queries = queries
            .par_iter()
            .map(|q| QueryTruth {
                query: q.id().to_string(),
                size: q.len() as u64,
                containment: index
                    .containments(q)
                    .into_iter()
                    .map(|(id, t)| (id.to_string(), t))
                    .collect(),
            })
            .collect();
        GroundTruth { queries }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
    }

    /// Loads `path` when it holds truth for exactly these queries, otherwise
    /// computes it and writes it there.
    pub fn cached(path: impl AsRef<Path>, index: &ExactIndex<'_>, queries: &[Domain]) -> Result<Self> {
        let path = path.as_ref();
        if let Ok(truth) = GroundTruth::load(path) {
            let same = truth.queries.len() == queries.len()
                && truth.queries.iter().zip(queries).all(|(t, q)| t.query == q.id());
            if same {
                return Ok(truth);
            }
        }
        let truth = GroundTruth::compute(index, queries);
        truth.save(path)?;
        Ok(truth)
    }
}

/// `F_beta` from a precision and a recall; zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    /// The result was empty, so precision was set to 1.
    pub empty_result: bool,
}

/// Set-based precision, recall and `F_beta`. An empty result has precision 1
/// and is flagged; an empty truth set has recall 1.
pub fn score<A: AsRef<str>, T: AsRef<str>>(result: &[A], truth: &[T], beta: f64) -> Score {
    let result: HashSet<&str> = result.iter().map(AsRef::as_ref).collect();
    let truth: HashSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    let hits = result.intersection(&truth).count() as f64;
    let precision = if result.is_empty() { 1.0 } else { hits / result.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    Score {
        precision,
        recall,
        f_beta: f_beta(precision, recall, beta),
        empty_result: result.is_empty(),
    }
}

/// Counts behind one (query, threshold) score; every report number can be
/// recomputed from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: String,
    pub threshold: f64,
    pub returned: u64,
    pub relevant: u64,
    pub hits: u64,
}

impl QueryOutcome {
    pub fn precision(&self) -> f64 {
        if self.returned == 0 {
            1.0
        } else {
            self.hits as f64 / self.returned as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.relevant == 0 {
            1.0
        } else {
            self.hits as f64 / self.relevant as f64
        }
    }
}

/// Averages at one threshold. `precision` excludes empty results (and is 1
/// when every result was empty); `precision_with_empty` counts them as 1.
/// The F scores combine the averaged precision and recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub queries: u64,
    pub empty_results: u64,
    pub precision: f64,
    pub precision_with_empty: f64,
    pub recall: f64,
    pub f1: f64,
    pub f05: f64,
    pub mean_candidates: f64,
}

impl ThresholdMetrics {
    pub fn from_outcomes(threshold: f64, outcomes: &[&QueryOutcome]) -> Self {
        let n = outcomes.len().max(1) as f64;
        let nonempty: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.returned > 0)
            .map(|o| o.precision())
            .collect();
        let precision_with_empty = outcomes.iter().map(|o| o.precision()).sum::<f64>() / n;
        let precision = if nonempty.is_empty() {
            1.0
        } else {
            nonempty.iter().sum::<f64>() / nonempty.len() as f64
        };
        let recall = outcomes.iter().map(|o| o.recall()).sum::<f64>() / n;
        ThresholdMetrics {
            threshold,
            queries: outcomes.len() as u64,
            empty_results: (outcomes.len() - nonempty.len()) as u64,
            precision,
            precision_with_empty,
            recall,
            f1: f_beta(precision, recall, 1.0),
            f05: f_beta(precision, recall, 0.5),
            mean_candidates: outcomes.iter().map(|o| o.returned as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub index: String,
    pub thresholds: Vec<ThresholdMetrics>,
    pub outcomes: Vec<QueryOutcome>,
}

impl AccuracyReport {
    /// Metrics at the threshold closest to `t_star`.
    pub fn at(&self, t_star: f64) -> Option<&ThresholdMetrics> {
        self.thresholds
            .iter()
            .min_by(|a, b| (a.threshold - t_star).abs().total_cmp(&(b.threshold - t_star).abs()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_metrics_csv(path, std::slice::from_ref(self))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    index: &'a str,
    threshold: f64,
    queries: u64,
    empty_results: u64,
    precision: f64,
    precision_with_empty: f64,
    recall: f64,
    f1: f64,
    f05: f64,
    mean_candidates: f64,
}

/// One row per (index, threshold).
pub fn write_metrics_csv(path: impl AsRef<Path>, reports: &[AccuracyReport]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::parse(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in reports {
        for m in &r.thresholds {
            w.serialize(CsvRow {
                index: &r.index,
                threshold: m.threshold,
                queries: m.queries,
                empty_results: m.empty_results,
                precision: m.precision,
                precision_with_empty: m.precision_with_empty,
                recall: m.recall,
                f1: m.f1,
                f05: m.f05,
                mean_candidates: m.mean_candidates,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Scores `index` on every query and threshold against exact ground truth.
/// Queries run in parallel.
pub fn run_threshold_sweep(
    index: &dyn ContainmentSearch,
    queries: &[Domain],
    truth: &GroundTruth,
    thresholds: &[f64],
) -> Result<AccuracyReport> {
    if truth.queries.len() != queries.len()
        || truth.queries.iter().zip(queries).any(|(t, q)| t.query != q.id())
    {
        return Err(Error::invalid("ground truth does not match the query list"));
    }
    let per_query: Vec<Vec<QueryOutcome>> = queries
        .par_iter()
        .zip(&truth.queries)
        .map(|(q, qt)| {
            let results = index.search_thresholds(q, thresholds)?;
            Ok(thresholds
                .iter()
                .zip(results)
                .map(|(&t, result)| {
                    let relevant: HashSet<&str> = qt.relevant(t).into_iter().collect();
                    let hits = result.iter().filter(|id| relevant.contains(id.as_str())).count();
                    QueryOutcome {
                        query: q.id().to_string(),
                        threshold: t,
                        returned: result.len() as u64,
                        relevant: relevant.len() as u64,
                        hits: hits as u64,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<QueryOutcome> = per_query.into_iter().flatten().collect();
    let metrics = thresholds
        .iter()
        .map(|&t| {
            let at: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.threshold == t).collect();
            ThresholdMetrics::from_outcomes(t, &at)
        })
        .collect();
    Ok(AccuracyReport {
        index: index.name(),
        thresholds: metrics,
        outcomes,
    })
}

/// `k` distinct positions in `0..n`, uniformly at random, ascending.
pub fn sample_query_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, k.min(n)).into_vec();
    picked.sort_unstable();
    picked
}

/// Uniform sample without replacement of `k` domains of at least `min_size` values.
pub fn sample_queries(domains: &[Domain], k: usize, min_size: u64, seed: u64) -> Vec<Domain> {
    let eligible: Vec<&Domain> = domains.iter().filter(|d| d.len() as u64 >= min_size).collect();
    sample_query_indices(eligible.len(), k, seed)
        .into_iter()
        .map(|i| eligible[i].clone())
        .collect()
}

/// Default query sample size.
pub const DEFAULT_QUERIES: usize = 200;

/// Size-skew sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSweepConfig {
    pub subsets: usize,
    pub num_queries: usize,
    pub thresholds: Vec<f64>,
    /// Subsets with fewer domains are reported as infeasible.
    pub min_domains: usize,
    pub seed: u64,
}

impl Default for SkewSweepConfig {
    fn default() -> Self {
        SkewSweepConfig {
            subsets: 20,
            num_queries: 50,
            thresholds: vec![0.5],
            min_domains: 100,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSubset {
    pub lower: u64,
    pub upper: u64,
    pub domains: u64,
    pub skewness: Option<f64>,
    pub reports: Vec<AccuracyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewSweepReport {
    pub subsets: Vec<SkewSubset>,
    /// `(lower, upper, reason)` of subsets that were not evaluated.
    pub infeasible: Vec<(u64, u64, String)>,
}

/// Nested subsets `[min, upper_k]` with `upper_k` growing geometrically from
/// the smallest to the largest size. Each subset gets its own baseline and
/// ensemble, ground truth and query sample.
pub fn run_skew_sweep(
    domains: &[Domain],
    config: EnsembleConfig,
    sweep: &SkewSweepConfig,
) -> Result<SkewSweepReport> {
    let kept: Vec<&Domain> = domains.iter().filter(|d| d.len() as u64 >= config.min_size).collect();
    let sizes: Vec<u64> = kept.iter().map(|d| d.len() as u64).collect();
    let (lo, hi) = match (sizes.iter().min(), sizes.iter().max()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(Error::invalid("skew sweep on an empty corpus")),
    };
    if sweep.subsets == 0 {
        return Err(Error::invalid("skew sweep needs at least one subset"));
    }
    let lattice = config.lattice()?;
    let table = Arc::new(TuningTable::for_max_size(hi, lattice)?);
    let mut report = SkewSweepReport {
        subsets: Vec::new(),
        infeasible: Vec::new(),
    };
    let mut last_upper = 0;
    for k in 1..=sweep.subsets {
        let ratio = hi as f64 / lo as f64;
        let upper = ((lo as f64 * ratio.powf(k as f64 / sweep.subsets as f64)).round() as u64).clamp(lo, hi);
        if upper == last_upper {
            report.infeasible.push((lo, upper, "same interval as the previous subset".into()));
            continue;
        }
        last_upper = upper;
        let subset: Vec<Domain> = kept
            .iter()
            .filter(|d| d.len() as u64 <= upper)
            .map(|d| (*d).clone())
            .collect();
        if subset.len() < sweep.min_domains {
            report
                .infeasible
                .push((lo, upper, format!("only {} domains", subset.len())));
            continue;
        }
        let subset_sizes: Vec<u64> = subset.iter().map(|d| d.len() as u64).collect();
        let skewness = stats(&subset_sizes)?.skewness;
        let queries = sample_queries(&subset, sweep.num_queries, config.min_size, sweep.seed);
        let exact = ExactIndex::new(&subset);
        let truth = GroundTruth::compute(&exact, &queries);
        let signed = SignedCorpus::new(&subset, config)?;
        let baseline = Ensemble::from_corpus(&signed, config, IndexKind::Baseline, None, Some(table.clone()))?;
        let ensemble = Ensemble::from_corpus(&signed, config, IndexKind::Ensemble, None, Some(table.clone()))?;
        let reports = vec![
            run_threshold_sweep(&baseline, &queries, &truth, &sweep.thresholds)?,
            run_threshold_sweep(&ensemble, &queries, &truth, &sweep.thresholds)?,
        ];
        report.subsets.push(SkewSubset {
            lower: lo,
            upper,
            domains: subset.len() as u64,
            skewness,
            reports,
        });
    }
    Ok(report)
}

/// Interpolation weights toward equi-width boundaries.
pub fn default_lambdas() -> Vec<f64> {
    vec![0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub lambda: f64,
    pub boundaries: Vec<u64>,
    pub counts: Vec<u64>,
    pub count_std_dev: f64,
    pub report: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub num_partitions: usize,
    /// Partition size under equi-depth, `N / n`.
    pub equi_depth_size: f64,
    pub points: Vec<DeviationPoint>,
}

/// Accuracy as partition boundaries move from equi-depth (`lambda = 0`)
/// toward equi-width (`lambda = 1`).
pub fn run_partition_deviation_sweep(
    corpus: &SignedCorpus,
    config: EnsembleConfig,
    queries: &[Domain],
    truth: &GroundTruth,
    lambdas: &[f64],
    thresholds: &[f64],
    table: Option<Arc<TuningTable>>,
) -> Result<DeviationReport> {
    if config.num_partitions < 2 {
        return Err(Error::invalid("the deviation sweep needs at least two partitions"));
    }
    let table = match table {
        Some(t) => t,
        None => Arc::new(TuningTable::for_max_size(corpus.max_size(), config.lattice()?)?),
    };
    let points = lambdas
        .iter()
        .map(|&lambda| {
            let partitioning = deviated_partition(corpus.sizes(), config.num_partitions, lambda)?;
            let ensemble = Ensemble::from_corpus(
                corpus,
                config,
                IndexKind::Ensemble,
                Some(partitioning.clone()),
                Some(table.clone()),
            )?;
            Ok(DeviationPoint {
                lambda,
                boundaries: partitioning.boundaries(),
                counts: partitioning.counts().to_vec(),
                count_std_dev: partitioning.count_std_dev(),
                report: run_threshold_sweep(&ensemble, queries, truth, thresholds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeviationReport {
        num_partitions: config.num_partitions,
        equi_depth_size: corpus.len() as f64 / config.num_partitions as f64,
        points,
    })
}

/// Settings of [`evaluate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub num_queries: usize,
    pub thresholds: Vec<f64>,
    pub seed: u64,
    pub include_baseline: bool,
    pub include_asym: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            num_queries: DEFAULT_QUERIES,
            thresholds: default_thresholds(),
            seed: 7,
            include_baseline: true,
            include_asym: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub queries: u64,
    pub reports: Vec<AccuracyReport>,
}

/// Threshold sweep of the ensemble (and optionally the baselines) over a
/// uniform query sample of the corpus.
pub fn evaluate(domains: &[Domain], config: EnsembleConfig, opts: &EvalOptions) -> Result<EvalSummary> {
    let kept: Vec<Domain> = domains
        .iter()
        .filter(|d| d.len() as u64 >= config.min_size)
        .cloned()
        .collect();
    let queries = sample_queries(&kept, opts.num_queries, config.min_size, opts.seed);
    let exact = ExactIndex::new(&kept);
    let truth = GroundTruth::compute(&exact, &queries);
    let signed = SignedCorpus::new(&kept, config)?;
    let table = Arc::new(TuningTable::for_max_size(signed.max_size(), config.lattice()?)?);
    let mut reports = Vec::new();
    let ensemble = Ensemble::from_corpus(&signed, config, IndexKind::Ensemble, None, Some(table.clone()))?;
    reports.push(run_threshold_sweep(&ensemble, &queries, &truth, &opts.thresholds)?);
    if opts.include_baseline {
        let baseline = Ensemble::from_corpus(&signed, config, IndexKind::Baseline, None, Some(table))?;
        reports.push(run_threshold_sweep(&baseline, &queries, &truth, &opts.thresholds)?);
    }
    if opts.include_asym {
        let (asym, _) = crate::baselines::build_asym(&kept, config, false, None)?;
        reports.push(run_threshold_sweep(&asym, &queries, &truth, &opts.thresholds)?);
    }
    Ok(EvalSummary {
        queries: queries.len() as u64,
        reports,
    })
}
