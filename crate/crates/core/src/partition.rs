//! Size partitionings, power-law size sampling, and distribution statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::containment::{fp_upper_bound, partition_cost, FpEstimate, SizeInterval};
use crate::error::{Error, Result};

/// Largest number of distinct sizes the exhaustive optimiser accepts.
pub const BRUTEFORCE_MAX_DISTINCT: usize = 2_000;

/// Contiguous half-open size intervals with per-interval domain counts.
///
/// Serialised as `{"boundaries": [l_1, u_1, ..., u_n], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PartitioningRepr", into = "PartitioningRepr")]
pub struct Partitioning {
    intervals: Vec<SizeInterval>,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct PartitioningRepr {
    boundaries: Vec<u64>,
    counts: Vec<u64>,
}

impl TryFrom<PartitioningRepr> for Partitioning {
    type Error = Error;

    fn try_from(r: PartitioningRepr) -> Result<Self> {
        Partitioning::from_parts(&r.boundaries, r.counts)
    }
}

impl From<Partitioning> for PartitioningRepr {
    fn from(p: Partitioning) -> Self {
        PartitioningRepr {
            boundaries: p.boundaries(),
            counts: p.counts,
        }
    }
}

impl Partitioning {
    /// Builds a partitioning from `n + 1` strictly increasing boundaries and `n` counts.
    pub fn from_parts(boundaries: &[u64], counts: Vec<u64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::invalid("a partitioning needs at least two boundaries"));
        }
        if counts.len() + 1 != boundaries.len() {
            return Err(Error::invalid(format!(
                "{} boundaries but {} counts",
                boundaries.len(),
                counts.len()
            )));
        }
        let intervals = boundaries
            .windows(2)
            .map(|w| SizeInterval::new(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Partitioning { intervals, counts })
    }

    pub fn intervals(&self) -> &[SizeInterval] {
        &self.intervals
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn boundaries(&self) -> Vec<u64> {
        let mut b: Vec<u64> = self.intervals.iter().map(|iv| iv.lower()).collect();
        b.push(self.intervals.last().map_or(0, |iv| iv.upper()));
        b
    }

    /// Index of the interval holding `size`.
    pub fn locate(&self, size: u64) -> Option<usize> {
        let idx = self.intervals.partition_point(|iv| iv.upper() <= size);
        (idx < self.intervals.len() && self.intervals[idx].contains(size)).then_some(idx)
    }

    pub fn fp_estimates(&self) -> Vec<FpEstimate> {
        self.intervals
            .iter()
            .zip(&self.counts)
            .map(|(&iv, &c)| fp_upper_bound(iv, c))
            .collect()
    }

    /// Largest per-partition false-positive bound.
    pub fn cost(&self) -> f64 {
        partition_cost(&self.fp_estimates()).unwrap_or(0.0)
    }

    /// Population standard deviation of the partition counts.
    pub fn count_std_dev(&self) -> f64 {
        let n = self.counts.len() as f64;
        let mean = self.total() as f64 / n;
        (self
            .counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

/// Distinct sizes in ascending order with their multiplicities.
fn distinct_counts(sizes: &[u64]) -> (Vec<u64>, Vec<u64>) {
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let mut values = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for s in sorted {
        if values.last() == Some(&s) {
            *counts.last_mut().unwrap() += 1;
        } else {
            values.push(s);
            counts.push(1);
        }
    }
    (values, counts)
}

fn check_sizes(sizes: &[u64]) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::invalid("no sizes to partition"));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid("domain sizes must be at least 1"));
    }
    Ok(())
}

/// Equi-depth partitioning into at most `n` intervals.
///
/// Cuts fall on size boundaries: every domain of a given size lands in the
/// same partition, so heavily repeated sizes can absorb several targets and
/// yield fewer than `n` partitions.
pub fn equi_depth_partition(sizes: &[u64], n: usize) -> Result<Partitioning> {
    check_sizes(sizes)?;
    if n == 0 {
        return Err(Error::invalid("partition count must be at least 1"));
    }
    if n > sizes.len() {
        return Err(Error::invalid(format!(
            "{n} partitions requested for {} domains",
            sizes.len()
        )));
    }
    let (values, counts) = distinct_counts(sizes);
    let total = sizes.len() as u64;
    // cumulative[j] = number of sizes <= values[j]
    let cumulative: Vec<u64> = counts
        .iter()
        .scan(0u64, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect();

    let mut cuts: Vec<usize> = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let target = (i as u128 * total as u128 * 2 + n as u128) / (2 * n as u128);
        let target = target as u64;
        // Only cuts that leave the last distinct value on the right are feasible.
        let feasible = &cumulative[..values.len() - 1];
        if feasible.is_empty() {
            break;
        }
        let pos = feasible.partition_point(|&c| c < target);
        let mut best = pos.min(feasible.len() - 1);
        if pos > 0 && (pos == feasible.len() || target - feasible[pos - 1] <= feasible[pos] - target)
        {
            best = pos - 1;
        }
        if cuts.last().map_or(true, |&prev| best > prev) {
            cuts.push(best);
        }
    }

    let mut boundaries = Vec::with_capacity(cuts.len() + 2);
    boundaries.push(values[0]);
    boundaries.extend(cuts.iter().map(|&j| values[j + 1]));
    boundaries.push(values[values.len() - 1] + 1);
    let mut part_counts = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0u64;
    for &j in &cuts {
        part_counts.push(cumulative[j] - prev);
        prev = cumulative[j];
    }
    part_counts.push(total - prev);
    Partitioning::from_parts(&boundaries, part_counts)
}

/// Counts `sizes` into caller-supplied intervals.
pub fn partition_with_boundaries(sizes: &[u64], boundaries: &[u64]) -> Result<Partitioning> {
    check_sizes(sizes)?;
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "boundaries must be at least two strictly increasing values",
        ));
    }
    let first = boundaries[0];
    let last = boundaries[boundaries.len() - 1];
    let mut counts = vec![0u64; boundaries.len() - 1];
    for &s in sizes {
        if s < first || s >= last {
            return Err(Error::invalid(format!(
                "size {s} not covered by boundaries [{first}, {last})"
            )));
        }
        let idx = boundaries.partition_point(|&b| b <= s) - 1;
        counts[idx] += 1;
    }
    Partitioning::from_parts(boundaries, counts)
}

/// `n` equal-width intervals covering `[min, max + 1)`; duplicates collapse on narrow ranges.
pub fn equi_width_boundaries(min: u64, max: u64, n: usize) -> Result<Vec<u64>> {
    if n == 0 || min == 0 || max < min {
        return Err(Error::invalid("equi-width needs n >= 1 and 1 <= min <= max"));
    }
    let span = (max + 1 - min) as f64;
    let mut out: Vec<u64> = (0..=n)
        .map(|i| min + (i as f64 * span / n as f64).round() as u64)
        .collect();
    out.dedup();
    Ok(out)
}

/// Linear blend of two boundary lists of equal length; `lambda = 0` gives
/// `from`, `lambda = 1` gives `to`. Collapsed cuts are dropped.
pub fn interpolate_boundaries(from: &[u64], to: &[u64], lambda: f64) -> Result<Vec<u64>> {
    if from.len() != to.len() || from.len() < 2 {
        return Err(Error::invalid("boundary lists must have equal length >= 2"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut out: Vec<u64> = from
        .iter()
        .zip(to)
        .map(|(&a, &b)| ((1.0 - lambda) * a as f64 + lambda * b as f64).round() as u64)
        .collect();
    out.dedup();
    if out.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("interpolated boundaries are not increasing"));
    }
    Ok(out)
}

/// Boundaries blending the equi-depth cuts of `sizes` toward equal-width cuts.
pub fn deviated_partition(sizes: &[u64], n: usize, lambda: f64) -> Result<Partitioning> {
    let depth = equi_depth_partition(sizes, n)?;
    let depth_b = depth.boundaries();
    let (min, max) = (depth_b[0], depth_b[depth_b.len() - 1] - 1);
    let width_b = equi_width_boundaries(min, max, depth.len())?;
    if width_b.len() != depth_b.len() {
        // Size range narrower than the partition count: nothing to blend toward.
        return Ok(depth);
    }
    partition_with_boundaries(sizes, &interpolate_boundaries(&depth_b, &width_b, lambda)?)
}

/// Exact minimiser of the largest per-partition bound over all placements
/// of cuts on size boundaries, by dynamic programming over prefixes.
///
/// The bound does not depend on the query, so `q` and `t_star` are only
/// validated. Intended as a test oracle on small instances.
pub fn optimal_partition_bruteforce(
    sizes: &[u64],
    n: usize,
    q: f64,
    t_star: f64,
) -> Result<Partitioning> {
    check_sizes(sizes)?;
    if n == 0 {
        return Err(Error::invalid("partition count must be at least 1"));
    }
    if !(q > 0.0) || !(t_star > 0.0 && t_star <= 1.0) {
        return Err(Error::invalid("q must be positive and t_star in (0, 1]"));
    }
    let (values, counts) = distinct_counts(sizes);
    let d = values.len();
    if d > BRUTEFORCE_MAX_DISTINCT {
        return Err(Error::TooLarge(format!(
            "{d} distinct sizes exceeds the exhaustive limit of {BRUTEFORCE_MAX_DISTINCT}"
        )));
    }
    let parts = n.min(d);
    // bound[j] = boundary value before distinct index j; bound[d] = max + 1.
    let mut bound = values.clone();
    bound.push(values[d - 1] + 1);
    let mut prefix = vec![0u64; d + 1];
    for j in 0..d {
        prefix[j + 1] = prefix[j] + counts[j];
    }
    let weight = |i: usize, j: usize| -> f64 {
        let (l, u) = (bound[i] as f64, bound[j] as f64);
        (prefix[j] - prefix[i]) as f64 * (u - l + 1.0) / (2.0 * u)
    };

    // best[k][j]: minimal cost covering distinct values [0, j) with k parts.
    let mut best = vec![vec![f64::INFINITY; d + 1]; parts + 1];
    let mut choice = vec![vec![0usize; d + 1]; parts + 1];
    best[0][0] = 0.0;
    for k in 1..=parts {
        for j in k..=d {
            let mut b = f64::INFINITY;
            let mut arg = k - 1;
            for i in (k - 1)..j {
                let prev = best[k - 1][i];
                if prev >= b {
                    continue;
                }
                let c = prev.max(weight(i, j));
                if c < b {
                    b = c;
                    arg = i;
                }
            }
            best[k][j] = b;
            choice[k][j] = arg;
        }
    }

    let mut cuts = Vec::with_capacity(parts + 1);
    let mut j = d;
    for k in (1..=parts).rev() {
        cuts.push(j);
        j = choice[k][j];
    }
    cuts.push(0);
    cuts.reverse();
    let boundaries: Vec<u64> = cuts.iter().map(|&c| bound[c]).collect();
    let part_counts = cuts.windows(2).map(|w| prefix[w[1]] - prefix[w[0]]).collect();
    Partitioning::from_parts(&boundaries, part_counts)
}

/// Truncated continuous power law `f(x) = C x^-alpha` on `[min_size, max_size + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawModel {
    pub alpha: f64,
    pub min_size: u64,
    pub max_size: u64,
}

impl PowerLawModel {
    pub fn new(alpha: f64, min_size: u64, max_size: u64) -> Result<Self> {
        let model = PowerLawModel {
            alpha,
            min_size,
            max_size,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!(
                "power-law exponent must exceed 1, got {}",
                self.alpha
            )));
        }
        if self.min_size == 0 || self.max_size < self.min_size {
            return Err(Error::invalid("power law needs 1 <= min_size <= max_size"));
        }
        Ok(())
    }

    /// Normalisation constant `C` of the truncated density.
    pub fn normalization(&self) -> f64 {
        let e = 1.0 - self.alpha;
        let lo = (self.min_size as f64).powf(e);
        let hi = ((self.max_size + 1) as f64).powf(e);
        e / (hi - lo)
    }

    /// Inverse CDF of the truncated continuous law.
    pub fn quantile(&self, p: f64) -> f64 {
        let e = 1.0 - self.alpha;
        let lo = (self.min_size as f64).powf(e);
        let hi = ((self.max_size + 1) as f64).powf(e);
        (lo + p * (hi - lo)).powf(1.0 / e)
    }
}

/// Draws `n_domains` i.i.d. integer sizes by inverse-CDF sampling, rounded down.
pub fn sample_power_law(model: &PowerLawModel, n_domains: usize, seed: u64) -> Result<Vec<u64>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_domains)
        .map(|_| {
            let x = model.quantile(rng.gen::<f64>()).floor() as u64;
            x.clamp(model.min_size, model.max_size)
        })
        .collect())
}

/// Moments and skewness of a size distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub count: u64,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
    /// Second central moment.
    pub m2: f64,
    /// Third central moment.
    pub m3: f64,
    /// `m3 / m2^1.5`; absent for constant data.
    pub skewness: Option<f64>,
}

pub fn stats(sizes: &[u64]) -> Result<StatsReport> {
    if sizes.is_empty() {
        return Err(Error::invalid("statistics of an empty sample"));
    }
    let n = sizes.len() as f64;
    let mean = sizes.iter().map(|&s| s as f64).sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &s in sizes {
        let d = s as f64 - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let skewness = (m2 > 0.0).then(|| m3 / m2.powf(1.5));
    Ok(StatsReport {
        count: sizes.len() as u64,
        min: *sizes.iter().min().unwrap(),
        max: *sizes.iter().max().unwrap(),
        mean,
        m2,
        m3,
        skewness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_cut_costs(sizes: &[u64]) -> Vec<f64> {
        let (values, _) = distinct_counts(sizes);
        (1..values.len())
            .map(|j| {
                partition_with_boundaries(sizes, &[values[0], values[j], values[values.len() - 1] + 1])
                    .unwrap()
                    .cost()
            })
            .collect()
    }

    #[test]
    fn equi_depth_exact_split() {
        let p = equi_depth_partition(&[1, 2, 3, 4, 5, 6], 3).unwrap();
        assert_eq!(p.boundaries(), vec![1, 3, 5, 7]);
        assert_eq!(p.counts(), &[2, 2, 2]);
    }

    #[test]
    fn equi_depth_single_partition() {
        let p = equi_depth_partition(&[4, 9, 2, 2, 30], 1).unwrap();
        assert_eq!(p.boundaries(), vec![2, 31]);
        assert_eq!(p.counts(), &[5]);
    }

    #[test]
    fn equi_depth_rejects_too_many_partitions() {
        assert!(equi_depth_partition(&[1, 2, 3], 4).is_err());
        assert!(equi_depth_partition(&[1, 2, 3], 0).is_err());
        assert!(equi_depth_partition(&[], 1).is_err());
    }

    #[test]
    fn equi_depth_keeps_equal_sizes_together() {
        let sizes = [1, 1, 1, 1, 1, 1, 2, 3, 4, 5];
        let p = equi_depth_partition(&sizes, 5).unwrap();
        assert_eq!(p.total(), 10);
        assert_eq!(p.counts()[0], 6);
        assert!(p.len() < 5);
    }

    #[test]
    fn boundaries_reproduce_equi_depth() {
        let sizes = sample_power_law(&PowerLawModel::new(2.0, 5, 10_000).unwrap(), 3000, 2).unwrap();
        let p = equi_depth_partition(&sizes, 16).unwrap();
        let q = partition_with_boundaries(&sizes, &p.boundaries()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn boundaries_must_cover() {
        assert!(partition_with_boundaries(&[5, 6, 7], &[5, 7]).is_err());
        assert!(partition_with_boundaries(&[5, 6, 7], &[6, 9]).is_err());
        assert!(partition_with_boundaries(&[5, 6], &[5, 5, 9]).is_err());
    }

    #[test]
    fn equi_width_over_one_to_hundred() {
        let b = equi_width_boundaries(1, 100, 4).unwrap();
        assert_eq!(b, vec![1, 26, 51, 76, 101]);
        let sizes: Vec<u64> = (1..=100).collect();
        let p = partition_with_boundaries(&sizes, &b).unwrap();
        assert!(p.intervals().iter().all(|iv| iv.width() == 25));
        assert_eq!(p.counts(), &[25, 25, 25, 25]);
    }

    #[test]
    fn deviation_increases_count_spread() {
        let sizes = sample_power_law(&PowerLawModel::new(2.0, 10, 5_000).unwrap(), 10_000, 8).unwrap();
        let mut prev = -1.0;
        for lambda in [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0] {
            let sd = deviated_partition(&sizes, 16, lambda).unwrap().count_std_dev();
            assert!(sd >= prev, "lambda {lambda}: {sd} < {prev}");
            prev = sd;
        }
        assert_eq!(
            deviated_partition(&sizes, 16, 0.0).unwrap(),
            equi_depth_partition(&sizes, 16).unwrap()
        );
    }

    #[test]
    fn bruteforce_single_partition() {
        let sizes = [3, 7, 7, 12, 40];
        let p = optimal_partition_bruteforce(&sizes, 1, 5.0, 0.5).unwrap();
        assert_eq!(p.boundaries(), vec![3, 41]);
        let expect = 5.0 * (41.0 - 3.0 + 1.0) / 82.0;
        assert!((p.cost() - expect).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_two_partitions_matches_exhaustive_scan() {
        let sizes: Vec<u64> = (1..=200).collect();
        let p = optimal_partition_bruteforce(&sizes, 2, 10.0, 0.5).unwrap();
        let best = all_cut_costs(&sizes)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!((p.cost() - best).abs() < 1e-9);
        // Uniform sizes: the two bounds balance to within one cut position.
        let est = p.fp_estimates();
        let cut = p.boundaries()[1];
        let shifted = |c: u64| {
            partition_with_boundaries(&sizes, &[1, c, 201]).unwrap().fp_estimates()
        };
        let (lo, hi) = (shifted(cut - 1), shifted(cut + 1));
        let gap = (est[0].fp_upper_bound - est[1].fp_upper_bound).abs();
        let step = (lo[0].fp_upper_bound - hi[0].fp_upper_bound)
            .abs()
            .max((lo[1].fp_upper_bound - hi[1].fp_upper_bound).abs());
        assert!(gap <= step, "gap {gap} step {step}");
    }

    #[test]
    fn bruteforce_rejects_large_instances() {
        let sizes: Vec<u64> = (1..=(BRUTEFORCE_MAX_DISTINCT as u64 + 1)).collect();
        assert!(matches!(
            optimal_partition_bruteforce(&sizes, 4, 1.0, 0.5),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn optimum_balances_bounds_better_than_worse_partitionings() {
        let sizes = sample_power_law(&PowerLawModel::new(2.0, 10, 2_000).unwrap(), 400, 5).unwrap();
        let opt = optimal_partition_bruteforce(&sizes, 4, 10.0, 0.5).unwrap();
        let spread = |p: &Partitioning| {
            let m: Vec<f64> = p.fp_estimates().iter().map(|e| e.fp_upper_bound).collect();
            m.iter().cloned().fold(f64::MIN, f64::max) / m.iter().cloned().fold(f64::MAX, f64::min)
        };
        let eq = equi_depth_partition(&sizes, 4).unwrap();
        assert!(opt.cost() <= eq.cost());
        if eq.cost() > opt.cost() {
            assert!(spread(&opt) <= spread(&eq));
        }
    }

    #[test]
    fn power_law_degenerate_and_deterministic() {
        let m = PowerLawModel::new(2.0, 7, 7).unwrap();
        assert!(sample_power_law(&m, 100, 1).unwrap().iter().all(|&s| s == 7));
        let m = PowerLawModel::new(2.5, 1, 1000).unwrap();
        assert_eq!(
            sample_power_law(&m, 500, 9).unwrap(),
            sample_power_law(&m, 500, 9).unwrap()
        );
        assert!(PowerLawModel::new(1.0, 1, 10).is_err());
        assert!(PowerLawModel::new(0.5, 1, 10).is_err());
    }

    #[test]
    fn power_law_density_integrates_to_one() {
        let m = PowerLawModel::new(2.0, 10, 999).unwrap();
        // integral of C x^-2 over [10, 1000) = C (1/10 - 1/1000)
        assert!((m.normalization() * (0.1 - 0.001) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_log_log_slope() {
        let alpha = 2.0;
        let m = PowerLawModel::new(alpha, 1, 1_000_000).unwrap();
        let sizes = sample_power_law(&m, 100_000, 3).unwrap();
        // Log-binned density: count / bin width against the bin's geometric centre.
        let mut pts = Vec::new();
        let mut lo = 1u64;
        while lo < 100_000 {
            let hi = lo * 2;
            let c = sizes.iter().filter(|&&s| s >= lo && s < hi).count();
            if c >= 20 {
                let density = c as f64 / (hi - lo) as f64;
                pts.push((((lo * hi) as f64).sqrt().ln(), density.ln()));
            }
            lo = hi;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + alpha).abs() <= 0.3, "slope {slope}");
    }

    #[test]
    fn stats_examples() {
        assert_eq!(stats(&[1, 2, 3]).unwrap().skewness, Some(0.0));
        let s = stats(&[1, 1, 1, 10]).unwrap();
        assert!((s.m2 - 15.1875).abs() < 1e-12);
        assert!((s.m3 - 68.34375).abs() < 1e-12);
        assert!((s.skewness.unwrap() - 2.0 / 3f64.sqrt()).abs() < 1e-9);
        assert_eq!(stats(&[4, 4, 4]).unwrap().skewness, None);
        assert!(stats(&[]).is_err());
    }

    #[test]
    fn partitioning_json_shape() {
        let p = equi_depth_partition(&[1, 2, 3, 4, 5, 6], 3).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"boundaries":[1,3,5,7],"counts":[2,2,2]}"#);
        let back: Partitioning = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Partitioning>(r#"{"boundaries":[3,1],"counts":[1]}"#).is_err());
    }

    proptest! {
        #[test]
        fn equi_depth_is_contiguous_and_exhaustive(
            sizes in prop::collection::vec(1u64..500, 1..400),
            n in 1usize..40,
        ) {
            prop_assume!(n <= sizes.len());
            let p = equi_depth_partition(&sizes, n).unwrap();
            prop_assert!(p.len() <= n);
            prop_assert_eq!(p.total(), sizes.len() as u64);
            let b = p.boundaries();
            prop_assert_eq!(b[0], *sizes.iter().min().unwrap());
            prop_assert_eq!(*b.last().unwrap(), sizes.iter().max().unwrap() + 1);
            let recount = partition_with_boundaries(&sizes, &b).unwrap();
            prop_assert_eq!(recount.counts(), p.counts());
            for &s in &sizes {
                prop_assert!(p.locate(s).is_some());
            }
        }

        #[test]
        fn equi_depth_balanced_without_ties(n_dom in 1usize..300, n in 1usize..30) {
            prop_assume!(n <= n_dom);
            let sizes: Vec<u64> = (1..=n_dom as u64).collect();
            let p = equi_depth_partition(&sizes, n).unwrap();
            prop_assert_eq!(p.len(), n);
            let lo = (n_dom / n) as u64;
            let hi = n_dom.div_ceil(n) as u64;
            for &c in p.counts() {
                prop_assert!(c == lo || c == hi, "count {} not in {{{}, {}}}", c, lo, hi);
            }
        }

        #[test]
        fn bruteforce_never_worse_than_equi_depth(
            sizes in prop::collection::vec(1u64..300, 1..200),
            n in 1usize..6,
        ) {
            prop_assume!(n <= sizes.len());
            let opt = optimal_partition_bruteforce(&sizes, n, 3.0, 0.5).unwrap();
            let eq = equi_depth_partition(&sizes, n).unwrap();
            prop_assert!(opt.cost() <= eq.cost() + 1e-9);
            prop_assert_eq!(opt.total(), sizes.len() as u64);
        }
    }
}
