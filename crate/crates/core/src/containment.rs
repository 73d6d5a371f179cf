//! Closed-form relations between containment and Jaccard similarity, the
//! conservative per-partition threshold, and the false-positive cost model.
//!
//! Sizes are taken as `f64` so that estimated query sizes can be used directly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open size interval `[lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeInterval {
    lower: u64,
    upper: u64,
}

impl SizeInterval {
    pub fn new(lower: u64, upper: u64) -> Result<Self> {
        if lower < 1 || lower >= upper {
            return Err(Error::invalid(format!(
                "size interval [{lower}, {upper}) must satisfy 1 <= l < u"
            )));
        }
        Ok(SizeInterval { lower, upper })
    }

    pub fn lower(&self) -> u64 {
        self.lower
    }

    pub fn upper(&self) -> u64 {
        self.upper
    }

    pub fn contains(&self, size: u64) -> bool {
        self.lower <= size && size < self.upper
    }

    pub fn width(&self) -> u64 {
        self.upper - self.lower
    }
}

/// Upper bound on the false positives a partition produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpEstimate {
    pub interval: SizeInterval,
    pub count: u64,
    pub fp_upper_bound: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Jaccard similarity of `Q` and `X` given containment `t = |Q ∩ X| / |Q|`.
pub fn containment_to_jaccard(t: f64, x: f64, q: f64) -> Result<f64> {
    check_positive("x", x)?;
    check_positive("q", q)?;
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("containment must be >= 0, got {t}")));
    }
    let denom = x / q + 1.0 - t;
    if denom <= 0.0 {
        return Err(Error::invalid(format!(
            "containment {t} exceeds 1 + x/q = {}",
            x / q + 1.0
        )));
    }
    Ok(t / denom)
}

/// Containment of `Q` in `X` given their Jaccard similarity.
pub fn jaccard_to_containment(s: f64, x: f64, q: f64) -> Result<f64> {
    check_positive("x", x)?;
    check_positive("q", q)?;
    check_unit("jaccard", s)?;
    Ok((x / q + 1.0) * s / (1.0 + s))
}

/// Jaccard threshold obtained by substituting the partition upper bound `u`
/// for the unknown domain size; never above the exact threshold of any
/// domain with size `x <= u`.
pub fn conservative_jaccard_threshold(t_star: f64, u: f64, q: f64) -> Result<f64> {
    check_positive("u", u)?;
    check_positive("q", q)?;
    if !(t_star > 0.0 && t_star <= 1.0) {
        return Err(Error::invalid(format!(
            "containment threshold must lie in (0, 1], got {t_star}"
        )));
    }
    Ok(t_star / (u / q + 1.0 - t_star))
}

/// Containment level actually enforced on a domain of size `x` when the
/// partition is filtered with the threshold derived from `u`.
pub fn effective_containment_threshold(x: f64, q: f64, u: f64, t_star: f64) -> Result<f64> {
    check_positive("x", x)?;
    check_positive("q", q)?;
    check_positive("u", u)?;
    check_unit("t_star", t_star)?;
    if x > u {
        return Err(Error::invalid(format!(
            "domain size {x} exceeds partition upper bound {u}"
        )));
    }
    Ok((x + q) * t_star / (u + q))
}

/// Probability that a non-qualifying domain of size `x` in `[l, u)` passes
/// the converted threshold, with its true containment uniform over the
/// attainable non-qualifying range `[0, min(t*, x/q))`.
pub fn fp_probability(x: f64, q: f64, u: f64, l: f64, t_star: f64) -> Result<f64> {
    check_positive("l", l)?;
    if x < l || x > u {
        return Err(Error::invalid(format!(
            "domain size {x} outside partition [{l}, {u})"
        )));
    }
    if !(t_star > 0.0 && t_star <= 1.0) {
        return Err(Error::invalid(format!(
            "containment threshold must lie in (0, 1], got {t_star}"
        )));
    }
    let t_x = effective_containment_threshold(x, q, u, t_star)?;
    if x >= t_star * q {
        return Ok(((t_star - t_x) / t_star).max(0.0));
    }
    let t_l = effective_containment_threshold(l, q, u, t_star)?;
    if x < t_l * q {
        return Ok(0.0);
    }
    // Attainable containment tops out at x/q < t*.
    Ok((1.0 - t_x * q / x).max(0.0))
}

/// Upper bound `N * (u - l + 1) / (2u)` on a partition's false positives.
pub fn fp_upper_bound(interval: SizeInterval, count: u64) -> FpEstimate {
    let (l, u) = (interval.lower as f64, interval.upper as f64);
    FpEstimate {
        interval,
        count,
        fp_upper_bound: count as f64 * (u - l + 1.0) / (2.0 * u),
    }
}

/// Cost of a partitioning: the largest per-partition false-positive bound.
pub fn partition_cost(estimates: &[FpEstimate]) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::invalid("partition cost of an empty partitioning"));
    }
    Ok(estimates
        .iter()
        .map(|e| e.fp_upper_bound)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-12;

    #[test]
    fn conversion_examples() {
        assert_eq!(containment_to_jaccard(1.0, 5.0, 5.0).unwrap(), 1.0);
        assert_eq!(containment_to_jaccard(0.0, 5.0, 3.0).unwrap(), 0.0);
        assert!((containment_to_jaccard(0.5, 8.0, 8.0).unwrap() - 1.0 / 3.0).abs() < EPS);
        assert_eq!(jaccard_to_containment(1.0, 4.0, 4.0).unwrap(), 1.0);
        assert_eq!(jaccard_to_containment(0.0, 4.0, 9.0).unwrap(), 0.0);
        assert!((jaccard_to_containment(1.0 / 3.0, 8.0, 8.0).unwrap() - 0.5).abs() < EPS);
    }

    #[test]
    fn half_containment_cross_checked_on_sets() {
        // |Q| = |X| = 8 sharing 4 values: t = 0.5, s = 4 / 12.
        let q: std::collections::HashSet<u32> = (0..8).collect();
        let x: std::collections::HashSet<u32> = (4..12).collect();
        let inter = q.intersection(&x).count() as f64;
        let union = q.union(&x).count() as f64;
        let t = inter / q.len() as f64;
        let s = containment_to_jaccard(t, x.len() as f64, q.len() as f64).unwrap();
        assert!((s - inter / union).abs() < EPS);
    }

    #[test]
    fn conversion_rejects_impossible_containment() {
        assert!(containment_to_jaccard(2.5, 1.0, 1.0).is_err());
        assert!(containment_to_jaccard(-0.1, 1.0, 1.0).is_err());
        assert!(jaccard_to_containment(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn conservative_threshold_examples() {
        assert_eq!(conservative_jaccard_threshold(1.0, 7.0, 7.0).unwrap(), 1.0);
        assert!((conservative_jaccard_threshold(0.5, 3.0, 1.0).unwrap() - 1.0 / 7.0).abs() < EPS);
        assert!(
            (conservative_jaccard_threshold(0.5, 1000.0, 10.0).unwrap() - 0.5 / 100.5).abs() < EPS
        );
        assert!(conservative_jaccard_threshold(0.0, 3.0, 1.0).is_err());
    }

    #[test]
    fn effective_threshold_examples() {
        assert_eq!(effective_containment_threshold(40.0, 3.0, 40.0, 0.7).unwrap(), 0.7);
        assert!((effective_containment_threshold(1.0, 1.0, 3.0, 0.5).unwrap() - 0.25).abs() < EPS);
        assert!(
            (effective_containment_threshold(1.0, 1.0, 1000.0, 1.0).unwrap() - 2.0 / 1001.0).abs()
                < EPS
        );
        assert!(effective_containment_threshold(5.0, 1.0, 4.0, 0.5).is_err());
    }

    #[test]
    fn fp_probability_cases() {
        assert_eq!(fp_probability(3.0, 1.0, 3.0, 1.0, 0.5).unwrap(), 0.0);
        assert!((fp_probability(1.0, 1.0, 3.0, 1.0, 0.5).unwrap() - 0.5).abs() < EPS);
        // q = 100, u = 1000, l = 1, t* = 0.5: t_l = 101 * 0.5 / 1100, t_l * q ~ 4.6.
        assert_eq!(fp_probability(2.0, 100.0, 1000.0, 1.0, 0.5).unwrap(), 0.0);
        // Middle branch: t_l * q <= x < t* q.
        let x = 30.0;
        let t_x = (x + 100.0) * 0.5 / 1100.0;
        let p = fp_probability(x, 100.0, 1000.0, 1.0, 0.5).unwrap();
        assert!((p - (1.0 - t_x * 100.0 / x)).abs() < EPS);
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn fp_bound_examples() {
        let iv = SizeInterval::new(10, 20).unwrap();
        assert!((fp_upper_bound(iv, 100).fp_upper_bound - 27.5).abs() < EPS);
        let narrow = SizeInterval::new(9, 10).unwrap();
        assert!((fp_upper_bound(narrow, 50).fp_upper_bound - 5.0).abs() < EPS);
        assert_eq!(fp_upper_bound(iv, 0).fp_upper_bound, 0.0);
    }

    #[test]
    fn cost_is_the_max_bound() {
        let iv = SizeInterval::new(1, 2).unwrap();
        let est = |b| FpEstimate {
            interval: iv,
            count: 100,
            fp_upper_bound: b,
        };
        assert_eq!(partition_cost(&[est(27.5)]).unwrap(), 27.5);
        assert_eq!(partition_cost(&[est(27.5), est(30.0), est(10.0)]).unwrap(), 30.0);
        assert_eq!(partition_cost(&[est(4.0), est(4.0), est(4.0)]).unwrap(), 4.0);
        assert!(partition_cost(&[]).is_err());
    }

    #[test]
    fn interval_validation() {
        assert!(SizeInterval::new(0, 5).is_err());
        assert!(SizeInterval::new(5, 5).is_err());
        let iv = SizeInterval::new(5, 9).unwrap();
        assert!(iv.contains(5) && iv.contains(8) && !iv.contains(9));
    }

    /// Exhaustive check on small explicit set pairs: any `X` with `|X| <= u`
    /// that meets the containment threshold also meets the converted Jaccard threshold.
    #[test]
    fn conservative_threshold_never_drops_qualifying_pairs() {
        let q_set: Vec<u32> = (0..6).collect();
        for u in 1u32..=12 {
            for x in 1..=u {
                for overlap in 0..=x.min(6) {
                    let t = overlap as f64 / 6.0;
                    let s = overlap as f64 / (6 + x - overlap) as f64;
                    for t_star in [0.25, 0.5, 0.75, 1.0] {
                        if t >= t_star {
                            let s_star =
                                conservative_jaccard_threshold(t_star, u as f64, 6.0).unwrap();
                            assert!(s >= s_star - EPS, "u={u} x={x} overlap={overlap}");
                        }
                    }
                }
            }
        }
        assert_eq!(q_set.len(), 6);
    }

    /// Monte Carlo check of the partition bound: sizes uniform on `[l, u)`,
    /// non-qualifying containments uniform on their attainable range.
    #[test]
    fn fp_bound_holds_and_is_tight_for_large_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (l, u, q, t_star) = (500u64, 1000u64, 50.0, 0.5f64);
        let n = 20_000u64;
        let mut fps = 0u64;
        for _ in 0..n {
            let x = rng.gen_range(l..u) as f64;
            let t_max = t_star.min(x / q);
            let t = rng.gen::<f64>() * t_max;
            let t_x = effective_containment_threshold(x, q, u as f64, t_star).unwrap();
            if t >= t_x {
                fps += 1;
            }
        }
        let bound = fp_upper_bound(SizeInterval::new(l, u).unwrap(), n).fp_upper_bound;
        assert!((fps as f64) <= bound, "{fps} > {bound}");
        assert!(fps as f64 >= 0.85 * bound, "{fps} not within 15% of {bound}");
    }

    proptest! {
        #[test]
        fn round_trip(x in 1.0f64..1e6, q in 1.0f64..1e6, frac in 0.0f64..=1.0) {
            let t = frac * (x / q).min(1.0);
            let s = containment_to_jaccard(t, x, q).unwrap();
            let back = jaccard_to_containment(s, x, q).unwrap();
            prop_assert!((back - t).abs() <= 1e-12, "t={} back={}", t, back);
        }

        #[test]
        fn jaccard_monotone(x in 1.0f64..1e4, dx in 1.0f64..1e4, q in 1.0f64..1e4, t in 0.01f64..=1.0) {
            let t = t * (x / q).min(1.0);
            prop_assume!(t > 0.0);
            let a = containment_to_jaccard(t, x, q).unwrap();
            let b = containment_to_jaccard(t, x + dx, q).unwrap();
            prop_assert!(b < a);
            let c = containment_to_jaccard(t * 0.5, x, q).unwrap();
            prop_assert!(c < a);
        }

        #[test]
        fn conservative_below_exact(u in 1.0f64..1e5, xf in 0.001f64..=1.0, q in 1.0f64..1e5, t in 0.01f64..=1.0) {
            let x = (u * xf).max(1e-3);
            let s_star = conservative_jaccard_threshold(t, u, q).unwrap();
            let exact = containment_to_jaccard(t, x, q).unwrap();
            prop_assert!(s_star <= exact + 1e-15);
        }

        #[test]
        fn fp_probability_nonincreasing_in_x(l in 1u64..100, w in 1u64..1000, q in 1.0f64..200.0, t in 0.05f64..=1.0) {
            let u = (l + w) as f64;
            let mut prev = f64::INFINITY;
            let mut x = l as f64;
            while x < u {
                if x >= t * q {
                    let p = fp_probability(x, q, u, l as f64, t).unwrap();
                    prop_assert!(p <= prev + 1e-12);
                    prop_assert!((0.0..=1.0).contains(&p));
                    prev = p;
                }
                x += (w as f64 / 17.0).max(1.0);
            }
            prop_assert!(fp_probability(u, q, u, l as f64, t).unwrap().abs() < 1e-12);
        }

        #[test]
        fn fp_bound_monotone_in_interval(l in 2u64..500, w in 1u64..500, dl in 1u64..500, du in 1u64..500, n in 1u64..10_000) {
            let base = fp_upper_bound(SizeInterval::new(l, l + w).unwrap(), n).fp_upper_bound;
            let wider_up = fp_upper_bound(SizeInterval::new(l, l + w + du).unwrap(), n).fp_upper_bound;
            let lower = l.saturating_sub(dl).max(1);
            let wider_down = fp_upper_bound(SizeInterval::new(lower, l + w).unwrap(), n).fp_upper_bound;
            prop_assert!(wider_up > base);
            prop_assert!(wider_down >= base);
            prop_assert!(base <= n as f64);
        }
    }
}
