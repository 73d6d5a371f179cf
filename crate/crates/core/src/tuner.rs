//! Per-partition choice of LSH banding parameters.
//!
//! For a domain of size `x` and a query of size `q`, a containment `t` maps to
//! Jaccard `s = t / (x/q + 1 - t)`, and banding with `b` bands of `r` rows makes
//! the domain a candidate with probability `1 - (1 - s^r)^b`. The tuner picks
//! the lattice point minimizing the false positive plus false negative area
//! under that curve around the threshold `t*`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{put_f64, put_u32, Reader};
use crate::error::{Error, Result};
use crate::forest::BandLattice;

const TABLE_MAGIC: &[u8; 4] = b"LSHT";
const TABLE_VERSION: u8 = 1;

/// Simpson subintervals per integration segment.
pub const SIMPSON_INTERVALS: usize = 200;

/// Number of bands and rows per band used for one query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TuningParams {
    pub b: usize,
    pub r: usize,
}

impl TuningParams {
    pub fn new(b: usize, r: usize) -> Result<Self> {
        if b == 0 || r == 0 {
            return Err(Error::invalid(format!("invalid banding b={b}, r={r}")));
        }
        Ok(TuningParams { b, r })
    }
}

/// Optimal parameters with the objective value attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuned {
    pub params: TuningParams,
    /// False positive area plus false negative area.
    pub objective: f64,
}

/// Probability that banding with `params` selects a pair of Jaccard `s`.
pub fn banding_probability(s: f64, params: TuningParams) -> f64 {
    1.0 - (1.0 - s.powi(params.r as i32)).powi(params.b as i32)
}

/// Candidate probability of a domain of size `x` whose containment of the query is `t`.
pub fn candidate_probability(t: f64, x: f64, q: f64, params: TuningParams) -> f64 {
    let s = t / (x / q + 1.0 - t);
    banding_probability(s, params)
}

/// The banding threshold approximation `(1/b)^(1/r)`.
pub fn static_threshold(params: TuningParams) -> f64 {
    (1.0 / params.b as f64).powf(1.0 / params.r as f64)
}

/// Composite Simpson's rule over `[a, b]`; an empty or reversed interval gives 0.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + k as f64 * h);
    }
    sum * h / 3.0
}

fn fp_limit(ratio: f64, t_star: f64) -> f64 {
    t_star.min(ratio)
}

fn fn_limit(ratio: f64) -> f64 {
    ratio.min(1.0)
}

/// Area under the candidate curve below the threshold, where containment is
/// capped at `x/q`.
pub fn fp_area(x: f64, q: f64, t_star: f64, params: TuningParams) -> f64 {
    let ratio = x / q;
    simpson(
        |t| candidate_probability(t, x, q, params),
        0.0,
        fp_limit(ratio, t_star),
        SIMPSON_INTERVALS,
    )
}

/// Area above the candidate curve from the threshold up to the reachable
/// containment; zero when the domain cannot reach `t*`.
pub fn fn_area(x: f64, q: f64, t_star: f64, params: TuningParams) -> f64 {
    let ratio = x / q;
    if ratio < t_star {
        return 0.0;
    }
    simpson(
        |t| 1.0 - candidate_probability(t, x, q, params),
        t_star,
        fn_limit(ratio),
        SIMPSON_INTERVALS,
    )
}

/// False positive plus false negative area.
pub fn objective(x: f64, q: f64, t_star: f64, params: TuningParams) -> f64 {
    fp_area(x, q, t_star, params) + fn_area(x, q, t_star, params)
}

/// Objective for every lattice point at once, indexed `[(b - 1) * r_max + (r - 1)]`.
///
/// Evaluates the same Simpson nodes as [`objective`] but shares the powers
/// of `s` across `r` and accumulates `(1 - s^r)^b` incrementally over `b`.
pub fn lattice_objectives(ratio: f64, t_star: f64, lattice: BandLattice) -> Vec<f64> {
    let (b_max, r_max) = (lattice.b_max(), lattice.r_max());
    let mut fp = vec![0.0; b_max * r_max];
    let mut fnv = vec![0.0; b_max * r_max];
    let c = ratio + 1.0;
    let n = SIMPSON_INTERVALS + SIMPSON_INTERVALS % 2;
    let accumulate = |a: f64, z: f64, out: &mut [f64], negate: bool| {
        if z <= a {
            return;
        }
        let h = (z - a) / n as f64;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            } * h
                / 3.0;
            let t = a + k as f64 * h;
            let s = t / (c - t);
            for r in 1..=r_max {
                let y = 1.0 - s.powi(r as i32);
                let mut p = 1.0;
                for bi in 0..b_max {
                    // p = (1 - s^r)^(bi + 1), the miss probability
                    p *= y;
                    let v = if negate { p } else { 1.0 - p };
                    out[bi * r_max + (r - 1)] += w * v;
                }
            }
        }
    };
    accumulate(0.0, fp_limit(ratio, t_star), &mut fp, false);
    if ratio >= t_star {
        accumulate(t_star, fn_limit(ratio), &mut fnv, true);
    }
    fp.iter().zip(&fnv).map(|(a, b)| a + b).collect()
}

fn argmin(values: &[f64], lattice: BandLattice) -> Tuned {
    let r_max = lattice.r_max();
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    Tuned {
        params: TuningParams {
            b: best / r_max + 1,
            r: best % r_max + 1,
        },
        objective: values[best],
    }
}

/// Optimal parameters for a size ratio `x/q`. Ties go to the smaller `b`,
/// then the smaller `r`.
pub fn optimize_ratio(ratio: f64, t_star: f64, lattice: BandLattice) -> Tuned {
    argmin(&lattice_objectives(ratio, t_star, lattice), lattice)
}

/// Optimal parameters for a partition with upper size bound `u` and a query of size `q`.
pub fn optimize_params(u: f64, q: f64, t_star: f64, lattice: BandLattice) -> Tuned {
    optimize_ratio(u / q, t_star, lattice)
}

/// Sizes `2^(k/4)` for `k = 0..`, up to the first value at or above `max`.
///
/// Every value is a power of two times one of four fixed fractions, so the
/// ratio of two grid values depends only on their index difference modulo
/// the fractions, and equal ratios are bitwise equal.
pub fn log_grid(max: f64) -> Vec<f64> {
    const FRAC: [f64; 4] = [
        1.0,
        1.189_207_115_002_721,
        std::f64::consts::SQRT_2,
        1.681_792_830_507_429,
    ];
    let mut out = Vec::new();
    for k in 0.. {
        let v = (2.0f64).powi(k / 4) * FRAC[(k % 4) as usize];
        out.push(v);
        if v >= max {
            break;
        }
    }
    out
}

/// Thresholds `0.05, 0.10, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

/// Precomputed optimal parameters over a `(u, q, t*)` grid.
///
/// Lookups snap each coordinate to the nearest grid value, in log space for
/// the sizes and linearly for the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningTable {
    lattice: BandLattice,
    u_grid: Vec<f64>,
    q_grid: Vec<f64>,
    t_grid: Vec<f64>,
    /// Indexed `[(iu * q_len + iq) * t_len + it]`.
    entries: Vec<Tuned>,
}

fn check_grid(name: &str, grid: &[f64], max: Option<f64>) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v > 0.0 && max.map_or(true, |m| *v <= m))) {
        return Err(Error::invalid(format!("{name} grid has out-of-range values")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

fn nearest(grid: &[f64], v: f64, log: bool) -> usize {
    let i = grid.partition_point(|&g| g < v);
    if i == 0 {
        return 0;
    }
    if i == grid.len() {
        return grid.len() - 1;
    }
    let (lo, hi) = (grid[i - 1], grid[i]);
    let closer_low = if log {
        (v / lo).ln() <= (hi / v).ln()
    } else {
        v - lo <= hi - v
    };
    if closer_low {
        i - 1
    } else {
        i
    }
}

impl TuningTable {
    pub fn build(
        u_grid: Vec<f64>,
        q_grid: Vec<f64>,
        t_grid: Vec<f64>,
        lattice: BandLattice,
    ) -> Result<Self> {
        check_grid("u", &u_grid, None)?;
        check_grid("q", &q_grid, None)?;
        check_grid("threshold", &t_grid, Some(1.0))?;
        let mut keys: Vec<(u64, u64)> = Vec::new();
        for &u in &u_grid {
            for &q in &q_grid {
                for &t in &t_grid {
                    keys.push(((u / q).to_bits(), t.to_bits()));
                }
            }
        }
        let mut unique = keys.clone();
        unique.sort_unstable();
        unique.dedup();
        let solved: HashMap<(u64, u64), Tuned> = unique
            .par_iter()
            .map(|&(ratio, t)| {
                let tuned = optimize_ratio(f64::from_bits(ratio), f64::from_bits(t), lattice);
                ((ratio, t), tuned)
            })
            .collect();
        let entries = keys.iter().map(|k| solved[k]).collect();
        Ok(TuningTable {
            lattice,
            u_grid,
            q_grid,
            t_grid,
            entries,
        })
    }

    /// Default grids covering sizes up to `max_size` and thresholds in steps of 0.05.
    pub fn for_max_size(max_size: u64, lattice: BandLattice) -> Result<Self> {
        let grid = log_grid(max_size.max(1) as f64);
        TuningTable::build(grid.clone(), grid, default_thresholds(), lattice)
    }

    pub fn lattice(&self) -> BandLattice {
        self.lattice
    }

    pub fn u_grid(&self) -> &[f64] {
        &self.u_grid
    }

    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry at grid indices.
    pub fn get(&self, iu: usize, iq: usize, it: usize) -> Tuned {
        self.entries[(iu * self.q_grid.len() + iq) * self.t_grid.len() + it]
    }

    /// Grid indices nearest to `(u, q, t*)`.
    pub fn snap(&self, u: f64, q: f64, t_star: f64) -> (usize, usize, usize) {
        (
            nearest(&self.u_grid, u, true),
            nearest(&self.q_grid, q, true),
            nearest(&self.t_grid, t_star, false),
        )
    }

    pub fn lookup(&self, u: f64, q: f64, t_star: f64) -> Tuned {
        let (iu, iq, it) = self.snap(u, q, t_star);
        self.get(iu, iq, it)
    }

    /// Sidecar format: magic, version, lattice, three f64 grids, then one
    /// `(b, r, objective)` record per cell.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TABLE_MAGIC);
        out.push(TABLE_VERSION);
        put_u32(&mut out, self.lattice.b_max() as u32);
        put_u32(&mut out, self.lattice.r_max() as u32);
        for grid in [&self.u_grid, &self.q_grid, &self.t_grid] {
            put_u32(&mut out, grid.len() as u32);
            for &v in grid.iter() {
                put_f64(&mut out, v);
            }
        }
        for e in &self.entries {
            put_u32(&mut out, e.params.b as u32);
            put_u32(&mut out, e.params.r as u32);
            put_f64(&mut out, e.objective);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.expect_magic(TABLE_MAGIC, "tuning table")?;
        let version = rd.u8()?;
        if version != TABLE_VERSION {
            return Err(Error::parse(format!(
                "tuning table: unsupported version {version}"
            )));
        }
        let bad = |e: Error| Error::parse(format!("tuning table: {e}"));
        let lattice = BandLattice::new(rd.u32()? as usize, rd.u32()? as usize).map_err(bad)?;
        let mut grids = Vec::with_capacity(3);
        for _ in 0..3 {
            let len = rd.u32()? as usize;
            let grid = (0..len).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
            grids.push(grid);
        }
        let t_grid = grids.pop().unwrap();
        let q_grid = grids.pop().unwrap();
        let u_grid = grids.pop().unwrap();
        check_grid("u", &u_grid, None).map_err(bad)?;
        check_grid("q", &q_grid, None).map_err(bad)?;
        check_grid("threshold", &t_grid, Some(1.0)).map_err(bad)?;
        let cells = u_grid.len() * q_grid.len() * t_grid.len();
        let mut entries = Vec::with_capacity(cells);
        for _ in 0..cells {
            let (b, r) = (rd.u32()? as usize, rd.u32()? as usize);
            if !lattice.contains(b, r) {
                return Err(Error::parse("tuning table: entry outside lattice"));
            }
            entries.push(Tuned {
                params: TuningParams { b, r },
                objective: rd.f64()?,
            });
        }
        rd.finish()?;
        Ok(TuningTable {
            lattice,
            u_grid,
            q_grid,
            t_grid,
            entries,
        })
    }
}
