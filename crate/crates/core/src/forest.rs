//! Prefix-searchable MinHash LSH index (LSH Forest).
//!
//! Signatures of length `m = b_max * r_max` are cut into `b_max` contiguous
//! bands of `r_max` values. Each band goes into its own sorted key array, so a
//! query can pick any `b <= b_max` trees and any prefix depth `r <= r_max` at
//! query time with two binary searches per tree.


use serde::{Deserialize, Serialize};

use crate::codec::{put_bytes, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::minhash::MinHashSignature;

const FOREST_MAGIC: &[u8; 4] = b"LSHF";
const FOREST_VERSION: u8 = 1;

/// Shape of the band layout: `b_max` trees of depth `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandLattice {
    b_max: usize,
    r_max: usize,
}

impl BandLattice {
    pub fn new(b_max: usize, r_max: usize) -> Result<Self> {
        if b_max == 0 || r_max == 0 {
            return Err(Error::invalid("lattice dimensions must be at least 1"));
        }
        Ok(BandLattice { b_max, r_max })
    }

    /// Lattice for signatures of length `num_perm` with bands of depth `r_max`.
    pub fn for_signature(num_perm: usize, r_max: usize) -> Result<Self> {
        if r_max == 0 || num_perm % r_max != 0 {
            return Err(Error::invalid(format!(
                "r_max {r_max} must divide the signature length {num_perm}"
            )));
        }
        BandLattice::new(num_perm / r_max, r_max)
    }

    pub fn b_max(&self) -> usize {
        self.b_max
    }

    pub fn r_max(&self) -> usize {
        self.r_max
    }

    pub fn num_perm(&self) -> usize {
        self.b_max * self.r_max
    }

    pub fn contains(&self, b: usize, r: usize) -> bool {
        (1..=self.b_max).contains(&b) && (1..=self.r_max).contains(&r)
    }

    /// All `(b, r)` pairs, `b` ascending then `r` ascending.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.b_max).flat_map(move |b| (1..=self.r_max).map(move |r| (b, r)))
    }

    pub fn len(&self) -> usize {
        self.b_max * self.r_max
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Tree {
    /// Sorted keys, `r_max` values each, flattened.
    keys: Vec<u64>,
    /// Local domain index of each key.
    ids: Vec<u32>,
    /// First value of each key, kept contiguous for the initial search.
    heads: Vec<u64>,
    /// Every `FENCE_STRIDE`-th head, small enough to stay in cache.
    fences: Vec<u64>,
}

const FENCE_STRIDE: usize = 16;

impl Tree {
    fn new(keys: Vec<u64>, ids: Vec<u32>, r_max: usize) -> Self {
        let heads: Vec<u64> = keys.iter().step_by(r_max).copied().collect();
        let fences = heads.iter().step_by(FENCE_STRIDE).copied().collect();
        Tree { keys, ids, heads, fences }
    }

    /// Range of keys whose first `prefix.len()` values equal `prefix`.
    fn matching(&self, prefix: &[u64], r_max: usize) -> std::ops::Range<usize> {
        let head = prefix[0];
        // The first head >= `head` lies in the block before the first fence >= `head`.
        let j = self.fences.partition_point(|&f| f < head);
        let start = j.saturating_sub(1) * FENCE_STRIDE;
        let end = (j * FENCE_STRIDE).min(self.heads.len());
        let lo = start + self.heads[start..end].partition_point(|&h| h < head);
        let hi = lo + gallop(&self.heads[lo..], |&h| h == head);
        if prefix.len() == 1 || lo == hi {
            return lo..hi;
        }
        let r = prefix.len();
        let key = |k: usize| &self.keys[k * r_max + 1..k * r_max + r];
        let rest = &prefix[1..];
        let start = lo + partition_point(hi - lo, |k| key(lo + k) < rest);
        let end = start + partition_point(hi - start, |k| key(start + k) == rest);
        start..end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    Building { rows: Vec<u64> },
    Frozen { trees: Vec<Tree> },
}

/// LSH Forest over a fixed band lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForestIndex {
    lattice: BandLattice,
    ids: Vec<String>,
    state: State,
}

impl ForestIndex {
    pub fn new(lattice: BandLattice) -> Self {
        ForestIndex {
            lattice,
            ids: Vec::new(),
            state: State::Building { rows: Vec::new() },
        }
    }

    pub fn lattice(&self) -> BandLattice {
        self.lattice
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self.state, State::Frozen { .. })
    }

    /// Identifier stored under a local index returned by [`ForestIndex::query`].
    pub fn id(&self, local: u32) -> &str {
        &self.ids[local as usize]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Adds a signature. Duplicate ids are detected at [`ForestIndex::freeze`]
    /// time only when `check_duplicates` is skipped; this call checks eagerly.
    pub fn insert(&mut self, id: impl Into<String>, sig: &MinHashSignature) -> Result<u32> {
        let id = id.into();
        if self.ids.iter().any(|existing| *existing == id) {
            return Err(Error::DuplicateId(id));
        }
        self.insert_unchecked(id, sig.mins())
    }

    /// Adds a signature without the duplicate-id scan; callers guarantee uniqueness.
    pub(crate) fn insert_unchecked(&mut self, id: String, mins: &[u64]) -> Result<u32> {
        let State::Building { rows } = &mut self.state else {
            return Err(Error::Lifecycle("insert into a frozen index"));
        };
        if mins.len() != self.lattice.num_perm() {
            return Err(Error::invalid(format!(
                "signature length {} does not match lattice {}x{}",
                mins.len(),
                self.lattice.b_max,
                self.lattice.r_max
            )));
        }
        if self.ids.len() >= u32::MAX as usize {
            return Err(Error::invalid("forest is full"));
        }
        rows.extend_from_slice(mins);
        self.ids.push(id);
        Ok(self.ids.len() as u32 - 1)
    }

    /// Sorts every tree; the index becomes read-only and queryable.
    pub fn freeze(&mut self) -> Result<()> {
        let State::Building { rows } = &mut self.state else {
            return Err(Error::Lifecycle("index already frozen"));
        };
        let rows = std::mem::take(rows);
        let (m, r_max, n) = (self.lattice.num_perm(), self.lattice.r_max, self.ids.len());
        let trees = (0..self.lattice.b_max)
            .map(|t| {
                let band = |i: u32| {
                    let start = i as usize * m + t * r_max;
                    &rows[start..start + r_max]
                };
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_unstable_by(|&a, &b| band(a).cmp(band(b)).then(a.cmp(&b)));
                let mut keys = Vec::with_capacity(n * r_max);
                for &i in &order {
                    keys.extend_from_slice(band(i));
                }
                Tree::new(keys, order, r_max)
            })
            .collect();
        self.state = State::Frozen { trees };
        Ok(())
    }

    /// Local indices of every domain whose band `i < b` agrees with the
    /// query's band `i` on the first `r` values. Sorted, without duplicates.
    pub fn query(&self, mins: &[u64], b: usize, r: usize) -> Result<Vec<u32>> {
        let State::Frozen { trees } = &self.state else {
            return Err(Error::Lifecycle("query before freeze"));
        };
        if !self.lattice.contains(b, r) {
            return Err(Error::invalid(format!(
                "(b, r) = ({b}, {r}) outside lattice {}x{}",
                self.lattice.b_max, self.lattice.r_max
            )));
        }
        if mins.len() != self.lattice.num_perm() {
            return Err(Error::invalid(format!(
                "query signature length {} does not match index {}",
                mins.len(),
                self.lattice.num_perm()
            )));
        }
        let r_max = self.lattice.r_max;
        let mut out = Vec::new();
        for (t, tree) in trees.iter().take(b).enumerate() {
            let range = tree.matching(&mins[t * r_max..t * r_max + r], r_max);
            out.extend_from_slice(&tree.ids[range]);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn query_signature(&self, sig: &MinHashSignature, b: usize, r: usize) -> Result<Vec<u32>> {
        self.query(sig.mins(), b, r)
    }

    /// Snapshot: magic, version, `b_max`, `r_max`, count, ids, then per tree
    /// `count` records of `r_max` u64 keys followed by a u32 local id.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let State::Frozen { trees } = &self.state else {
            return Err(Error::Lifecycle("only frozen indexes can be saved"));
        };
        let r_max = self.lattice.r_max;
        let mut out = Vec::new();
        out.extend_from_slice(FOREST_MAGIC);
        out.push(FOREST_VERSION);
        put_u32(&mut out, self.lattice.b_max as u32);
        put_u32(&mut out, r_max as u32);
        put_u32(&mut out, self.ids.len() as u32);
        for id in &self.ids {
            put_bytes(&mut out, id.as_bytes());
        }
        for tree in trees {
            for (k, &id) in tree.ids.iter().enumerate() {
                for &v in &tree.keys[k * r_max..(k + 1) * r_max] {
                    put_u64(&mut out, v);
                }
                put_u32(&mut out, id);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.expect_magic(FOREST_MAGIC, "forest snapshot")?;
        let version = rd.u8()?;
        if version != FOREST_VERSION {
            return Err(Error::parse(format!(
                "forest snapshot: unsupported version {version}"
            )));
        }
        let lattice = BandLattice::new(rd.u32()? as usize, rd.u32()? as usize)
            .map_err(|e| Error::parse(e.to_string()))?;
        let n = rd.u32()? as usize;
        let ids = (0..n)
            .map(|_| {
                let raw = rd.bytes()?;
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::parse("forest snapshot: id is not UTF-8"))
            })
            .collect::<Result<Vec<_>>>()?;
        let r_max = lattice.r_max;
        let mut trees = Vec::with_capacity(lattice.b_max);
        for _ in 0..lattice.b_max {
            let mut keys = Vec::with_capacity(n * r_max);
            let mut tids = Vec::with_capacity(n);
            for _ in 0..n {
                for _ in 0..r_max {
                    keys.push(rd.u64()?);
                }
                let id = rd.u32()?;
                if id as usize >= n {
                    return Err(Error::parse("forest snapshot: local id out of range"));
                }
                tids.push(id);
            }
            trees.push(Tree::new(keys, tids, r_max));
        }
        rd.finish()?;
        Ok(ForestIndex {
            lattice,
            ids,
            state: State::Frozen { trees },
        })
    }
}

/// First index in `0..n` for which `pred` is false, given `pred` is true on a prefix.
/// `partition_point` for predicates that usually fail early: probes
/// exponentially growing offsets before bisecting.
fn gallop<T>(items: &[T], pred: impl Fn(&T) -> bool) -> usize {
    let mut bound = 1;
    while bound < items.len() && pred(&items[bound]) {
        bound *= 2;
    }
    let lo = bound / 2;
    let hi = (bound + 1).min(items.len());
    lo + items[lo..hi].partition_point(pred)
}

fn partition_point(n: usize, mut pred: impl FnMut(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minhash::{HashFamily, MERSENNE_61};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Naive banding: every domain, every band, direct slice comparison.
    fn naive(rows: &[Vec<u64>], q: &[u64], b: usize, r: usize, r_max: usize) -> Vec<u32> {
        rows.iter()
            .enumerate()
            .filter(|(_, row)| {
                (0..b).any(|i| row[i * r_max..i * r_max + r] == q[i * r_max..i * r_max + r])
            })
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Signatures over a small alphabet so bands collide often.
    fn clustered_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<u64>> {
        (0..n).map(|_| (0..m).map(|_| rng.gen_range(0..3)).collect()).collect()
    }

    fn build(rows: &[Vec<u64>], lattice: BandLattice) -> ForestIndex {
        let mut f = ForestIndex::new(lattice);
        for (i, row) in rows.iter().enumerate() {
            f.insert(format!("d{i}"), &MinHashSignature::from_parts(0, row.clone()).unwrap())
                .unwrap();
        }
        f.freeze().unwrap();
        f
    }

    #[test]
    fn lattice_shape() {
        let l = BandLattice::for_signature(256, 4).unwrap();
        assert_eq!((l.b_max(), l.r_max()), (64, 4));
        assert_eq!(l.points().count(), 256);
        assert_eq!(l.points().next(), Some((1, 1)));
        assert!(BandLattice::for_signature(256, 3).is_err());
    }

    #[test]
    fn lifecycle() {
        let lattice = BandLattice::new(4, 2).unwrap();
        let mut f = ForestIndex::new(lattice);
        let sig = MinHashSignature::from_parts(0, vec![1; 8]).unwrap();
        f.insert("a", &sig).unwrap();
        assert!(matches!(f.query(sig.mins(), 1, 1), Err(Error::Lifecycle(_))));
        f.freeze().unwrap();
        assert!(matches!(f.freeze(), Err(Error::Lifecycle(_))));
        assert!(f.insert("b", &sig).is_err());
        assert_eq!(f.query(sig.mins(), 4, 2).unwrap(), vec![0]);
    }

    #[test]
    fn empty_forest_is_queryable() {
        let mut f = ForestIndex::new(BandLattice::new(4, 2).unwrap());
        f.freeze().unwrap();
        assert!(f.query(&[0; 8], 4, 2).unwrap().is_empty());
    }

    #[test]
    fn insert_errors() {
        let mut f = ForestIndex::new(BandLattice::new(4, 2).unwrap());
        let sig = MinHashSignature::from_parts(0, vec![1; 8]).unwrap();
        f.insert("a", &sig).unwrap();
        assert!(matches!(f.insert("a", &sig), Err(Error::DuplicateId(_))));
        let short = MinHashSignature::from_parts(0, vec![1; 6]).unwrap();
        assert!(f.insert("b", &short).is_err());
    }

    #[test]
    fn out_of_lattice_rejected() {
        let mut f = ForestIndex::new(BandLattice::new(4, 2).unwrap());
        f.freeze().unwrap();
        assert!(f.query(&[0; 8], 5, 1).is_err());
        assert!(f.query(&[0; 8], 1, 3).is_err());
        assert!(f.query(&[0; 8], 0, 1).is_err());
    }

    #[test]
    fn self_match_everywhere_and_twins_together() {
        let fam = HashFamily::new(32, 1).unwrap();
        let lattice = BandLattice::for_signature(32, 4).unwrap();
        let mut f = ForestIndex::new(lattice);
        let a = fam.signature(["x", "y", "z"]).unwrap();
        let b = fam.signature(["p", "q"]).unwrap();
        f.insert("a", &a).unwrap();
        f.insert("a-twin", &a).unwrap();
        f.insert("b", &b).unwrap();
        f.freeze().unwrap();
        for (bb, r) in lattice.points() {
            let hits = f.query_signature(&a, bb, r).unwrap();
            assert!(hits.contains(&0) && hits.contains(&1));
            assert!(!hits.contains(&2));
        }
    }

    #[test]
    fn equals_naive_banding_on_every_lattice_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lattice = BandLattice::new(8, 4).unwrap();
        let rows = clustered_rows(&mut rng, 200, 32);
        let f = build(&rows, lattice);
        for _ in 0..20 {
            let q: Vec<u64> = (0..32).map(|_| rng.gen_range(0..3)).collect();
            for (b, r) in lattice.points() {
                assert_eq!(f.query(&q, b, r).unwrap(), naive(&rows, &q, b, r, 4));
            }
        }
    }

    #[test]
    fn candidate_rate_matches_banding_curve() {
        // Pairs with known Jaccard s: shared core plus private values.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lattice = BandLattice::for_signature(256, 4).unwrap();
        let (b, r) = (8, 2);
        let (shared, private) = (30usize, 20usize);
        let s = shared as f64 / (shared + 2 * private) as f64;
        let expect = 1.0 - (1.0 - s.powi(r as i32)).powi(b as i32);
        let trials = 600;
        let mut hits = 0;
        for t in 0..trials {
            let fam = HashFamily::new(256, t).unwrap();
            let core: Vec<String> = (0..shared).map(|_| format!("c{}", rng.gen::<u64>())).collect();
            let xa: Vec<String> = core.iter().cloned().chain((0..private).map(|i| format!("a{t}.{i}"))).collect();
            let xb: Vec<String> = core.iter().cloned().chain((0..private).map(|i| format!("b{t}.{i}"))).collect();
            let mut f = ForestIndex::new(lattice);
            f.insert("x", &fam.signature(xa).unwrap()).unwrap();
            f.freeze().unwrap();
            if !f.query_signature(&fam.signature(xb).unwrap(), b, r).unwrap().is_empty() {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!((rate - expect).abs() <= 0.05, "rate {rate} expected {expect}");
    }

    #[test]
    fn snapshot_round_trip_and_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lattice = BandLattice::new(4, 2).unwrap();
        let rows = clustered_rows(&mut rng, 50, 8);
        let f = build(&rows, lattice);
        let bytes = f.to_bytes().unwrap();
        let back = ForestIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert!(ForestIndex::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"LSHE");
        assert!(matches!(ForestIndex::from_bytes(&bad), Err(Error::Parse(_))));
        assert!(ForestIndex::new(lattice).to_bytes().is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_b_and_r(seed: u64, qseed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lattice = BandLattice::new(6, 3).unwrap();
            let rows = clustered_rows(&mut rng, 60, 18);
            let f = build(&rows, lattice);
            let mut qr = ChaCha8Rng::seed_from_u64(qseed);
            let q: Vec<u64> = (0..18).map(|_| qr.gen_range(0..3)).collect();
            for (b, r) in lattice.points() {
                let base = f.query(&q, b, r).unwrap();
                if b < 6 {
                    let more = f.query(&q, b + 1, r).unwrap();
                    prop_assert!(base.iter().all(|x| more.contains(x)));
                }
                if r < 3 {
                    let deeper = f.query(&q, b, r + 1).unwrap();
                    prop_assert!(deeper.iter().all(|x| base.contains(x)));
                }
            }
        }

        #[test]
        fn oracle_equivalence_random_values(seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lattice = BandLattice::new(4, 4).unwrap();
            let rows: Vec<Vec<u64>> = (0..40)
                .map(|_| (0..16).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0..2) } else { rng.gen_range(0..MERSENNE_61) }).collect())
                .collect();
            let f = build(&rows, lattice);
            let q = rows[rng.gen_range(0..rows.len())].iter().map(|&v| if rng.gen_bool(0.3) { 1 } else { v }).collect::<Vec<_>>();
            for (b, r) in lattice.points() {
                prop_assert_eq!(f.query(&q, b, r).unwrap(), naive(&rows, &q, b, r, 4));
            }
        }
    }
}
