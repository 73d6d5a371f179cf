//! Seeded synthetic corpora with power-law domain sizes and overlapping
//! values.
//!
//! Each domain draws its values from a topic pool. Pools come in geometric
//! size classes, and a domain of size `x` with density `rho` uses a pool of
//! about `x / rho` values, so domains sharing a topic overlap with
//! containment spread over roughly `[rho_min, 1]`. A small fraction of every
//! domain is replaced by globally popular values (Zipf distributed), which
//! produces the many weak overlaps seen between unrelated real columns.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::minhash::Domain;
use crate::partition::{sample_power_law, PowerLawModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_domains: usize,
    pub sizes: PowerLawModel,
    /// Smallest fraction of its pool a domain covers.
    pub density_min: f64,
    /// Ratio between consecutive pool size classes.
    pub class_ratio: f64,
    pub domains_per_topic: usize,
    /// Expected fraction of each domain's values taken from the popular vocabulary.
    pub background_rate: f64,
    pub background_vocab: usize,
    pub background_zipf: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults for everything except the size distribution and count.
    pub fn new(n_domains: usize, sizes: PowerLawModel, seed: u64) -> Self {
        SynthConfig {
            n_domains,
            sizes,
            density_min: 0.25,
            class_ratio: 1.25,
            domains_per_topic: 25,
            background_rate: 0.05,
            background_vocab: 1000,
            background_zipf: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_domains == 0 {
            return Err(Error::invalid("n_domains must be at least 1"));
        }
        if !(self.density_min > 0.0 && self.density_min <= 1.0) {
            return Err(Error::invalid("density_min must lie in (0, 1]"));
        }
        if !(self.class_ratio > 1.0) {
            return Err(Error::invalid("class_ratio must exceed 1"));
        }
        if self.domains_per_topic == 0 {
            return Err(Error::invalid("domains_per_topic must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.background_rate) || self.background_vocab == 0 {
            return Err(Error::invalid("background_rate must lie in [0, 1) with a nonempty vocabulary"));
        }
        Ok(())
    }
}

struct Plan {
    size: usize,
    class: i32,
    topic: usize,
}

/// Generates `config.n_domains` domains with ids `syn-000000`, `syn-000001`, ...
pub fn generate(config: &SynthConfig) -> Result<Vec<Domain>> {
    config.validate()?;
    let sizes = sample_power_law(&config.sizes, config.n_domains, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let ln_ratio = config.class_ratio.ln();

    let mut plans: Vec<Plan> = sizes
        .iter()
        .map(|&x| {
            let rho = rng.gen_range(config.density_min..=1.0);
            let pool = x as f64 / rho;
            Plan {
                size: x as usize,
                class: (pool.ln() / ln_ratio).ceil() as i32,
                topic: 0,
            }
        })
        .collect();

    // Shuffle the members of every class into topics of equal size.
    let mut by_class: std::collections::BTreeMap<i32, Vec<usize>> = Default::default();
    for (i, p) in plans.iter().enumerate() {
        by_class.entry(p.class).or_default().push(i);
    }
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let topics = members.len().div_ceil(config.domains_per_topic);
        for (k, &i) in members.iter().enumerate() {
            plans[i].topic = k % topics;
        }
    }

    let weights: Vec<f64> = (1..=config.background_vocab)
        .map(|k| (k as f64).powf(-config.background_zipf))
        .collect();
    let popular = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;

    plans
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pool = (config.class_ratio.powi(p.class)).ceil().max(p.size as f64) as usize;
            let cap = config.background_vocab / 2;
            let n_bg = (0..p.size)
                .filter(|_| rng.gen_bool(config.background_rate))
                .count()
                .min(cap);
            let mut values: Vec<String> = Vec::with_capacity(p.size);
            let mut taken = HashSet::with_capacity(n_bg);
            while values.len() < n_bg {
                let rank = popular.sample(&mut rng);
                if taken.insert(rank) {
                    values.push(format!("bg:{rank}"));
                }
            }
            values.extend(
                index::sample(&mut rng, pool, p.size - n_bg)
                    .into_iter()
                    .map(|v| format!("t{}.{}:{v}", p.class, p.topic)),
            );
            Domain::new(format!("syn-{i:06}"), values)
        })
        .collect()
}
