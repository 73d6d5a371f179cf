//! MinHash signatures over domains of opaque byte-string values.
//!
//! Every value is reduced to one 64-bit base hash (xxh3, seeded), which is then
//! pushed through `num_perm` affine maps `h_i(v) = (a_i * base(v) + b_i) mod p`
//! with `p = 2^61 - 1`. The coefficients come from a ChaCha stream seeded with
//! the signature seed, so signatures are reproducible across runs and platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::codec::{put_u32, put_u64, Reader};
use crate::error::{Error, Result};

/// The Mersenne prime `2^61 - 1`; every hash value lies in `[0, MERSENNE_61)`.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Default signature length.
pub const DEFAULT_NUM_PERM: usize = 256;

const SIGNATURE_MAGIC: &[u8; 4] = b"LSHE";
const SIGNATURE_VERSION: u8 = 1;

/// A set of distinct values taken from one column, with an identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    id: String,
    values: Vec<Vec<u8>>,
}

impl Domain {
    /// Builds a domain, dropping duplicate values. Fails on an empty value set.
    pub fn new<I, V>(id: impl Into<String>, values: I) -> Result<Self>
    where
        I: IntoIterator<Item = V>,
        V: Into<Vec<u8>>,
    {
        let id = id.into();
        let mut values: Vec<Vec<u8>> = values.into_iter().map(Into::into).collect();
        values.sort_unstable();
        values.dedup();
        if values.is_empty() {
            return Err(Error::EmptyDomain(id));
        }
        Ok(Domain { id, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Distinct values in byte order.
    pub fn values(&self) -> &[Vec<u8>] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_parts(self) -> (String, Vec<Vec<u8>>) {
        (self.id, self.values)
    }
}

#[inline]
fn mod_mersenne(x: u128) -> u64 {
    let folded = (x & MERSENNE_61 as u128) + (x >> 61);
    let folded = (folded & MERSENNE_61 as u128) as u64 + (folded >> 61) as u64;
    if folded >= MERSENNE_61 {
        folded - MERSENNE_61
    } else {
        folded
    }
}

/// The `num_perm` affine hash functions derived from one seed.
#[derive(Debug, Clone)]
pub struct HashFamily {
    seed: u64,
    coeffs: Vec<(u64, u64)>,
}

impl HashFamily {
    pub fn new(num_perm: usize, seed: u64) -> Result<Self> {
        if num_perm == 0 {
            return Err(Error::invalid("num_perm must be at least 1"));
        }
        if num_perm > u32::MAX as usize {
            return Err(Error::invalid("num_perm does not fit in 32 bits"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..num_perm)
            .map(|_| (rng.gen_range(1..MERSENNE_61), rng.gen_range(0..MERSENNE_61)))
            .collect();
        Ok(HashFamily { seed, coeffs })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_perm(&self) -> usize {
        self.coeffs.len()
    }

    /// Base hash of a value, already reduced into the prime field.
    #[inline]
    pub fn base_hash(&self, value: &[u8]) -> u64 {
        xxh3_64_with_seed(value, self.seed) % MERSENNE_61
    }

    /// Value of hash function `i` on a value.
    pub fn hash(&self, i: usize, value: &[u8]) -> u64 {
        let (a, b) = self.coeffs[i];
        mod_mersenne(a as u128 * self.base_hash(value) as u128 + b as u128)
    }

    /// Folds one value into a running minimum vector.
    #[inline]
    pub fn update(&self, mins: &mut [u64], value: &[u8]) {
        debug_assert_eq!(mins.len(), self.coeffs.len());
        let x = self.base_hash(value) as u128;
        for (slot, &(a, b)) in mins.iter_mut().zip(&self.coeffs) {
            let h = mod_mersenne(a as u128 * x + b as u128);
            if h < *slot {
                *slot = h;
            }
        }
    }

    /// An accumulator for streaming construction.
    pub fn builder(&self) -> SignatureBuilder<'_> {
        SignatureBuilder {
            family: self,
            mins: vec![u64::MAX; self.coeffs.len()],
            seen: 0,
        }
    }

    pub fn signature<I, V>(&self, values: I) -> Result<MinHashSignature>
    where
        I: IntoIterator<Item = V>,
        V: AsRef<[u8]>,
    {
        let mut builder = self.builder();
        for v in values {
            builder.push(v.as_ref());
        }
        builder.finish()
    }

    pub fn domain_signature(&self, domain: &Domain) -> Result<MinHashSignature> {
        self.signature(domain.values())
            .map_err(|_| Error::EmptyDomain(domain.id().to_string()))
    }
}

pub struct SignatureBuilder<'a> {
    family: &'a HashFamily,
    mins: Vec<u64>,
    seen: usize,
}

impl SignatureBuilder<'_> {
    pub fn push(&mut self, value: &[u8]) {
        self.family.update(&mut self.mins, value);
        self.seen += 1;
    }

    pub fn finish(self) -> Result<MinHashSignature> {
        if self.seen == 0 {
            return Err(Error::EmptyDomain(String::new()));
        }
        Ok(MinHashSignature {
            seed: self.family.seed,
            mins: self.mins,
        })
    }
}

/// `m` minimum hash values summarising one domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MinHashSignature {
    seed: u64,
    mins: Vec<u64>,
}

/// One-shot signature construction.
pub fn build_signature(domain: &Domain, num_perm: usize, seed: u64) -> Result<MinHashSignature> {
    HashFamily::new(num_perm, seed)?.domain_signature(domain)
}

impl MinHashSignature {
    /// Wraps raw minima. Every entry must be a valid field element.
    pub fn from_parts(seed: u64, mins: Vec<u64>) -> Result<Self> {
        if mins.is_empty() {
            return Err(Error::invalid("signature must have at least one entry"));
        }
        if mins.iter().any(|&v| v >= MERSENNE_61) {
            return Err(Error::invalid("signature entry outside the hash range"));
        }
        Ok(MinHashSignature { seed, mins })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_perm(&self) -> usize {
        self.mins.len()
    }

    pub fn mins(&self) -> &[u64] {
        &self.mins
    }

    pub fn check_compatible(&self, other: &MinHashSignature) -> Result<()> {
        if self.seed != other.seed || self.mins.len() != other.mins.len() {
            return Err(Error::Incompatible(format!(
                "seed {} / num_perm {} vs seed {} / num_perm {}",
                self.seed,
                self.mins.len(),
                other.seed,
                other.mins.len()
            )));
        }
        Ok(())
    }

    /// Fraction of positions where the two signatures agree.
    pub fn jaccard(&self, other: &MinHashSignature) -> Result<f64> {
        self.check_compatible(other)?;
        let equal = self
            .mins
            .iter()
            .zip(&other.mins)
            .filter(|(a, b)| a == b)
            .count();
        Ok(equal as f64 / self.mins.len() as f64)
    }

    /// Estimated number of distinct values behind the signature.
    ///
    /// Each minimum, scaled into `[0, 1)`, is the smallest of `|X|` uniform
    /// draws and has mean `1 / (|X| + 1)`; the estimate inverts the sample mean.
    /// Clamped below at one value.
    pub fn cardinality(&self) -> f64 {
        let mean = self
            .mins
            .iter()
            .map(|&v| v as f64 / MERSENNE_61 as f64)
            .sum::<f64>()
            / self.mins.len() as f64;
        if mean <= 0.0 {
            return f64::MAX;
        }
        (1.0 / mean - 1.0).max(1.0)
    }

    /// Signature of the union of the two underlying domains.
    pub fn merge(&self, other: &MinHashSignature) -> Result<MinHashSignature> {
        self.check_compatible(other)?;
        Ok(MinHashSignature {
            seed: self.seed,
            mins: self
                .mins
                .iter()
                .zip(&other.mins)
                .map(|(a, b)| *a.min(b))
                .collect(),
        })
    }

    /// `"LSHE"`, version byte, seed (u64 LE), num_perm (u32 LE), minima (u64 LE each).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 8 * self.mins.len());
        out.extend_from_slice(SIGNATURE_MAGIC);
        out.push(SIGNATURE_VERSION);
        put_u64(&mut out, self.seed);
        put_u32(&mut out, self.mins.len() as u32);
        for &v in &self.mins {
            put_u64(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(SIGNATURE_MAGIC, "signature")?;
        let version = r.u8()?;
        if version != SIGNATURE_VERSION {
            return Err(Error::parse(format!(
                "signature: unsupported version {version}"
            )));
        }
        let seed = r.u64()?;
        let num_perm = r.u32()? as usize;
        if num_perm == 0 {
            return Err(Error::parse("signature: zero num_perm"));
        }
        let raw = r.take(num_perm.checked_mul(8).ok_or_else(|| {
            Error::parse("signature: num_perm overflows")
        })?)?;
        r.finish()?;
        let mins = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        MinHashSignature::from_parts(seed, mins).map_err(|e| Error::parse(e.to_string()))
    }
}

pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    a.jaccard(b)
}

pub fn estimate_cardinality(sig: &MinHashSignature) -> f64 {
    sig.cardinality()
}

pub fn serialize_signature(sig: &MinHashSignature) -> Vec<u8> {
    sig.to_bytes()
}

pub fn deserialize_signature(bytes: &[u8]) -> Result<MinHashSignature> {
    MinHashSignature::from_bytes(bytes)
}
