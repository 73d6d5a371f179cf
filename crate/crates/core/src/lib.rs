//! Containment similarity search over large collections of sets.
//!
//! Domains are summarized by MinHash signatures, partitioned by size, and
//! indexed in one LSH Forest per partition. Each partition is queried with
//! banding parameters tuned for its own size range so that a containment
//! threshold can be answered with a Jaccard index.

pub mod error;

mod codec;

pub mod baselines;
pub mod containment;
pub mod corpus;
pub mod ensemble;
pub mod eval;
pub mod forest;
pub mod minhash;
pub mod partition;
pub mod synth;
pub mod tuner;

pub use error::{Error, Result};
pub use minhash::{Domain, HashFamily, MinHashSignature, SignatureBuilder};
pub use ensemble::{Ensemble, EnsembleConfig, IndexKind, QueryResult, SignedCorpus};
pub use forest::{BandLattice, ForestIndex};
pub use tuner::{TuningParams, TuningTable};
