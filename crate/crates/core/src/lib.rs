//! Privacy and quality auditing for synthetic tabular data.
//!
//! The central metric is the relative membership-inference score
//! ([`remia::remia_score`]): split a private table into two training sets that
//! share a common part, run the generator on both, train a discriminator to tell
//! the two synthetic outputs apart, and measure how well that discriminator
//! assigns the held-apart target records to their true source.
//!
//! Around it sit the distance-to-closest-record and density-ratio baselines
//! ([`baselines`]), fidelity/utility metrics ([`quality`]), and risk-model
//! generators with known leakage for validating the metrics ([`generators`]).

pub mod baselines;
pub mod discriminator;
pub mod generators;
pub mod quality;
pub mod remia;
pub mod stats;
pub mod tabular;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use discriminator::{MlpConfig, MlpState, ScoreTrace};
pub use generators::GeneratorSpec;
pub use remia::{RemiaConfig, RemiaResult};
pub use stats::ScoreSeries;
pub use tabular::{Cell, Column, ColumnKind, RemiaSplit, Schema, Table};

pub type Rng = ChaCha8Rng;

/// Deterministic RNG for a seed; stable across platforms and crate releases.
pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-seed for stream `stream` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Table(#[from] tabular::TableError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Train(#[from] discriminator::TrainError),
    #[error(transparent)]
    Generate(#[from] generators::GenerateError),
    #[error(transparent)]
    Baseline(#[from] baselines::BaselineError),
    #[error(transparent)]
    Quality(#[from] quality::QualityError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
