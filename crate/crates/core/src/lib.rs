//! Corpus quality filtering with a shallow n-gram classifier and a
//! Pareto-distributed stochastic threshold, plus the measurement tools around
//! it: sweeps over the permissivity parameter, domain-composition probes,
//! aggregation of downstream evaluation results, and a synthetic lab that
//! shows how filtering too hard on a proxy score backfires.

pub mod aggregate;
pub mod classifier;
pub mod corpus_io;
pub mod error;
pub mod features;
pub mod filter;
pub mod probe;
pub mod rng;
pub mod synth;

pub use classifier::{evaluate, load_model, save_model, train, LinearModel, TrainConfig};
pub use corpus_io::{read_documents, write_chunks, ChunkManifest, Document, InputFormat};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureVector};
pub use filter::{FilterPolicy, FilterStats, Scorer, SweepReport};
