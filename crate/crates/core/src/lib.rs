//! Unification of heterogeneous human-feedback datasets into a single
//! binary-preference corpus, quality/diversity subset selection, training
//! file emission, and bias/accuracy scoring of model outputs.
//!
//! The crate is organized along the pipeline's stages:
//!
//! - [`corpus`]: parse and validate the two input shapes (multi-label
//!   conversation trees, binary-choice sentences) and link prompts with
//!   their responses;
//! - [`unify`]: binarize label scores, expand both shapes into ±1 examples
//!   or preference pairs, and take their deduplicated union;
//! - [`select`]: best-vs-worst pairing, margin ranking, seeded k-means++
//!   over prompt embeddings, and cluster-even diversity sampling;
//! - [`embed`]: embeddings from a JSONL file or an HTTP provider;
//! - [`emit`]: prompt/response templates and SFT / preference JSONL output;
//! - [`evaluate`]: base-2 entropy bias metric and first-line generative
//!   accuracy;
//! - [`probe`]: a linear pairwise reward model confirming the curated data
//!   carries learnable signal.
//!
//! All randomized steps draw from the portable [`rng::SplitMix64`]
//! generator, and anything that writes files does so with a fixed key and
//! record order, so identical inputs and seeds reproduce identical bytes.

pub mod corpus;
pub mod embed;
pub mod emit;
pub mod error;
pub mod evaluate;
pub mod probe;
pub mod rng;
pub mod select;
pub mod unify;

pub use corpus::{ChoicePairRecord, MultiLabelRecord, PromptWithResponses, Role};
pub use embed::{EmbeddingMap, EmbeddingProviderConfig, EmbeddingVector, HttpProviderConfig};
pub use error::{Error, Result};
pub use evaluate::{BiasEvalItem, EvalReport, GenEvalItem};
pub use probe::{LinearRewardModel, TrainParams};
pub use select::{ClusterModel, SelectionReport};
pub use unify::{
    AxisSpec, CutoffScope, CutoffStrategy, LabeledExample, Polarity, PreferencePair, Source,
};
