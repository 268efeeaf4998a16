//! Federated merging of heterogeneous language-model pairs.
//!
//! Each curator trains a pair made of a sparse character n-gram model and a
//! small recurrent neural LM on private text. The crate merges several such
//! pairs into one target pair, either by evolving both model families as
//! separate populations ([`gmma`]) or with an actor-critic agent that steers
//! the constrained merge weights ([`rmma`]). Fitness is the character error
//! rate after rescoring synthetic N-best lists ([`evalsim`]).

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evalsim;
pub mod experiment;
pub mod gmma;
pub mod neurallm;
pub mod ngram;
pub mod pair;
pub mod rmma;
pub mod seeding;
pub mod simplex;

pub use error::{Error, Result};
pub use pair::{ModelPair, TrainConfig};
