use crate::corpus::Sentence;
use crate::error::Result;
use crate::neurallm::{NeuralConfig, NeuralLM};
use crate::ngram::{NGramModel, DEFAULT_ALPHA, DEFAULT_ORDER};

/// A curator's matched (n-gram, neural) language-model pair: the unit that gets merged.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub ngram: NGramModel,
    pub neural: NeuralLM,
}

/// Local training recipe shared by every curator.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub order: usize,
    pub alpha: f64,
    pub neural: NeuralConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { order: DEFAULT_ORDER, alpha: DEFAULT_ALPHA, neural: NeuralConfig::default() }
    }
}

impl ModelPair {
    pub fn new(ngram: NGramModel, neural: NeuralLM) -> Self {
        Self { ngram, neural }
    }

    /// Trains both halves on `train`; `val` selects the neural epoch.
    pub fn train(train: &[Sentence], val: &[Sentence], vocab_size: usize, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            ngram: NGramModel::train(train, cfg.order, vocab_size, cfg.alpha)?,
            neural: NeuralLM::train(train, val, vocab_size, &cfg.neural)?,
        })
    }
}
