//! Comparison methods: the Direct Average of the sources, fine-tuning of that
//! average on pooled validation text, and a centrally trained reference.

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::ngram::NGramModel;
use crate::pair::{ModelPair, TrainConfig};
use crate::rmma::MergeWeights;

/// Equal-weight merge of both halves with no perturbations. This is the same
/// code path RMMA starts every episode from.
pub fn direct_average(sources: &[ModelPair]) -> Result<ModelPair> {
    if sources.len() < 2 {
        return Err(Error::InvalidPopulation(format!(
            "direct average needs at least 2 sources, got {}",
            sources.len()
        )));
    }
    MergeWeights::uniform(sources.len()).merge(sources)
}

#[derive(Debug, Clone)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the pooled counts added to the n-gram half.
    pub count_weight: f64,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self { epochs: 2, learning_rate: 0.05, count_weight: 1.0, seed: 0 }
    }
}

/// Continues neural training from `start` on `pooled` (keeping the epoch with
/// the lowest cross-entropy on it) and adds `count_weight` times the pooled
/// n-gram counts.
pub fn fine_tune(start: &ModelPair, pooled: &[Sentence], cfg: &FineTuneConfig) -> Result<ModelPair> {
    if pooled.is_empty() {
        return Err(Error::InsufficientData("fine-tuning needs pooled text".into()));
    }
    let counts = NGramModel::train(pooled, start.ngram.order(), start.ngram.vocab_size(), start.ngram.alpha())?;
    let ngram = start.ngram.add_scaled(&counts, cfg.count_weight)?;
    let neural = start.neural.train_further(pooled, &[], cfg.epochs, cfg.learning_rate, cfg.seed)?;
    Ok(ModelPair::new(ngram, neural))
}

/// One pair trained with the local recipe on the union of every curator's
/// training split (validation splits pooled likewise).
pub fn centralized_reference(
    train_splits: &[&[Sentence]],
    val_splits: &[&[Sentence]],
    vocab_size: usize,
    cfg: &TrainConfig,
) -> Result<ModelPair> {
    let train: Vec<Sentence> = train_splits.iter().flat_map(|s| s.iter().cloned()).collect();
    let val: Vec<Sentence> = val_splits.iter().flat_map(|s| s.iter().cloned()).collect();
    ModelPair::train(&train, &val, vocab_size, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsim::{simulate_channel, ChannelParams, Evaluator};
    use crate::neurallm::NeuralConfig;
    use crate::rmma::{new_policy, run_rmma_episode, Mode, RmmaConfig};

    fn cfg() -> TrainConfig {
        TrainConfig {
            neural: NeuralConfig { embed: 3, hidden: 4, epochs: 2, learning_rate: 0.1, seed: 4 },
            ..Default::default()
        }
    }

    fn data() -> Vec<Vec<Sentence>> {
        vec![
            vec![vec![3, 4, 5, 3], vec![4, 4, 5], vec![5, 3, 4, 4]],
            vec![vec![6, 7, 6], vec![7, 7, 3, 6], vec![6, 3]],
            vec![vec![3, 6, 4, 7], vec![5, 5, 6], vec![4, 7, 7]],
        ]
    }

    fn sources() -> Vec<ModelPair> {
        data().iter().map(|d| ModelPair::train(d, d, 8, &cfg()).unwrap()).collect()
    }

    #[test]
    fn average_of_identical_pairs_is_the_pair() {
        let p = sources().remove(0);
        let avg = direct_average(&[p.clone(), p.clone(), p.clone()]).unwrap();
        for (a, b) in avg.neural.params().iter().zip(p.neural.params()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        for (h, t, c) in p.ngram.entries() {
            assert!((avg.ngram.count(h, t) - c).abs() <= 1e-12 * c);
        }
    }

    #[test]
    fn average_of_two_is_entrywise_mean() {
        let src = sources();
        let avg = direct_average(&src[..2]).unwrap();
        for ((m, a), b) in avg.neural.params().iter().zip(src[0].neural.params()).zip(src[1].neural.params()) {
            assert!((m - (a + b) / 2.0).abs() < 1e-15);
        }
        for (h, t, c) in avg.ngram.entries() {
            let mean = (src[0].ngram.count(h, t) + src[1].ngram.count(h, t)) / 2.0;
            assert!((c - mean).abs() < 1e-12);
        }
        assert!(direct_average(&src[..1]).is_err());
    }

    #[test]
    fn average_ignores_source_order() {
        let src = sources();
        let a = direct_average(&src).unwrap();
        let b = direct_average(&[src[2].clone(), src[0].clone(), src[1].clone()]).unwrap();
        for (x, y) in a.neural.params().iter().zip(b.neural.params()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.ngram.num_entries(), b.ngram.num_entries());
        for (h, t, c) in a.ngram.entries() {
            assert!((b.ngram.count(h, t) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn average_equals_zero_step_agent() {
        let src = sources();
        let refs: Vec<Sentence> = data().concat();
        let set = simulate_channel(&refs, 8, &ChannelParams { n_best: 4, ..Default::default() }, 1).unwrap();
        let ev = Evaluator::new(set, 1.0, 1.0);
        let rc = RmmaConfig { t_max: 0, hidden: 4, ..Default::default() };
        let out = run_rmma_episode(&src, &new_policy(3, &rc), &rc, &ev, Mode::Greedy).unwrap();
        assert_eq!(out.best, direct_average(&src).unwrap());
    }

    #[test]
    fn fine_tune_no_op_and_count_addition() {
        let src = sources();
        let start = direct_average(&src).unwrap();
        let pooled = data()[0].clone();
        let same =
            fine_tune(&start, &pooled, &FineTuneConfig { epochs: 0, count_weight: 0.0, ..Default::default() }).unwrap();
        assert_eq!(same, start);

        let tuned = fine_tune(&start, &pooled, &FineTuneConfig { epochs: 3, learning_rate: 0.1, ..Default::default() })
            .unwrap();
        assert!(tuned.neural.cross_entropy(&pooled) <= start.neural.cross_entropy(&pooled));
        let counts = NGramModel::train(&pooled, 3, 8, start.ngram.alpha()).unwrap();
        for (h, t, c) in tuned.ngram.entries() {
            let expect = start.ngram.count(h, t) + counts.count(h, t);
            assert!((c - expect).abs() < 1e-12);
        }
        assert!(fine_tune(&start, &[], &FineTuneConfig::default()).is_err());
    }

    #[test]
    fn reference_of_one_curator_is_its_source() {
        let d = data();
        let one = centralized_reference(&[&d[0]], &[&d[0]], 8, &cfg()).unwrap();
        assert_eq!(one, sources()[0]);
    }
}
