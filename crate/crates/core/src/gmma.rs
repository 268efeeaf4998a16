//! Genetic match-and-merge: n-gram and neural models evolve as two separate
//! populations with type-specific operators. The best members of each are
//! paired, and the `K` lowest-CER pairs survive.
//!
//! A model's rank within its own population is the best CER of any retained
//! pair it belongs to. Fresh offspring are ranked by a probe pairing with the
//! partner from the current best pair.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::evalsim::{Evaluator, ScoreTable};
use crate::neurallm::{NeuralLM, NUM_LAYERS};
use crate::ngram::NGramModel;
use crate::pair::ModelPair;
use crate::seeding::{self, streams, Rng};

#[derive(Debug, Clone)]
pub struct GmmaConfig {
    pub p_mutate: f64,
    pub p_crossover: f64,
    pub k: usize,
    pub max_generations: usize,
    /// Generations without an improvement larger than `min_improvement` before stopping.
    pub patience: usize,
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for GmmaConfig {
    fn default() -> Self {
        Self {
            p_mutate: 0.3,
            p_crossover: 0.5,
            k: 5,
            max_generations: 100,
            patience: 20,
            min_improvement: 1e-4,
            seed: 0,
        }
    }
}

impl GmmaConfig {
    pub fn validate(&self, num_sources: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mutate) || !(0.0..=1.0).contains(&self.p_crossover) {
            return Err(Error::Config("GMMA probabilities must lie in [0, 1]".into()));
        }
        if self.k == 0 || self.k > capacity(num_sources) {
            return Err(Error::Config(format!(
                "K = {} must be in [1, {}] for {num_sources} sources",
                self.k,
                capacity(num_sources)
            )));
        }
        Ok(())
    }
}

/// Upper bound on each sub-population: four times the source count.
pub fn capacity(num_sources: usize) -> usize {
    4 * num_sources
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub ngram: usize,
    pub neural: usize,
    pub cer: f64,
}

#[derive(Debug, Clone)]
struct Member<M> {
    id: u64,
    model: Arc<M>,
    scores: Arc<ScoreTable>,
}

#[derive(Debug, Clone)]
pub struct Population {
    ngrams: Vec<Member<NGramModel>>,
    neurals: Vec<Member<NeuralLM>>,
    pairs: Vec<ScoredPair>,
    num_sources: usize,
    next_id: u64,
}

impl Population {
    /// Pairs every source's n-gram with its own neural LM and evaluates them.
    pub fn from_sources(sources: &[ModelPair], evaluator: &Evaluator) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::InvalidPopulation("no source pairs".into()));
        }
        let scored: Vec<(Member<NGramModel>, Member<NeuralLM>)> = sources
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let ng = Member {
                    id: i as u64,
                    model: Arc::new(p.ngram.clone()),
                    scores: Arc::new(evaluator.score_ngram(&p.ngram)),
                };
                let nn = Member {
                    id: i as u64,
                    model: Arc::new(p.neural.clone()),
                    scores: Arc::new(evaluator.score_neural(&p.neural)),
                };
                (ng, nn)
            })
            .collect();
        let (ngrams, neurals): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
        let mut pairs: Vec<ScoredPair> = (0..sources.len())
            .map(|i| ScoredPair {
                ngram: i,
                neural: i,
                cer: evaluator.cer_from_scores(&ngrams[i].scores, &neurals[i].scores),
            })
            .collect();
        sort_pairs(&mut pairs, &ngrams, &neurals);
        Ok(Self { ngrams, neurals, pairs, num_sources: sources.len(), next_id: sources.len() as u64 })
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn ngrams(&self) -> Vec<&NGramModel> {
        self.ngrams.iter().map(|m| m.model.as_ref()).collect()
    }

    pub fn neurals(&self) -> Vec<&NeuralLM> {
        self.neurals.iter().map(|m| m.model.as_ref()).collect()
    }

    pub fn best(&self) -> &ScoredPair {
        &self.pairs[0]
    }

    /// Materializes the best pair.
    pub fn best_pair(&self) -> ModelPair {
        let b = self.best();
        ModelPair::new((*self.ngrams[b.ngram].model).clone(), (*self.neurals[b.neural].model).clone())
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id - 1
    }
}

fn sort_pairs(pairs: &mut [ScoredPair], ngrams: &[Member<NGramModel>], neurals: &[Member<NeuralLM>]) {
    pairs.sort_by(|a, b| {
        a.cer
            .total_cmp(&b.cer)
            .then(ngrams[a.ngram].id.cmp(&ngrams[b.ngram].id))
            .then(neurals[a.neural].id.cmp(&neurals[b.neural].id))
    });
}

/// Every model that took part in a generation, before selection.
#[derive(Debug, Clone)]
pub struct GenerationPool {
    pub ngrams: Vec<Arc<NGramModel>>,
    pub neurals: Vec<Arc<NeuralLM>>,
}

fn open_unit(rng: &mut Rng) -> f64 {
    loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            return x;
        }
    }
}

/// One generation: mutation, shuffled adjacent crossover, top-K pairing and
/// selection. `generation` (≥ 1) keys the random stream.
pub fn gmma_generation(
    pop: &Population,
    cfg: &GmmaConfig,
    evaluator: &Evaluator,
    generation: u64,
) -> Result<(Population, GenerationPool)> {
    if pop.ngrams.is_empty() || pop.neurals.is_empty() || pop.pairs.is_empty() {
        return Err(Error::InvalidPopulation("empty population".into()));
    }
    cfg.validate(pop.num_sources)?;
    let mut rng = seeding::stream(seeding::mix(cfg.seed, generation), streams::GMMA);
    let mut pop = pop.clone();
    let elite_ngrams = pop.ngrams.len();
    let elite_neurals = pop.neurals.len();
    let vocab = pop.ngrams[0].model.vocab_size() as TokenId;

    // Offspring, without scores yet.
    let mut new_ngrams: Vec<NGramModel> = Vec::new();
    let mut new_neurals: Vec<NeuralLM> = Vec::new();
    for i in 0..elite_ngrams {
        if rng.random_bool(cfg.p_mutate) {
            let j = rng.random_range(1..vocab);
            new_ngrams.push(pop.ngrams[i].model.mutate(j, open_unit(&mut rng))?);
        }
    }
    for i in 0..elite_neurals {
        if rng.random_bool(cfg.p_mutate) {
            new_neurals.push(pop.neurals[i].model.mutate(rng.random())?);
        }
    }

    let ng_all: Vec<&NGramModel> = pop.ngrams.iter().map(|m| m.model.as_ref()).chain(new_ngrams.iter()).collect();
    let mut order: Vec<usize> = (0..ng_all.len()).collect();
    order.shuffle(&mut rng);
    let mut crossed_ng = Vec::new();
    for w in order.windows(2) {
        if rng.random_bool(cfg.p_crossover) {
            let lambda = open_unit(&mut rng);
            crossed_ng.push(NGramModel::crossover(ng_all[w[0]], ng_all[w[1]], lambda)?);
        }
    }
    let nn_all: Vec<&NeuralLM> = pop.neurals.iter().map(|m| m.model.as_ref()).chain(new_neurals.iter()).collect();
    let mut order: Vec<usize> = (0..nn_all.len()).collect();
    order.shuffle(&mut rng);
    let mut crossed_nn = Vec::new();
    for w in order.windows(2) {
        if rng.random_bool(cfg.p_crossover) {
            let cut = rng.random_range(1..=NUM_LAYERS);
            let (c1, c2) = NeuralLM::crossover(nn_all[w[0]], nn_all[w[1]], cut)?;
            crossed_nn.push(c1);
            crossed_nn.push(c2);
        }
    }
    new_ngrams.extend(crossed_ng);
    new_neurals.extend(crossed_nn);

    let ng_scores: Vec<ScoreTable> = new_ngrams.par_iter().map(|m| evaluator.score_ngram(m)).collect();
    let nn_scores: Vec<ScoreTable> = new_neurals.par_iter().map(|m| evaluator.score_neural(m)).collect();
    for (m, s) in new_ngrams.into_iter().zip(ng_scores) {
        let id = pop.fresh_id();
        pop.ngrams.push(Member { id, model: Arc::new(m), scores: Arc::new(s) });
    }
    for (m, s) in new_neurals.into_iter().zip(nn_scores) {
        let id = pop.fresh_id();
        pop.neurals.push(Member { id, model: Arc::new(m), scores: Arc::new(s) });
    }
    let pool = GenerationPool {
        ngrams: pop.ngrams.iter().map(|m| m.model.clone()).collect(),
        neurals: pop.neurals.iter().map(|m| m.model.clone()).collect(),
    };

    // Known pair CERs, keyed by pool indices.
    let mut known: HashMap<(usize, usize), f64> = pop.pairs.iter().map(|p| ((p.ngram, p.neural), p.cer)).collect();
    let best = *pop.best();
    let probes: Vec<(usize, usize)> = (elite_ngrams..pop.ngrams.len())
        .map(|i| (i, best.neural))
        .chain((elite_neurals..pop.neurals.len()).map(|j| (best.ngram, j)))
        .collect();
    evaluate_missing(&pop, evaluator, &probes, &mut known);

    let rank = |n: usize, is_ngram: bool| -> f64 {
        known
            .iter()
            .filter(|(&(a, b), _)| if is_ngram { a == n } else { b == n })
            .map(|(_, &c)| c)
            .fold(f64::INFINITY, f64::min)
    };
    let cap = capacity(pop.num_sources);
    let mut ng_rank: Vec<(f64, u64, usize)> =
        (0..pop.ngrams.len()).map(|i| (rank(i, true), pop.ngrams[i].id, i)).collect();
    let mut nn_rank: Vec<(f64, u64, usize)> =
        (0..pop.neurals.len()).map(|j| (rank(j, false), pop.neurals[j].id, j)).collect();
    for r in [&mut ng_rank, &mut nn_rank] {
        r.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        r.truncate(cap);
    }
    let top_ng: Vec<usize> = ng_rank.iter().take(cfg.k).map(|r| r.2).collect();
    let top_nn: Vec<usize> = nn_rank.iter().take(cfg.k).map(|r| r.2).collect();
    let cartesian: Vec<(usize, usize)> = top_ng.iter().flat_map(|&a| top_nn.iter().map(move |&b| (a, b))).collect();
    evaluate_missing(&pop, evaluator, &cartesian, &mut known);

    // Selection over everything evaluated, restricted to models that survived eviction.
    let alive_ng: HashSet<usize> = ng_rank.iter().map(|r| r.2).collect();
    let alive_nn: HashSet<usize> = nn_rank.iter().map(|r| r.2).collect();
    let mut candidates: Vec<ScoredPair> = known
        .iter()
        .filter(|(&(a, b), _)| alive_ng.contains(&a) && alive_nn.contains(&b))
        .map(|(&(ngram, neural), &cer)| ScoredPair { ngram, neural, cer })
        .collect();
    sort_pairs(&mut candidates, &pop.ngrams, &pop.neurals);
    candidates.truncate(cfg.k);

    Ok((reindex(pop, candidates), pool))
}

fn evaluate_missing(
    pop: &Population,
    evaluator: &Evaluator,
    wanted: &[(usize, usize)],
    known: &mut HashMap<(usize, usize), f64>,
) {
    let mut todo: Vec<(usize, usize)> = wanted.iter().copied().filter(|k| !known.contains_key(k)).collect();
    todo.sort_unstable();
    todo.dedup();
    let cers: Vec<f64> = todo
        .par_iter()
        .map(|&(a, b)| evaluator.cer_from_scores(&pop.ngrams[a].scores, &pop.neurals[b].scores))
        .collect();
    known.extend(todo.into_iter().zip(cers));
}

/// Keeps only the models referenced by `pairs`, in order of first reference.
fn reindex(pop: Population, pairs: Vec<ScoredPair>) -> Population {
    let mut ng_map: HashMap<usize, usize> = HashMap::new();
    let mut nn_map: HashMap<usize, usize> = HashMap::new();
    let mut ngrams = Vec::new();
    let mut neurals = Vec::new();
    let pairs = pairs
        .into_iter()
        .map(|p| {
            let ngram = *ng_map.entry(p.ngram).or_insert_with(|| {
                ngrams.push(pop.ngrams[p.ngram].clone());
                ngrams.len() - 1
            });
            let neural = *nn_map.entry(p.neural).or_insert_with(|| {
                neurals.push(pop.neurals[p.neural].clone());
                neurals.len() - 1
            });
            ScoredPair { ngram, neural, cer: p.cer }
        })
        .collect();
    Population { ngrams, neurals, pairs, num_sources: pop.num_sources, next_id: pop.next_id }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_cer: f64,
    pub evaluations: usize,
    pub wallclock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GmmaOutcome {
    pub best: ModelPair,
    pub best_cer: f64,
    pub history: Vec<GenerationRecord>,
}

/// Evolves from the source pairing until `max_generations` or until
/// `patience` generations pass without improvement.
pub fn run_gmma(sources: &[ModelPair], cfg: &GmmaConfig, evaluator: &Evaluator) -> Result<GmmaOutcome> {
    if sources.len() < 2 {
        return Err(Error::InvalidPopulation(format!("GMMA needs at least 2 sources, got {}", sources.len())));
    }
    cfg.validate(sources.len())?;
    let start = Instant::now();
    let base_evals = evaluator.evaluations();
    let mut pop = Population::from_sources(sources, evaluator)?;
    let mut best_cer = pop.best().cer;
    let mut best = pop.best_pair();
    let mut history = vec![GenerationRecord {
        generation: 0,
        best_cer,
        evaluations: evaluator.evaluations() - base_evals,
        wallclock_seconds: start.elapsed().as_secs_f64(),
    }];
    let mut stale = 0;
    for g in 1..=cfg.max_generations {
        pop = gmma_generation(&pop, cfg, evaluator, g as u64)?.0;
        let cur = pop.best().cer;
        if cur < best_cer - cfg.min_improvement {
            stale = 0;
        } else {
            stale += 1;
        }
        if cur < best_cer {
            best_cer = cur;
            best = pop.best_pair();
        }
        history.push(GenerationRecord {
            generation: g,
            best_cer,
            evaluations: evaluator.evaluations() - base_evals,
            wallclock_seconds: start.elapsed().as_secs_f64(),
        });
        if stale >= cfg.patience {
            break;
        }
    }
    Ok(GmmaOutcome { best, best_cer, history })
}

/// `generation,best_cer,evaluations_cumulative[,wallclock_seconds]`. Leave
/// the wallclock column out when the file must be reproducible byte for byte.
pub fn write_history_csv<W: Write>(w: W, history: &[GenerationRecord], wallclock: bool) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["generation", "best_cer", "evaluations_cumulative"];
    if wallclock {
        header.push("wallclock_seconds");
    }
    out.write_record(&header).map_err(csv_err)?;
    for r in history {
        let mut row = vec![r.generation.to_string(), format!("{:.17}", r.best_cer), r.evaluations.to_string()];
        if wallclock {
            row.push(format!("{:.3}", r.wallclock_seconds));
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
