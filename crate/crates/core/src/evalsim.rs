//! Synthetic acoustic channel, N-best rescoring and CER fitness.
//!
//! The channel corrupts reference sentences with random character edits to
//! build N-best lists with acoustic scores. A model pair is judged by picking
//! the best rescored candidate per utterance and measuring corpus CER.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::corpus::{join_ids, parse_ids, Sentence, TokenId, FIRST_CHAR};
use crate::error::{Error, Result};
use crate::neurallm::NeuralLM;
use crate::ngram::NGramModel;
use crate::pair::ModelPair;
use crate::seeding::{self, streams, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub n_best: usize,
    pub edit_rate: f64,
    pub noise_std: f64,
    pub per_edit_penalty: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { n_best: 10, edit_rate: 0.15, noise_std: 0.5, per_edit_penalty: 1.0 }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_best == 0 {
            return Err(Error::Config("n_best must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.edit_rate) {
            return Err(Error::Config(format!("edit rate {} outside [0, 1]", self.edit_rate)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std {} must be ≥ 0", self.noise_std)));
        }
        if !(self.per_edit_penalty > 0.0 && self.per_edit_penalty.is_finite()) {
            return Err(Error::Config(format!("per-edit penalty {} must be > 0", self.per_edit_penalty)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub hypothesis: Sentence,
    pub acoustic_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub reference: Sentence,
    pub candidates: Vec<NBestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
    /// Channel seed, when the set was simulated rather than read from disk.
    pub seed: Option<u64>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_candidates(&self) -> usize {
        self.items.iter().map(|i| i.candidates.len()).sum()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for item in &self.items {
            writeln!(w, "REF\t{}", join_ids(&item.reference))?;
            for c in &item.candidates {
                writeln!(w, "HYP\t{:.16e}\t{}", c.acoustic_score, join_ids(&c.hypothesis))?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut items: Vec<EvalItem> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("eval set line {}: {line:?}", lineno + 1));
            let mut f = line.splitn(3, '\t');
            match f.next() {
                Some("REF") => {
                    let reference = parse_ids(f.next().ok_or_else(bad)?)?;
                    if reference.is_empty() {
                        return Err(Error::EmptyReference);
                    }
                    items.push(EvalItem { reference, candidates: Vec::new() });
                }
                Some("HYP") => {
                    let score: f64 = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                    let hypothesis = parse_ids(f.next().ok_or_else(bad)?)?;
                    items.last_mut().ok_or_else(bad)?.candidates.push(NBestEntry { hypothesis, acoustic_score: score });
                }
                _ => return Err(bad()),
            }
        }
        Ok(Self { items, seed: None })
    }
}

fn random_token(rng: &mut Rng, vocab_size: usize) -> TokenId {
    rng.random_range(FIRST_CHAR..vocab_size as TokenId)
}

/// Each position is edited independently with probability `rate`; returns the
/// hypothesis and the number of edits applied.
fn perturb(reference: &[TokenId], rate: f64, vocab_size: usize, rng: &mut Rng) -> (Sentence, usize) {
    let mut out = Vec::with_capacity(reference.len() + 2);
    let mut edits = 0;
    for &t in reference {
        if rng.random::<f64>() < rate {
            edits += 1;
            match rng.random_range(0..3) {
                0 => out.push(substitute(t, vocab_size, rng)),
                1 => {
                    out.push(t);
                    out.push(random_token(rng, vocab_size));
                }
                _ => {}
            }
        } else {
            out.push(t);
        }
    }
    (out, edits)
}

fn substitute(t: TokenId, vocab_size: usize, rng: &mut Rng) -> TokenId {
    let content = vocab_size as TokenId - FIRST_CHAR;
    if content <= 1 {
        return t;
    }
    loop {
        let s = random_token(rng, vocab_size);
        if s != t {
            return s;
        }
    }
}

/// Applies exactly `edits` random edits at random positions.
fn forced_edits(reference: &[TokenId], edits: usize, vocab_size: usize, rng: &mut Rng) -> Sentence {
    let mut out = reference.to_vec();
    for _ in 0..edits {
        let op = if out.len() <= 1 { 1 } else { rng.random_range(0..3) };
        match op {
            0 => {
                let i = rng.random_range(0..out.len());
                out[i] = substitute(out[i], vocab_size, rng);
            }
            1 => {
                let i = rng.random_range(0..=out.len());
                out.insert(i, random_token(rng, vocab_size));
            }
            _ => {
                let i = rng.random_range(0..out.len());
                out.remove(i);
            }
        }
    }
    out
}

fn simulate_item(reference: &[TokenId], vocab_size: usize, params: &ChannelParams, rng: &mut Rng) -> EvalItem {
    let n = params.n_best;
    let mut seen: HashSet<Sentence> = HashSet::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    let mut push = |hyp: Sentence, edits: usize, rng: &mut Rng, cands: &mut Vec<NBestEntry>| {
        if hyp.is_empty() || !seen.insert(hyp.clone()) {
            return;
        }
        let noise: f64 = StandardNormal.sample(rng);
        cands.push(NBestEntry {
            hypothesis: hyp,
            acoustic_score: -params.per_edit_penalty * edits as f64 + params.noise_std * noise,
        });
    };
    for _ in 0..4 * n {
        if candidates.len() == n {
            break;
        }
        let (hyp, edits) = perturb(reference, params.edit_rate, vocab_size, rng);
        push(hyp, edits, rng, &mut candidates);
    }
    // Not enough distinct candidates: pad with increasingly edited variants.
    let mut edits = 1;
    let mut misses = 0;
    while candidates.len() < n {
        let before = candidates.len();
        let hyp = forced_edits(reference, edits, vocab_size, rng);
        push(hyp, edits, rng, &mut candidates);
        if candidates.len() == before {
            misses += 1;
            if misses >= 8 {
                edits += 1;
                misses = 0;
            }
        }
    }
    EvalItem { reference: reference.to_vec(), candidates }
}

/// Builds an N-best list for every sentence. Item `i` draws from its own
/// stream, so the result is independent of evaluation order.
pub fn simulate_channel(
    sentences: &[Sentence],
    vocab_size: usize,
    params: &ChannelParams,
    seed: u64,
) -> Result<EvalSet> {
    params.validate()?;
    if sentences.is_empty() {
        return Err(Error::InsufficientData("channel simulation needs at least one sentence".into()));
    }
    if vocab_size <= FIRST_CHAR as usize {
        return Err(Error::Config("vocabulary has no ordinary characters".into()));
    }
    if sentences.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptyReference);
    }
    let items = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = seeding::stream(seeding::mix(seed, i as u64), streams::CHANNEL);
            simulate_item(s, vocab_size, params, &mut rng)
        })
        .collect();
    Ok(EvalSet { items, seed: Some(seed) })
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=a.len()).collect();
    let mut cur = vec![0; a.len() + 1];
    for (j, y) in b.iter().enumerate() {
        cur[0] = j + 1;
        for (i, x) in a.iter().enumerate() {
            let sub = prev[i] + usize::from(x != y);
            cur[i + 1] = sub.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[a.len()]
}

pub fn cer(hyp: &[TokenId], reference: &[TokenId]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(levenshtein(hyp, reference) as f64 / reference.len() as f64)
}

/// `acoustic + β_N·ngram + β_R·neural`.
pub fn rescore(pair: &ModelPair, entry: &NBestEntry, beta_ngram: f64, beta_neural: f64) -> f64 {
    let mut s = entry.acoustic_score;
    if beta_ngram != 0.0 {
        s += beta_ngram * pair.ngram.score_sentence(&entry.hypothesis);
    }
    if beta_neural != 0.0 {
        s += beta_neural * pair.neural.score_sentence(&entry.hypothesis);
    }
    s
}

/// Index of the highest score; NaN never wins, ties go to the lowest index.
pub fn argmax(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, s) in scores.into_iter().enumerate() {
        let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
        if s > best_score || i == 0 {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Corpus CER of the selected hypotheses: Σ edits / Σ reference lengths.
pub fn evaluate_pair(pair: &ModelPair, set: &EvalSet, beta_ngram: f64, beta_neural: f64) -> f64 {
    let picked: Vec<(usize, usize)> = set
        .items
        .par_iter()
        .map(|item| {
            let best = argmax(item.candidates.iter().map(|c| rescore(pair, c, beta_ngram, beta_neural)));
            (levenshtein(&item.candidates[best].hypothesis, &item.reference), item.reference.len())
        })
        .collect();
    corpus_cer(&picked)
}

fn corpus_cer(picked: &[(usize, usize)]) -> f64 {
    let (edits, len) = picked.iter().fold((0usize, 0usize), |(e, l), &(pe, pl)| (e + pe, l + pl));
    edits as f64 / len.max(1) as f64
}

/// Per-candidate LM scores of one model over an eval set, flattened item by item.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable(pub Vec<f64>);

/// The fitness function `ℓ(M)`: an eval set, fixed rescoring weights, and a
/// counter of how many pair evaluations have been requested.
///
/// LM scores are computed per model ([`Evaluator::score_ngram`],
/// [`Evaluator::score_neural`]) so callers can reuse one half of a pair; each
/// combination into a CER counts as one evaluation.
#[derive(Debug)]
pub struct Evaluator {
    set: EvalSet,
    beta_ngram: f64,
    beta_neural: f64,
    offsets: Vec<usize>,
    /// Per candidate: edit distance to its reference.
    distances: Vec<usize>,
    ref_lengths: Vec<usize>,
    evaluations: AtomicUsize,
}

impl Evaluator {
    pub fn new(set: EvalSet, beta_ngram: f64, beta_neural: f64) -> Self {
        let mut offsets = Vec::with_capacity(set.items.len() + 1);
        offsets.push(0);
        for item in &set.items {
            offsets.push(offsets.last().unwrap() + item.candidates.len());
        }
        let distances = set
            .items
            .par_iter()
            .flat_map_iter(|item| item.candidates.iter().map(|c| levenshtein(&c.hypothesis, &item.reference)))
            .collect();
        let ref_lengths = set.items.iter().map(|i| i.reference.len()).collect();
        Self { set, beta_ngram, beta_neural, offsets, distances, ref_lengths, evaluations: AtomicUsize::new(0) }
    }

    pub fn eval_set(&self) -> &EvalSet {
        &self.set
    }

    pub fn betas(&self) -> (f64, f64) {
        (self.beta_ngram, self.beta_neural)
    }

    /// Number of pair evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    fn score_with<F: Fn(&[TokenId]) -> f64 + Sync>(&self, f: F) -> ScoreTable {
        ScoreTable(
            self.set.items.par_iter().flat_map_iter(|item| item.candidates.iter().map(|c| f(&c.hypothesis))).collect(),
        )
    }

    pub fn score_ngram(&self, m: &NGramModel) -> ScoreTable {
        self.score_with(|h| m.score_sentence(h))
    }

    pub fn score_neural(&self, m: &NeuralLM) -> ScoreTable {
        self.score_with(|h| m.score_sentence(h))
    }

    /// Corpus CER from precomputed LM scores. Counts as one evaluation.
    pub fn cer_from_scores(&self, ngram: &ScoreTable, neural: &ScoreTable) -> f64 {
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        let picked: Vec<(usize, usize)> = (0..self.set.items.len())
            .map(|i| {
                let range = self.offsets[i]..self.offsets[i + 1];
                let cands = &self.set.items[i].candidates;
                let best = argmax(range.clone().map(|k| {
                    let mut s = cands[k - range.start].acoustic_score;
                    if self.beta_ngram != 0.0 {
                        s += self.beta_ngram * ngram.0[k];
                    }
                    if self.beta_neural != 0.0 {
                        s += self.beta_neural * neural.0[k];
                    }
                    s
                }));
                (self.distances[range.start + best], self.ref_lengths[i])
            })
            .collect();
        corpus_cer(&picked)
    }

    pub fn evaluate(&self, ngram: &NGramModel, neural: &NeuralLM) -> f64 {
        let (a, b) = rayon::join(|| self.score_ngram(ngram), || self.score_neural(neural));
        self.cer_from_scores(&a, &b)
    }

    pub fn evaluate_pair(&self, pair: &ModelPair) -> f64 {
        self.evaluate(&pair.ngram, &pair.neural)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neurallm::Dims;
    use proptest::prelude::*;

    /// Full-matrix edit distance, written independently of [`levenshtein`].
    fn dp_oracle(a: &[u32], b: &[u32]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in d[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer(&[3, 4], &[3, 4]).unwrap(), 0.0);
        assert_eq!(cer(&[3, 4], &[3, 5]).unwrap(), 0.5);
        assert!(matches!(cer(&[3], &[]), Err(Error::EmptyReference)));
        assert_eq!(cer(&[], &[3, 4]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_dp(a in prop::collection::vec(0u32..4, 0..9), b in prop::collection::vec(0u32..4, 0..9)) {
            prop_assert_eq!(levenshtein(&a, &b), dp_oracle(&a, &b));
        }

        #[test]
        fn edit_distance_triangle(a in prop::collection::vec(0u32..3, 0..8), b in prop::collection::vec(0u32..3, 1..8), c in prop::collection::vec(0u32..3, 1..8)) {
            let lhs = cer(&a, &c).unwrap() * c.len() as f64;
            let rhs = cer(&a, &b).unwrap() * b.len() as f64 + levenshtein(&b, &c) as f64;
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }

    fn sentences() -> Vec<Sentence> {
        vec![vec![3, 4, 5, 6], vec![4, 4], vec![5], vec![6, 5, 4, 3, 3, 4]]
    }

    #[test]
    fn zero_rate_channel_puts_reference_first() {
        let p = ChannelParams { edit_rate: 0.0, noise_std: 0.0, ..Default::default() };
        let set = simulate_channel(&sentences(), 8, &p, 1).unwrap();
        for item in &set.items {
            assert_eq!(item.candidates.len(), 10);
            assert_eq!(item.candidates[0].hypothesis, item.reference);
            assert_eq!(item.candidates[0].acoustic_score, 0.0);
            assert!(item.candidates[1..].iter().all(|c| c.acoustic_score < 0.0));
            let distinct: HashSet<_> = item.candidates.iter().map(|c| &c.hypothesis).collect();
            assert_eq!(distinct.len(), 10);
        }
        let noisy =
            simulate_channel(&sentences(), 8, &ChannelParams { edit_rate: 0.0, ..Default::default() }, 1).unwrap();
        assert_eq!(noisy.items[0].candidates[0].hypothesis, noisy.items[0].reference);
    }

    #[test]
    fn channel_is_deterministic_and_round_trips() {
        let p = ChannelParams::default();
        let a = simulate_channel(&sentences(), 8, &p, 42).unwrap();
        let b = simulate_channel(&sentences(), 8, &p, 42).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        let back = EvalSet::read(&buf[..]).unwrap();
        assert_eq!(back.items, a.items);
    }

    #[test]
    fn tiny_vocabulary_still_fills_the_list() {
        let p = ChannelParams { edit_rate: 0.5, ..Default::default() };
        let set = simulate_channel(&[vec![3]], 4, &p, 0).unwrap();
        assert_eq!(set.items[0].candidates.len(), 10);
    }

    fn toy_pair() -> ModelPair {
        let data = vec![vec![3, 4, 5], vec![3, 4]];
        ModelPair::new(
            NGramModel::train(&data, 2, 8, 0.1).unwrap(),
            NeuralLM::init(Dims { vocab: 8, embed: 2, hidden: 3 }, 5).unwrap(),
        )
    }

    #[test]
    fn rescoring_components_add_up() {
        let pair = toy_pair();
        let e = NBestEntry { hypothesis: vec![3, 4, 6], acoustic_score: -1.25 };
        assert_eq!(rescore(&pair, &e, 0.0, 0.0), -1.25);
        assert_eq!(rescore(&pair, &e, 1.0, 0.0), -1.25 + pair.ngram.score_sentence(&e.hypothesis));
        let want =
            -1.25 + 0.7 * pair.ngram.score_sentence(&e.hypothesis) + 0.4 * pair.neural.score_sentence(&e.hypothesis);
        assert!((rescore(&pair, &e, 0.7, 0.4) - want).abs() < 1e-12);
    }

    fn entry(h: &[u32], s: f64) -> NBestEntry {
        NBestEntry { hypothesis: h.to_vec(), acoustic_score: s }
    }

    #[test]
    fn perfect_and_forced_selection() {
        let pair = toy_pair();
        let perfect = EvalSet {
            items: vec![EvalItem {
                reference: vec![3, 4],
                candidates: vec![entry(&[3, 5], -100.0), entry(&[3, 4], 0.0)],
            }],
            seed: None,
        };
        assert_eq!(evaluate_pair(&pair, &perfect, 0.0, 0.0), 0.0);
        let forced = EvalSet {
            items: vec![EvalItem { reference: vec![3, 4, 5, 6], candidates: vec![entry(&[3, 4, 5, 7], 0.0)] }],
            seed: None,
        };
        assert_eq!(evaluate_pair(&pair, &forced, 1.0, 1.0), 0.25);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(argmax([1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax([f64::NAN, -1.0]), 1);
        assert_eq!(argmax([f64::NAN, f64::NAN]), 0);
    }

    #[test]
    fn evaluator_matches_brute_force() {
        let pair = toy_pair();
        let p = ChannelParams { n_best: 6, edit_rate: 0.3, ..Default::default() };
        let refs = vec![vec![3, 4, 5], vec![3, 4], vec![5, 5, 4, 3], vec![6, 3], vec![4, 5, 6, 7]];
        let set = simulate_channel(&refs, 8, &p, 7).unwrap();
        // brute force: every candidate's full rescored value, argmax, DP distance
        let (mut edits, mut len) = (0, 0);
        let mut per_item = Vec::new();
        for item in &set.items {
            let scores: Vec<f64> = item
                .candidates
                .iter()
                .map(|c| {
                    c.acoustic_score
                        + pair.ngram.score_sentence(&c.hypothesis)
                        + pair.neural.score_sentence(&c.hypothesis)
                })
                .collect();
            let mut best = 0;
            for k in 1..scores.len() {
                if scores[k] > scores[best] {
                    best = k;
                }
            }
            let d = dp_oracle(&item.candidates[best].hypothesis, &item.reference);
            edits += d;
            len += item.reference.len();
            per_item.push((d as f64 / item.reference.len() as f64, item.reference.len()));
        }
        let want = edits as f64 / len as f64;
        assert_eq!(evaluate_pair(&pair, &set, 1.0, 1.0), want);
        let ev = Evaluator::new(set.clone(), 1.0, 1.0);
        assert_eq!(ev.evaluate_pair(&pair), want);
        assert_eq!(ev.evaluations(), 1);
        // length-weighted mean of per-item CERs
        let weighted: f64 = per_item.iter().map(|(c, l)| c * *l as f64).sum::<f64>() / len as f64;
        assert!((weighted - want).abs() < 1e-12);
        // positive rescaling of every score keeps the selection
        let scaled = set
            .items
            .iter()
            .map(|item| {
                let s: Vec<f64> = item.candidates.iter().map(|c| 3.5 * rescore(&pair, c, 1.0, 1.0)).collect();
                argmax(s)
            })
            .collect::<Vec<_>>();
        let plain = set
            .items
            .iter()
            .map(|item| argmax(item.candidates.iter().map(|c| rescore(&pair, c, 1.0, 1.0))))
            .collect::<Vec<_>>();
        assert_eq!(scaled, plain);
    }
}
