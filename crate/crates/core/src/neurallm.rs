//! Small recurrent character LM with an explicit three-layer parameter list.
//!
//! Layers, in declaration and serialization order:
//!
//! 1. `embedding`: `emb` (V×E)
//! 2. `recurrent`: `w_in` (E×H), `w_rec` (H×H), `bias` (H)
//! 3. `projection`: `w_out` (H×V), `bias` (V)
//!
//! `h_t = tanh(emb[x_t]·w_in + h_{t−1}·w_rec + bias)`, logits `h_t·w_out + bias`.
//! All parameters live in one flat vector; a layer is a contiguous slice of it,
//! which is also what the merge and crossover operators work on.

use std::io::{Read, Write};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::{Sentence, TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::seeding::{self, streams};
use crate::simplex;

pub const NUM_LAYERS: usize = 3;
pub const GRAD_CLIP: f64 = 5.0;
const MUTATION_RETRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    emb: usize,
    w_in: usize,
    w_rec: usize,
    b_rec: usize,
    w_out: usize,
    b_out: usize,
    end: usize,
}

impl Dims {
    fn layout(&self) -> Layout {
        let (v, e, h) = (self.vocab, self.embed, self.hidden);
        let emb = 0;
        let w_in = emb + v * e;
        let w_rec = w_in + e * h;
        let b_rec = w_rec + h * h;
        let w_out = b_rec + h;
        let b_out = w_out + h * v;
        Layout { emb, w_in, w_rec, b_rec, w_out, b_out, end: b_out + v }
    }

    pub fn num_params(&self) -> usize {
        self.layout().end
    }

    /// Flat index range of layer `l` (0-based).
    pub fn layer_range(&self, l: usize) -> Range<usize> {
        let lay = self.layout();
        match l {
            0 => lay.emb..lay.w_in,
            1 => lay.w_in..lay.w_out,
            2 => lay.w_out..lay.end,
            _ => panic!("layer index {l} out of range"),
        }
    }

    /// Named tensor shapes of layer `l`.
    pub fn layer_shapes(&self, l: usize) -> Vec<(&'static str, Vec<usize>)> {
        let (v, e, h) = (self.vocab, self.embed, self.hidden);
        match l {
            0 => vec![("emb", vec![v, e])],
            1 => vec![("w_in", vec![e, h]), ("w_rec", vec![h, h]), ("bias", vec![h])],
            2 => vec![("w_out", vec![h, v]), ("bias", vec![v])],
            _ => panic!("layer index {l} out of range"),
        }
    }
}

pub const LAYER_NAMES: [&str; NUM_LAYERS] = ["embedding", "recurrent", "projection"];

/// Additive perturbation of one layer, flattened in the layer's tensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDelta {
    pub layer: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLM {
    dims: Dims,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NeuralConfig {
    pub embed: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self { embed: 8, hidden: 16, epochs: 8, learning_rate: 0.1, seed: 0 }
    }
}

struct Forward {
    /// hidden states h_0 (zeros) .. h_T
    hidden: Vec<Vec<f64>>,
    /// softmax outputs per step
    probs: Vec<Vec<f64>>,
    inputs: Vec<TokenId>,
    targets: Vec<TokenId>,
    log_prob: f64,
}

impl NeuralLM {
    /// Uniform(−0.1, 0.1) initialization from `seed`.
    pub fn init(dims: Dims, seed: u64) -> Result<Self> {
        if dims.embed < 1 || dims.hidden < 1 || dims.vocab < 4 {
            return Err(Error::Config(format!("invalid neural LM dimensions {dims:?}")));
        }
        let mut rng = seeding::stream(seed, streams::NEURAL_INIT);
        let params = (0..dims.num_params()).map(|_| rng.random_range(-0.1..0.1)).collect();
        Ok(Self { dims, params })
    }

    pub fn from_params(dims: Dims, params: Vec<f64>) -> Result<Self> {
        if params.len() != dims.num_params() {
            return Err(Error::ShapeError(format!(
                "{} parameters given, {dims:?} needs {}",
                params.len(),
                dims.num_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::MergeOverflow);
        }
        Ok(Self { dims, params })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.params[self.dims.layer_range(l)]
    }

    fn forward(&self, tokens: &[TokenId], keep: bool) -> Forward {
        let Dims { vocab: v, embed: e, hidden: hd } = self.dims;
        let lay = self.dims.layout();
        let p = &self.params;
        let mut h = vec![0.0; hd];
        let mut out = Forward {
            hidden: Vec::new(),
            probs: Vec::new(),
            inputs: Vec::with_capacity(tokens.len() + 1),
            targets: Vec::with_capacity(tokens.len() + 1),
            log_prob: 0.0,
        };
        if keep {
            out.hidden.push(h.clone());
        }
        let mut z = vec![0.0; hd];
        let mut logits = vec![0.0; v];
        let mut prev = BOS;
        for &target in tokens.iter().chain(std::iter::once(&EOS)) {
            z.copy_from_slice(&p[lay.b_rec..lay.b_rec + hd]);
            let x = &p[lay.emb + prev as usize * e..][..e];
            for (i, &xi) in x.iter().enumerate() {
                let row = &p[lay.w_in + i * hd..][..hd];
                for (zj, &w) in z.iter_mut().zip(row) {
                    *zj += xi * w;
                }
            }
            for (k, &hk) in h.iter().enumerate() {
                let row = &p[lay.w_rec + k * hd..][..hd];
                for (zj, &w) in z.iter_mut().zip(row) {
                    *zj += hk * w;
                }
            }
            for (hj, &zj) in h.iter_mut().zip(&z) {
                *hj = zj.tanh();
            }
            logits.copy_from_slice(&p[lay.b_out..lay.b_out + v]);
            for (j, &hj) in h.iter().enumerate() {
                let row = &p[lay.w_out + j * v..][..v];
                for (lv, &w) in logits.iter_mut().zip(row) {
                    *lv += hj * w;
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let lse = max + sum.ln();
            out.log_prob += logits[target as usize] - lse;
            if keep {
                out.probs.push(logits.iter().map(|l| (l - lse).exp()).collect());
                out.hidden.push(h.clone());
                out.inputs.push(prev);
                out.targets.push(target);
            }
            prev = target;
        }
        out
    }

    /// Natural-log probability of `tokens` then the end marker, teacher-forced from `<s>`.
    pub fn score_sentence(&self, tokens: &[TokenId]) -> f64 {
        self.forward(tokens, false).log_prob
    }

    /// Next-token distributions at every step (rows sum to one).
    pub fn step_distributions(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        self.forward(tokens, true).probs
    }

    /// Mean per-token negative log-likelihood of one sentence and its gradient
    /// with respect to the flat parameter vector (full backpropagation through time).
    pub fn loss_and_grad(&self, tokens: &[TokenId]) -> (f64, Vec<f64>) {
        let Dims { vocab: v, embed: e, hidden: hd } = self.dims;
        let lay = self.dims.layout();
        let p = &self.params;
        let fw = self.forward(tokens, true);
        let steps = fw.targets.len();
        let scale = 1.0 / steps as f64;
        let mut g = vec![0.0; p.len()];
        let mut dh_next = vec![0.0; hd];
        let mut dz = vec![0.0; hd];
        for t in (0..steps).rev() {
            let h = &fw.hidden[t + 1];
            let h_prev = &fw.hidden[t];
            let mut dlogits = fw.probs[t].clone();
            dlogits[fw.targets[t] as usize] -= 1.0;
            dlogits.iter_mut().for_each(|d| *d *= scale);
            for (gb, &d) in g[lay.b_out..lay.b_out + v].iter_mut().zip(&dlogits) {
                *gb += d;
            }
            let mut dh = dh_next.clone();
            for j in 0..hd {
                let row = &p[lay.w_out + j * v..][..v];
                let grow = &mut g[lay.w_out + j * v..][..v];
                let mut acc = 0.0;
                for k in 0..v {
                    grow[k] += h[j] * dlogits[k];
                    acc += row[k] * dlogits[k];
                }
                dh[j] += acc;
            }
            for j in 0..hd {
                dz[j] = dh[j] * (1.0 - h[j] * h[j]);
            }
            for (gb, &d) in g[lay.b_rec..lay.b_rec + hd].iter_mut().zip(&dz) {
                *gb += d;
            }
            let x_off = lay.emb + fw.inputs[t] as usize * e;
            for i in 0..e {
                let xi = p[x_off + i];
                let mut acc = 0.0;
                for j in 0..hd {
                    g[lay.w_in + i * hd + j] += xi * dz[j];
                    acc += p[lay.w_in + i * hd + j] * dz[j];
                }
                g[x_off + i] += acc;
            }
            for k in 0..hd {
                let mut acc = 0.0;
                for j in 0..hd {
                    g[lay.w_rec + k * hd + j] += h_prev[k] * dz[j];
                    acc += p[lay.w_rec + k * hd + j] * dz[j];
                }
                dh_next[k] = acc;
            }
        }
        (-fw.log_prob * scale, g)
    }

    /// Token-weighted mean negative log-likelihood over `sentences`.
    pub fn cross_entropy(&self, sentences: &[Sentence]) -> f64 {
        let (nll, steps) =
            sentences.iter().fold((0.0, 0usize), |(nll, n), s| (nll - self.score_sentence(s), n + s.len() + 1));
        nll / steps.max(1) as f64
    }

    /// Trains a freshly initialized model.
    pub fn train(train: &[Sentence], val: &[Sentence], vocab: usize, cfg: &NeuralConfig) -> Result<Self> {
        if cfg.embed < 2 || cfg.hidden < 2 {
            return Err(Error::Config("embedding and hidden sizes must be at least 2".into()));
        }
        let dims = Dims { vocab, embed: cfg.embed, hidden: cfg.hidden };
        Self::init(dims, cfg.seed)?.train_further(train, val, cfg.epochs, cfg.learning_rate, cfg.seed)
    }

    /// Plain per-sentence gradient descent with norm clipping, starting from
    /// `self`. Returns the epoch (0 = starting point) with the lowest
    /// validation cross-entropy, or training cross-entropy when `val` is empty.
    pub fn train_further(
        &self,
        train: &[Sentence],
        val: &[Sentence],
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InsufficientData("neural LM training needs at least one sentence".into()));
        }
        if let Some(bad) = train.iter().flatten().find(|&&t| t as usize >= self.dims.vocab) {
            return Err(Error::ShapeError(format!("token {bad} outside vocabulary of {}", self.dims.vocab)));
        }
        let monitor = if val.is_empty() { train } else { val };
        let mut best = self.clone();
        let mut best_ce = self.cross_entropy(monitor);
        let mut model = self.clone();
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = seeding::stream(seed, streams::NEURAL_SHUFFLE);
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (loss, mut g) = model.loss_and_grad(&train[i]);
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > GRAD_CLIP {
                    let s = GRAD_CLIP / norm;
                    g.iter_mut().for_each(|x| *x *= s);
                }
                for (p, d) in model.params.iter_mut().zip(&g) {
                    *p -= learning_rate * d;
                }
            }
            let ce = model.cross_entropy(monitor);
            if !ce.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            if ce < best_ce {
                best_ce = ce;
                best = model.clone();
            }
        }
        Ok(best)
    }

    /// Flips bit `bit` of the little-endian parameter byte stream.
    pub fn flip_bit(&self, bit: usize) -> Result<Self> {
        let idx = bit / 64;
        if idx >= self.params.len() {
            return Err(Error::ShapeError(format!("bit {bit} outside {} parameters", self.params.len())));
        }
        let mut out = self.clone();
        out.params[idx] = f64::from_bits(out.params[idx].to_bits() ^ (1u64 << (bit % 64)));
        Ok(out)
    }

    /// Flips one uniformly chosen parameter bit, resampling when the flipped
    /// value is not finite.
    pub fn mutate(&self, seed: u64) -> Result<Self> {
        let mut rng = seeding::stream(seed, streams::MUTATE);
        let bits = self.params.len() * 64;
        for _ in 0..MUTATION_RETRIES {
            let out = self.flip_bit(rng.random_range(0..bits))?;
            if out.params.iter().all(|p| p.is_finite()) {
                return Ok(out);
            }
        }
        Err(Error::MutationFailed(MUTATION_RETRIES))
    }

    /// Layer-exchange crossover at cut point `cut ∈ [1, L]`: the first child
    /// takes `a`'s layers up to `cut` and `b`'s after it, the second the reverse.
    pub fn crossover(a: &Self, b: &Self, cut: usize) -> Result<(Self, Self)> {
        check_compatible(a, b)?;
        if !(1..=NUM_LAYERS).contains(&cut) {
            return Err(Error::InvalidCoefficient(cut as f64));
        }
        let split = if cut == NUM_LAYERS { a.params.len() } else { a.dims.layer_range(cut).start };
        let mut c1 = a.clone();
        let mut c2 = b.clone();
        c1.params[split..].copy_from_slice(&b.params[split..]);
        c2.params[split..].copy_from_slice(&a.params[split..]);
        Ok((c1, c2))
    }

    /// Per-layer convex combination `Σ_i θ[l][i]·W_i^l` plus every delta
    /// targeting layer `l`. `theta` has one simplex row per layer.
    pub fn merge(models: &[&Self], theta: &[Vec<f64>], deltas: &[LayerDelta]) -> Result<Self> {
        let first = *models.first().ok_or_else(|| Error::IncompatibleModels("nothing to merge".into()))?;
        for m in &models[1..] {
            check_compatible(first, m)?;
        }
        if theta.len() != NUM_LAYERS {
            return Err(Error::SimplexViolation(format!("{} weight rows for {NUM_LAYERS} layers", theta.len())));
        }
        for row in theta {
            if row.len() != models.len() {
                return Err(Error::SimplexViolation(format!("{} weights for {} models", row.len(), models.len())));
            }
            simplex::check(row)?;
        }
        let dims = first.dims;
        let mut params = vec![0.0; dims.num_params()];
        for (l, row) in theta.iter().enumerate() {
            let range = dims.layer_range(l);
            let dst = &mut params[range.clone()];
            let mut started = false;
            for (m, &w) in models.iter().zip(row) {
                if w == 0.0 {
                    continue;
                }
                let src = &m.params[range.clone()];
                if started {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
                } else {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d = w * s);
                    started = true;
                }
            }
        }
        for d in deltas {
            if d.layer >= NUM_LAYERS || d.values.len() != dims.layer_range(d.layer).len() {
                return Err(Error::ShapeError(format!("delta for layer {} has {} values", d.layer, d.values.len())));
            }
            let dst = &mut params[dims.layer_range(d.layer)];
            dst.iter_mut().zip(&d.values).for_each(|(p, v)| *p += v);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::MergeOverflow);
        }
        Ok(Self { dims, params })
    }

    /// Little-endian bytes of the flat parameter vector (the bit-flip domain).
    pub fn param_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.to_le_bytes()).collect()
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let Dims { vocab, embed, hidden } = self.dims;
        writeln!(w, "NNLM v1 V={vocab} E={embed} H={hidden}")?;
        w.write_all(&self.param_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let nl = buf.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse("neural LM header missing".into()))?;
        let header = std::str::from_utf8(&buf[..nl]).map_err(|_| Error::Parse("header is not UTF-8".into()))?;
        let mut f = header.split_whitespace();
        if f.next() != Some("NNLM") || f.next() != Some("v1") {
            return Err(Error::Parse(format!("bad neural LM header {header:?}")));
        }
        let mut get = |key: &str| -> Result<usize> {
            f.next()
                .and_then(|kv| kv.strip_prefix(key))
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("header field {key} missing in {header:?}")))
        };
        let dims = Dims { vocab: get("V")?, embed: get("E")?, hidden: get("H")? };
        let body = &buf[nl + 1..];
        if body.len() != dims.num_params() * 8 {
            return Err(Error::Parse(format!(
                "expected {} parameter bytes, found {}",
                dims.num_params() * 8,
                body.len()
            )));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_params(dims, params)
    }
}

pub fn check_compatible(a: &NeuralLM, b: &NeuralLM) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::IncompatibleModels(format!("neural LM {:?} vs {:?}", a.dims, b.dims)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> NeuralLM {
        NeuralLM::init(Dims { vocab: 5, embed: 2, hidden: 2 }, seed).unwrap()
    }

    #[test]
    fn single_step_bound() {
        let m = small(1);
        let lp = m.score_sentence(&[]);
        assert!(lp <= 0.0 && lp.is_finite());
    }

    #[test]
    fn step_distributions_sum_to_one() {
        let m = small(2);
        for row in m.step_distributions(&[3, 4, 3]) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_computed_forward_pass() {
        // V=4 (only <s>,</s>,<unk>,a), E=1, H=1
        let dims = Dims { vocab: 4, embed: 1, hidden: 1 };
        let params = vec![
            0.5, -0.2, 0.0, 1.0, // emb
            0.8, // w_in
            0.3, // w_rec
            0.1, // bias
            1.0, -1.0, 0.5, 2.0, // w_out
            0.0, 0.1, 0.0, -0.1, // bias
        ];
        let m = NeuralLM::from_params(dims, params).unwrap();
        // sentence "a": inputs <s>, a ; targets a, </s>
        let logp = |h: f64, t: usize| {
            let logits = [h * 1.0, -h + 0.1, 0.5 * h, 2.0 * h - 0.1];
            let lse = logits.iter().map(|l: &f64| l.exp()).sum::<f64>().ln();
            logits[t] - lse
        };
        let h1 = (0.5f64 * 0.8 + 0.1).tanh();
        let h2 = (1.0f64 * 0.8 + h1 * 0.3 + 0.1).tanh();
        let want = logp(h1, 3) + logp(h2, 1);
        assert!((m.score_sentence(&[3]) - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = small(7);
        let sentence = [3, 4, 4, 3, 2];
        let (_, g) = m.loss_and_grad(&sentence);
        let eps = 1e-4;
        for (i, &gi) in g.iter().enumerate() {
            let mut p = m.clone();
            p.params[i] += eps;
            let up = p.loss_and_grad(&sentence).0;
            p.params[i] -= 2.0 * eps;
            let down = p.loss_and_grad(&sentence).0;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-6);
            assert!(rel < 1e-3, "param {i}: analytic {gi} vs numeric {fd}");
        }
    }

    #[test]
    fn training_learns_repeating_pattern() {
        let s: Sentence = [3, 4].repeat(10);
        let cfg = NeuralConfig { embed: 4, hidden: 8, epochs: 50, learning_rate: 0.1, seed: 3 };
        let m = NeuralLM::train(std::slice::from_ref(&s), std::slice::from_ref(&s), 5, &cfg).unwrap();
        assert!(m.cross_entropy(&[s]) < (5f64).ln());
    }

    #[test]
    fn training_is_deterministic_and_zero_epochs_is_init() {
        let data = vec![vec![3, 4, 3], vec![4, 4]];
        let cfg = NeuralConfig { embed: 2, hidden: 3, epochs: 3, learning_rate: 0.1, seed: 11 };
        let a = NeuralLM::train(&data, &data, 5, &cfg).unwrap();
        let b = NeuralLM::train(&data, &data, 5, &cfg).unwrap();
        assert_eq!(a.param_bytes(), b.param_bytes());
        let zero = NeuralLM::train(&data, &data, 5, &NeuralConfig { epochs: 0, ..cfg.clone() }).unwrap();
        let init = NeuralLM::init(Dims { vocab: 5, embed: 2, hidden: 3 }, 11).unwrap();
        assert_eq!(zero, init);
    }

    #[test]
    fn sign_bit_flip_negates_one_weight() {
        let m = small(4);
        let out = m.flip_bit(5 * 64 + 63).unwrap();
        assert_eq!(out.params[5], -m.params[5]);
        for i in (0..m.params.len()).filter(|&i| i != 5) {
            assert_eq!(out.params[i].to_bits(), m.params[i].to_bits());
        }
    }

    #[test]
    fn mutation_flips_exactly_one_bit() {
        let m = small(5);
        for seed in 0..200 {
            let out = m.mutate(seed).unwrap();
            let flipped: u32 = m.param_bytes().iter().zip(out.param_bytes()).map(|(a, b)| (a ^ b).count_ones()).sum();
            assert_eq!(flipped, 1);
            assert!(out.params.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn exponent_flip_to_nan_is_rejected_by_mutation() {
        // 1.5 with its top exponent bit set becomes NaN-class (all exponent ones);
        // mutate must never return such a value.
        let dims = Dims { vocab: 4, embed: 1, hidden: 1 };
        let m = NeuralLM::from_params(dims, vec![1.5; dims.num_params()]).unwrap();
        assert!(!m.flip_bit(62).unwrap().params[0].is_finite());
        for seed in 0..100 {
            assert!(m.mutate(seed).unwrap().params.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn crossover_contracts() {
        let a = small(1);
        let b = small(2);
        let (c1, c2) = NeuralLM::crossover(&a, &b, NUM_LAYERS).unwrap();
        assert_eq!((c1.clone(), c2.clone()), (a.clone(), b.clone()));
        let (c1, c2) = NeuralLM::crossover(&a, &b, 1).unwrap();
        assert_eq!(c1.layer(0), a.layer(0));
        assert_eq!(c1.layer(1), b.layer(1));
        assert_eq!(c1.layer(2), b.layer(2));
        assert_eq!(c2.layer(0), b.layer(0));
        let (r1, r2) = NeuralLM::crossover(&c1, &c2, 1).unwrap();
        assert_eq!((r1, r2), (a.clone(), b));
        let other = NeuralLM::init(Dims { vocab: 5, embed: 3, hidden: 2 }, 0).unwrap();
        assert!(matches!(NeuralLM::crossover(&a, &other, 1), Err(Error::IncompatibleModels(_))));
    }

    #[test]
    fn merge_vertex_is_bit_exact() {
        let a = small(1);
        let b = small(2);
        let theta = vec![vec![0.0, 1.0]; NUM_LAYERS];
        let m = NeuralLM::merge(&[&a, &b], &theta, &[]).unwrap();
        assert_eq!(m.to_bytes(), b.to_bytes());
    }

    #[test]
    fn merge_matches_elementwise_oracle() {
        let dims = Dims { vocab: 4, embed: 1, hidden: 1 };
        let a = NeuralLM::init(dims, 1).unwrap();
        let b = NeuralLM::init(dims, 2).unwrap();
        let theta = vec![vec![0.3, 0.7]; NUM_LAYERS];
        let delta = LayerDelta { layer: 1, values: vec![0.01, -0.02, 0.03] };
        let m = NeuralLM::merge(&[&a, &b], &theta, std::slice::from_ref(&delta)).unwrap();
        let r = dims.layer_range(1);
        for i in 0..dims.num_params() {
            let mut want = 0.3 * a.params[i] + 0.7 * b.params[i];
            if r.contains(&i) {
                want += delta.values[i - r.start];
            }
            assert!((m.params[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_layers_are_independent() {
        let a = small(1);
        let b = small(2);
        let base = vec![vec![0.5, 0.5]; NUM_LAYERS];
        let mut changed = base.clone();
        changed[1] = vec![0.2, 0.8];
        let x = NeuralLM::merge(&[&a, &b], &base, &[]).unwrap();
        let y = NeuralLM::merge(&[&a, &b], &changed, &[]).unwrap();
        assert_eq!(x.layer(0), y.layer(0));
        assert_eq!(x.layer(2), y.layer(2));
        assert_ne!(x.layer(1), y.layer(1));
        assert!(matches!(
            NeuralLM::merge(&[&a, &b], &vec![vec![0.5, 0.6]; NUM_LAYERS], &[]),
            Err(Error::SimplexViolation(_))
        ));
    }

    #[test]
    fn serialization_round_trip() {
        let m = small(9);
        let bytes = m.to_bytes();
        assert!(bytes.starts_with(b"NNLM v1 V=5 E=2 H=2\n"));
        let back = NeuralLM::read(&bytes[..]).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.score_sentence(&[3, 4]).to_bits(), m.score_sentence(&[3, 4]).to_bits());
    }
}
