//! Sparse character n-gram model: training, additive-smoothing scoring, and
//! the genetic and merge operators that act on its count table.
//!
//! Counts are real-valued so that convex combinations and column scalings stay
//! inside the model family. Probabilities are derived at scoring time:
//! `P(t | h) = (c(h,t) + α) / (C(h) + α·V)`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::corpus::{Sentence, TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::simplex;

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    /// Sorted by token id.
    next: Vec<(TokenId, f64)>,
    total: f64,
}

impl Row {
    fn from_map(map: BTreeMap<TokenId, f64>) -> Self {
        let next: Vec<_> = map.into_iter().collect();
        let total = next.iter().map(|(_, c)| c).sum();
        Row { next, total }
    }

    fn get(&self, token: TokenId) -> f64 {
        self.next.binary_search_by_key(&token, |&(t, _)| t).map_or(0.0, |i| self.next[i].1)
    }
}

/// One scaling of a token column: every count whose next token is `token`
/// gains `k` times itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnScaling {
    pub token: TokenId,
    pub k: f64,
}

/// All `(history, count)` entries whose next token is `token`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramColumn {
    pub token: TokenId,
    pub entries: Vec<(Vec<TokenId>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab_size: usize,
    alpha: f64,
    rows: HashMap<Vec<TokenId>, Row>,
}

type Table = HashMap<Vec<TokenId>, BTreeMap<TokenId, f64>>;

impl NGramModel {
    fn from_table(order: usize, vocab_size: usize, alpha: f64, table: Table) -> Self {
        let rows = table.into_iter().filter(|(_, m)| !m.is_empty()).map(|(h, m)| (h, Row::from_map(m))).collect();
        Self { order, vocab_size, alpha, rows }
    }

    /// Builds a model from explicit `(history, token, count)` entries. Repeated
    /// entries accumulate.
    pub fn from_counts<I>(order: usize, vocab_size: usize, alpha: f64, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<TokenId>, TokenId, f64)>,
    {
        validate_shape(order, vocab_size, alpha)?;
        let mut table = Table::new();
        for (h, t, c) in entries {
            if h.len() != order - 1 {
                return Err(Error::Parse(format!("history of length {} for order {order}", h.len())));
            }
            if t as usize >= vocab_size || h.iter().any(|&x| x as usize >= vocab_size) {
                return Err(Error::Parse(format!("token id out of range for vocabulary of {vocab_size}")));
            }
            if !c.is_finite() || c < 0.0 {
                return Err(Error::Parse(format!("count {c} is negative or not finite")));
            }
            *table.entry(h).or_default().entry(t).or_insert(0.0) += c;
        }
        Ok(Self::from_table(order, vocab_size, alpha, table))
    }

    /// Counts every n-gram of the begin-padded, end-terminated training sentences.
    pub fn train(sentences: &[Sentence], order: usize, vocab_size: usize, alpha: f64) -> Result<Self> {
        validate_shape(order, vocab_size, alpha)?;
        if sentences.is_empty() {
            return Err(Error::InsufficientData("n-gram training needs at least one sentence".into()));
        }
        let mut table = Table::new();
        for s in sentences {
            for_each_event(order, s, |h, t| {
                *table.entry(h.to_vec()).or_default().entry(t).or_insert(0.0) += 1.0;
            });
        }
        Ok(Self::from_table(order, vocab_size, alpha, table))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of stored (history, token) entries.
    pub fn num_entries(&self) -> usize {
        self.rows.values().map(|r| r.next.len()).sum()
    }

    pub fn count(&self, history: &[TokenId], token: TokenId) -> f64 {
        self.rows.get(history).map_or(0.0, |r| r.get(token))
    }

    pub fn history_total(&self, history: &[TokenId]) -> f64 {
        self.rows.get(history).map_or(0.0, |r| r.total)
    }

    pub fn prob(&self, history: &[TokenId], token: TokenId) -> f64 {
        let v = self.vocab_size as f64;
        let (c, total) = self.rows.get(history).map_or((0.0, 0.0), |r| (r.get(token), r.total));
        let denom = total + self.alpha * v;
        if denom == 0.0 {
            // α = 0 and history never seen
            return 1.0 / v;
        }
        (c + self.alpha) / denom
    }

    /// Natural-log probability of `tokens` followed by the end marker.
    pub fn score_sentence(&self, tokens: &[TokenId]) -> f64 {
        let mut total = 0.0;
        for_each_event(self.order, tokens, |h, t| total += self.prob(h, t).ln());
        total
    }

    /// All entries, sorted by (history, token).
    pub fn entries(&self) -> Vec<(&[TokenId], TokenId, f64)> {
        let mut hs: Vec<&Vec<TokenId>> = self.rows.keys().collect();
        hs.sort();
        hs.into_iter().flat_map(|h| self.rows[h].next.iter().map(move |&(t, c)| (h.as_slice(), t, c))).collect()
    }

    pub fn column(&self, token: TokenId) -> NGramColumn {
        let entries =
            self.entries().into_iter().filter(|&(_, t, _)| t == token).map(|(h, _, c)| (h.to_vec(), c)).collect();
        NGramColumn { token, entries }
    }

    fn check_token(&self, token: TokenId) -> Result<()> {
        if token as usize >= self.vocab_size {
            return Err(Error::InvalidCoefficient(token as f64));
        }
        Ok(())
    }

    /// Adds `k` times column `token` to the table, `k ∈ (0, 1)`.
    pub fn mutate(&self, token: TokenId, k: f64) -> Result<Self> {
        self.check_token(token)?;
        check_scale(k)?;
        let mut out = self.clone();
        out.scale_column(token, k);
        Ok(out)
    }

    fn scale_column(&mut self, token: TokenId, k: f64) {
        for row in self.rows.values_mut() {
            if let Ok(i) = row.next.binary_search_by_key(&token, |&(t, _)| t) {
                let c = row.next[i].1;
                row.next[i].1 = c + k * c;
                row.total = row.next.iter().map(|(_, c)| c).sum();
            }
        }
    }

    /// `λ·a + (1−λ)·b` over the union of supports.
    pub fn crossover(a: &Self, b: &Self, lambda: f64) -> Result<Self> {
        check_compatible(a, b)?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidCoefficient(lambda));
        }
        let (wa, wb) = convex_pair(lambda);
        let mut table = Table::new();
        for m in [a, b] {
            for (h, row) in &m.rows {
                let dst = table.entry(h.clone()).or_default();
                for &(t, _) in &row.next {
                    // IEEE addition commutes, so (b, a, 1−λ) yields identical bits.
                    dst.entry(t).or_insert_with(|| wa * a.count(h, t) + wb * b.count(h, t));
                }
            }
        }
        Ok(Self::from_table(a.order, a.vocab_size, a.alpha, table))
    }

    /// `Σ φ_i · models[i]`, then each column scaling in order. Weights must lie
    /// on the closed simplex; zero-weight models contribute nothing, so a
    /// vertex reproduces its source exactly.
    pub fn merge(models: &[&Self], phi: &[f64], deltas: &[ColumnScaling]) -> Result<Self> {
        let first = *models.first().ok_or_else(|| Error::IncompatibleModels("nothing to merge".into()))?;
        if phi.len() != models.len() {
            return Err(Error::SimplexViolation(format!("{} weights for {} models", phi.len(), models.len())));
        }
        simplex::check(phi)?;
        for m in &models[1..] {
            check_compatible(first, m)?;
        }
        let mut table = Table::new();
        for (m, &w) in models.iter().zip(phi) {
            if w == 0.0 {
                continue;
            }
            for (h, row) in &m.rows {
                let dst = table.entry(h.clone()).or_default();
                for &(t, c) in &row.next {
                    dst.entry(t).and_modify(|acc| *acc += w * c).or_insert(w * c);
                }
            }
        }
        let mut out = Self::from_table(first.order, first.vocab_size, first.alpha, table);
        for d in deltas {
            out.check_token(d.token)?;
            check_scale(d.k)?;
            out.scale_column(d.token, d.k);
        }
        Ok(out)
    }

    /// `self + weight · other`, entrywise.
    pub fn add_scaled(&self, other: &Self, weight: f64) -> Result<Self> {
        check_compatible(self, other)?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidCoefficient(weight));
        }
        let mut table: Table = self.rows.iter().map(|(h, r)| (h.clone(), r.next.iter().copied().collect())).collect();
        if weight > 0.0 {
            for (h, row) in &other.rows {
                let dst = table.entry(h.clone()).or_default();
                for &(t, c) in &row.next {
                    *dst.entry(t).or_insert(0.0) += weight * c;
                }
            }
        }
        Ok(Self::from_table(self.order, self.vocab_size, self.alpha, table))
    }

    /// Text serialization: a header line, then `<history ids> <token> <count>` per entry.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "NGRAM v1 order={} vocab={} alpha={}", self.order, self.vocab_size, self.alpha)?;
        for (h, t, c) in self.entries() {
            for x in h {
                write!(w, "{x} ")?;
            }
            writeln!(w, "{t} {c:.16e}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty n-gram file".into()))??;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("NGRAM") || fields.next() != Some("v1") {
            return Err(Error::Parse(format!("bad n-gram header {header:?}")));
        }
        let (mut order, mut vocab, mut alpha) = (None, None, None);
        for f in fields {
            match f.split_once('=') {
                Some(("order", v)) => order = v.parse::<usize>().ok(),
                Some(("vocab", v)) => vocab = v.parse::<usize>().ok(),
                Some(("alpha", v)) => alpha = v.parse::<f64>().ok(),
                _ => return Err(Error::Parse(format!("unknown header field {f:?}"))),
            }
        }
        let (Some(order), Some(vocab), Some(alpha)) = (order, vocab, alpha) else {
            return Err(Error::Parse(format!("incomplete n-gram header {header:?}")));
        };
        validate_shape(order, vocab, alpha)?;
        let mut entries = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != order + 1 {
                return Err(Error::Parse(format!("n-gram entry {line:?} has {} fields", parts.len())));
            }
            let ids = parts[..order]
                .iter()
                .map(|p| p.parse::<TokenId>().map_err(|_| Error::Parse(format!("bad id {p:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let c: f64 = parts[order].parse().map_err(|_| Error::Parse(format!("bad count {:?}", parts[order])))?;
            let (h, t) = ids.split_at(order - 1);
            entries.push((h.to_vec(), t[0], c));
        }
        Self::from_counts(order, vocab, alpha, entries)
    }
}

/// Calls `f(history, token)` for every prediction event of a sentence: each
/// token and then the end marker, with begin-padded histories of length `order − 1`.
pub fn for_each_event<F: FnMut(&[TokenId], TokenId)>(order: usize, tokens: &[TokenId], mut f: F) {
    let ctx = order - 1;
    let mut padded = Vec::with_capacity(ctx + tokens.len() + 1);
    padded.resize(ctx, BOS);
    padded.extend_from_slice(tokens);
    padded.push(EOS);
    for i in ctx..padded.len() {
        f(&padded[i - ctx..i], padded[i]);
    }
}

/// Weights `(w_a, w_b)` for a convex combination with `w_a ≈ λ`. Chosen so
/// that `convex_pair(1−λ)` is exactly `(w_b, w_a)`.
pub fn convex_pair(lambda: f64) -> (f64, f64) {
    let wb = 1.0 - lambda;
    if lambda < 0.5 {
        (1.0 - wb, wb)
    } else {
        (lambda, wb)
    }
}

fn validate_shape(order: usize, vocab_size: usize, alpha: f64) -> Result<()> {
    if order < 1 {
        return Err(Error::Config("n-gram order must be at least 1".into()));
    }
    if vocab_size < 4 {
        return Err(Error::Config(format!("vocabulary of {vocab_size} is too small")));
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Config(format!("smoothing constant {alpha} must be finite and ≥ 0")));
    }
    Ok(())
}

fn check_scale(k: f64) -> Result<()> {
    if k > 0.0 && k < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidCoefficient(k))
    }
}

pub fn check_compatible(a: &NGramModel, b: &NGramModel) -> Result<()> {
    if a.order != b.order || a.vocab_size != b.vocab_size || a.alpha.to_bits() != b.alpha.to_bits() {
        return Err(Error::IncompatibleModels(format!(
            "n-gram (order {}, vocab {}, alpha {}) vs (order {}, vocab {}, alpha {})",
            a.order, a.vocab_size, a.alpha, b.order, b.vocab_size, b.alpha
        )));
    }
    Ok(())
}
