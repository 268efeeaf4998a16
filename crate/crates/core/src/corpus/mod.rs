//! Character-level corpus handling: vocabulary, tokenization, curator
//! partitioning and train/validation/test splits.

pub mod synth;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seeding::{self, streams};

pub type TokenId = u32;
pub type Sentence = Vec<TokenId>;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
/// First id assigned to an ordinary character.
pub const FIRST_CHAR: TokenId = 3;

const RESERVED: [&str; 3] = ["<s>", "</s>", "<unk>"];

/// Character inventory shared by every curator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from the distinct characters of `texts`, in code point order.
    pub fn from_texts<'a, I>(texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut seen = BTreeSet::new();
        for text in texts {
            seen.extend(normalize(text).chars());
        }
        Self::from_chars(seen)
    }

    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Result<Self> {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        for c in chars {
            if index.contains_key(&c) {
                continue;
            }
            index.insert(c, FIRST_CHAR + out.len() as TokenId);
            out.push(c);
        }
        if out.is_empty() {
            return Err(Error::InsufficientData("vocabulary needs at least one character".into()));
        }
        Ok(Self { chars: out, index })
    }

    /// Total number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.chars.len() + FIRST_CHAR as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> Option<TokenId> {
        self.index.get(&c).copied()
    }

    pub fn char_of(&self, id: TokenId) -> Option<char> {
        id.checked_sub(FIRST_CHAR).and_then(|i| self.chars.get(i as usize)).copied()
    }

    /// Surface form of an id; reserved ids render as `<s>`, `</s>`, `<unk>`.
    pub fn token(&self, id: TokenId) -> Option<String> {
        if id < FIRST_CHAR {
            Some(RESERVED[id as usize].to_string())
        } else {
            self.char_of(id).map(String::from)
        }
    }

    /// Writes `<id>\t<token>` lines.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for id in 0..self.len() as TokenId {
            writeln!(w, "{}\t{}", id, self.token(id).unwrap_or_default())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut chars = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("vocabulary line {}: missing tab", lineno + 1)))?;
            let id: TokenId =
                id.parse().map_err(|_| Error::Parse(format!("vocabulary line {}: bad id {id:?}", lineno + 1)))?;
            if id < FIRST_CHAR {
                if tok != RESERVED[id as usize] {
                    return Err(Error::Parse(format!("reserved id {id} must be {}", RESERVED[id as usize])));
                }
                continue;
            }
            let mut it = tok.chars();
            let c = match (it.next(), it.next()) {
                (Some(c), None) => c,
                _ => return Err(Error::Parse(format!("vocabulary line {}: token must be one character", lineno + 1))),
            };
            if id != FIRST_CHAR + chars.len() as TokenId {
                return Err(Error::Parse(format!("vocabulary line {}: ids must be consecutive", lineno + 1)));
            }
            chars.push(c);
        }
        let vocab = Self::from_chars(chars.iter().copied())?;
        if vocab.chars.len() != chars.len() {
            return Err(Error::Parse("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }
}

/// Trims and collapses every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps each character of the normalized text to its id. Unknown characters map
/// to [`UNK`]; sentence markers are not added.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Sentence> {
    let norm = normalize(text);
    if norm.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(norm.chars().map(|c| vocab.id(c).unwrap_or(UNK)).collect())
}

pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> String {
    ids.iter().map(|&id| vocab.char_of(id).unwrap_or('\u{FFFD}')).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split {other:?}"))),
        }
    }
}

/// One curator's data. `split` is `None` until [`split`] has been applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusShard {
    pub id: usize,
    pub split: Option<Split>,
    pub sentences: Vec<Sentence>,
}

impl CorpusShard {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Assigns every sentence to one of `n` shards.
///
/// With probability `skew` a sentence goes to the shard of its length quantile
/// (rank by length, ties by position); otherwise to a uniformly random shard.
pub fn partition(corpus: &[Sentence], n: usize, skew: f64, seed: u64) -> Result<Vec<CorpusShard>> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 curators, got {n}")));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::Config(format!("skew {skew} outside [0, 1]")));
    }
    if corpus.len() < 10 * n {
        return Err(Error::InsufficientData(format!(
            "{} sentences cannot be partitioned among {n} curators (need {})",
            corpus.len(),
            10 * n
        )));
    }
    let total = corpus.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| (corpus[i].len(), i));
    let mut rank = vec![0usize; total];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    let mut rng = seeding::stream(seed, streams::PARTITION);
    let mut shards: Vec<CorpusShard> =
        (0..n).map(|id| CorpusShard { id, split: None, sentences: Vec::new() }).collect();
    for (i, sentence) in corpus.iter().enumerate() {
        let u: f64 = rng.random();
        let target = if u < skew { rank[i] * n / total } else { rng.random_range(0..n) };
        shards[target].sentences.push(sentence.clone());
    }
    Ok(shards)
}

/// Shuffles a shard and cuts it 60/20/20 (floor, floor, remainder).
pub fn split(shard: &CorpusShard, seed: u64) -> Result<(CorpusShard, CorpusShard, CorpusShard)> {
    let n = shard.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "shard {} has {n} sentences, at least 5 are required to split",
            shard.id
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::stream(seeding::mix(seed, shard.id as u64), streams::SPLIT));
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let take = |range: &[usize], split| CorpusShard {
        id: shard.id,
        split: Some(split),
        sentences: range.iter().map(|&i| shard.sentences[i].clone()).collect(),
    };
    Ok((
        take(&idx[..n_train], Split::Train),
        take(&idx[n_train..n_train + n_val], Split::Validation),
        take(&idx[n_train + n_val..], Split::Test),
    ))
}

/// Writes `<split>\t<space-separated ids>` lines for each split shard given.
pub fn write_shards<W: Write>(mut w: W, shards: &[&CorpusShard]) -> Result<()> {
    for shard in shards {
        let split = shard.split.ok_or_else(|| Error::Config(format!("shard {} has not been split", shard.id)))?;
        for s in &shard.sentences {
            writeln!(w, "{split}\t{}", join_ids(s))?;
        }
    }
    Ok(())
}

/// Reads a shard file back as (train, validation, test).
pub fn read_shards<R: BufRead>(r: R, id: usize) -> Result<(CorpusShard, CorpusShard, CorpusShard)> {
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (split, ids) =
            line.split_once('\t').ok_or_else(|| Error::Parse(format!("shard line {}: missing tab", lineno + 1)))?;
        let split: Split = split.parse()?;
        let ids = parse_ids(ids)?;
        if ids.is_empty() {
            return Err(Error::EmptySentence);
        }
        parts[split as usize].push(ids);
    }
    let [train, val, test] = parts;
    let mk = |sentences, split| CorpusShard { id, split: Some(split), sentences };
    Ok((mk(train, Split::Train), mk(val, Split::Validation), mk(test, Split::Test)))
}

pub(crate) fn join_ids(ids: &[TokenId]) -> String {
    ids.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_ids(s: &str) -> Result<Vec<TokenId>> {
    s.split_whitespace().map(|t| t.parse().map_err(|_| Error::Parse(format!("bad token id {t:?}")))).collect()
}
