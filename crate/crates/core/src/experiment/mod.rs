//! End-to-end experiment harness: partition, local training, merging by each
//! method, evaluation on per-curator and held-out test sets, and report
//! emission.
//!
//! Each seed partitions the corpus into `n + 2` skewed shards. Shards 1 and
//! `n` are never trained or merged on; they serve as held-out generalization
//! sets. The others belong to curators and are split 60/20/20. Merging is
//! driven by CER on the union of the curators' validation splits.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{CorpusSource, ExperimentConfig, Method};

use crate::baselines::{centralized_reference, direct_average, fine_tune};
use crate::corpus::{self, synth, CorpusShard, Sentence, Vocabulary};
use crate::error::{Error, Result};
use crate::evalsim::{simulate_channel, EvalSet, Evaluator};
use crate::gmma::{self, run_gmma, GenerationRecord};
use crate::pair::ModelPair;
use crate::rmma::{self, train_rmma, StepRecord};
use crate::seeding::{self, streams};

/// Tokenized corpus with its character inventory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn from_texts(texts: &[String]) -> Result<Self> {
        let texts: Vec<String> = texts.iter().map(|t| corpus::normalize(t)).filter(|t| !t.is_empty()).collect();
        let vocab = Vocabulary::from_texts(texts.iter().map(String::as_str))?;
        let sentences = texts.iter().map(|t| corpus::tokenize(t, &vocab)).collect::<Result<_>>()?;
        Ok(Self { vocab, sentences })
    }

    pub fn load(source: &CorpusSource) -> Result<Self> {
        match source {
            CorpusSource::File(path) => {
                let text = fs::read_to_string(path)?;
                Self::from_texts(&text.lines().map(str::to_string).collect::<Vec<_>>())
            }
            CorpusSource::Synthetic { sentences, seed } => {
                Self::from_texts(&synth::generate(*sentences, *seed, &synth::SynthConfig::default()))
            }
        }
    }
}

/// One curator's 60/20/20 split.
#[derive(Debug, Clone)]
pub struct CuratorData {
    pub train: CorpusShard,
    pub validation: CorpusShard,
    pub test: CorpusShard,
}

#[derive(Debug, Clone)]
pub struct Partitioned {
    pub curators: Vec<CuratorData>,
    pub held_out: Vec<CorpusShard>,
}

/// Shard indices reserved for held-out testing among `n + 2` shards.
pub fn held_out_indices(curators: usize) -> [usize; 2] {
    [1, curators]
}

pub fn partition_for_seed(corpus: &Corpus, curators: usize, skew: f64, seed: u64) -> Result<Partitioned> {
    let shards = corpus::partition(&corpus.sentences, curators + 2, skew, seed)?;
    let held = held_out_indices(curators);
    let mut out = Partitioned { curators: Vec::new(), held_out: Vec::new() };
    for shard in shards {
        if held.contains(&shard.id) {
            out.held_out.push(shard);
        } else {
            let (train, validation, test) = corpus::split(&shard, seed)?;
            out.curators.push(CuratorData { train, validation, test });
        }
    }
    Ok(out)
}

/// Trains every curator's pair with the shared recipe. All curators start
/// the neural half from the same initialization.
pub fn train_sources(
    data: &Partitioned,
    vocab_size: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<ModelPair>> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.neural.seed = seeding::mix(seed, streams::NEURAL_INIT);
    data.curators
        .par_iter()
        .map(|c| ModelPair::train(&c.train.sentences, &c.validation.sentences, vocab_size, &train_cfg))
        .collect()
}

fn capped(sentences: &[Sentence], cap: usize) -> &[Sentence] {
    if cap == 0 {
        sentences
    } else {
        &sentences[..cap.min(sentences.len())]
    }
}

fn channel_set(sentences: &[Sentence], vocab_size: usize, cfg: &ExperimentConfig, seed: u64) -> Result<EvalSet> {
    simulate_channel(sentences, vocab_size, &cfg.channel, seed)
}

/// Merge-validation set: the validation splits of the first `m` curators,
/// each cut to an equal share of `validation_cap`.
pub fn merge_validation(
    data: &Partitioned,
    m: usize,
    vocab_size: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Evaluator> {
    let share = if cfg.validation_cap == 0 { 0 } else { cfg.validation_cap.div_ceil(m) };
    let refs: Vec<Sentence> =
        data.curators[..m].iter().flat_map(|c| capped(&c.validation.sentences, share).iter().cloned()).collect();
    let set = channel_set(&refs, vocab_size, cfg, seeding::mix(seed, 1000))?;
    Ok(Evaluator::new(set, cfg.beta_ngram, cfg.beta_neural))
}

/// Per-curator and held-out test evaluators.
pub struct TestSets {
    pub curators: Vec<Evaluator>,
    pub held_out: Vec<Evaluator>,
}

impl TestSets {
    pub fn new(data: &Partitioned, vocab_size: usize, cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let make = |s: &CorpusShard, salt: u64| -> Result<Evaluator> {
            let set = channel_set(capped(&s.sentences, cfg.test_cap), vocab_size, cfg, seeding::mix(seed, salt))?;
            Ok(Evaluator::new(set, cfg.beta_ngram, cfg.beta_neural))
        };
        Ok(Self {
            curators: data
                .curators
                .iter()
                .enumerate()
                .map(|(i, c)| make(&c.test, 2000 + i as u64))
                .collect::<Result<_>>()?,
            held_out: data.held_out.iter().enumerate().map(|(j, s)| make(s, 3000 + j as u64)).collect::<Result<_>>()?,
        })
    }

    pub fn row(&self, name: &str, pair: &ModelPair, validation: Option<f64>) -> Row {
        let eval = |sets: &[Evaluator]| -> (Vec<f64>, f64) {
            let cers: Vec<f64> = sets.iter().map(|e| e.evaluate_pair(pair)).collect();
            (cers.clone(), pooled(sets, &cers))
        };
        let (test, average) = eval(&self.curators);
        let (held_out, held_out_mean) = eval(&self.held_out);
        Row { name: name.to_string(), test, average, held_out, held_out_mean, validation }
    }
}

/// Micro-average of per-set CERs, weighted by reference characters.
fn pooled(sets: &[Evaluator], cers: &[f64]) -> f64 {
    let lens: Vec<f64> =
        sets.iter().map(|e| e.eval_set().items.iter().map(|i| i.reference.len()).sum::<usize>() as f64).collect();
    cers.iter().zip(&lens).map(|(c, l)| c * l).sum::<f64>() / lens.iter().sum::<f64>()
}

/// CERs (as fractions) of one model pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    /// Per-curator test sets.
    pub test: Vec<f64>,
    /// Pooled over all curator test sets.
    pub average: f64,
    pub held_out: Vec<f64>,
    /// Pooled over the held-out shards.
    pub held_out_mean: f64,
    /// Merge-validation CER, where the method reports one.
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub rows: Vec<Row>,
    #[serde(skip)]
    pub gmma_history: Option<Vec<GenerationRecord>>,
    #[serde(skip)]
    pub rmma_log: Option<Vec<StepRecord>>,
    #[serde(skip)]
    pub rmma_direct_average_cer: Option<f64>,
}

impl SeedReport {
    pub fn row(&self, name: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub config: String,
    pub seeds: Vec<SeedReport>,
    /// Row-wise mean over the seeds that completed.
    pub mean: Vec<Row>,
    pub failures: Vec<Failure>,
}

impl ReportBundle {
    pub fn mean_row(&self, name: &str) -> Option<&Row> {
        self.mean.iter().find(|r| r.name == name)
    }
}

fn method_seed(seed: u64, stream: u64) -> u64 {
    seeding::mix(seed, stream)
}

/// Runs the whole pipeline for one seed.
pub fn run_seed(corpus: &Corpus, cfg: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let v = corpus.vocab.len();
    let data = partition_for_seed(corpus, cfg.curators, cfg.skew, seed)?;
    let sources = train_sources(&data, v, cfg, seed)?;
    let tests = TestSets::new(&data, v, cfg, seed)?;
    let mut report =
        SeedReport { seed, rows: Vec::new(), gmma_history: None, rmma_log: None, rmma_direct_average_cer: None };
    for (i, s) in sources.iter().enumerate() {
        report.rows.push(tests.row(&format!("source{}", i + 1), s, None));
    }
    for &method in &cfg.methods {
        let validation = merge_validation(&data, cfg.curators, v, cfg, seed)?;
        let (pair, val_cer) = match method {
            Method::Gmma => {
                let g = gmma::GmmaConfig { seed: method_seed(seed, streams::GMMA), ..cfg.gmma.clone() };
                let out = run_gmma(&sources, &g, &validation)?;
                report.gmma_history = Some(out.history);
                (out.best, Some(out.best_cer))
            }
            Method::Rmma => {
                let r = rmma::RmmaConfig { seed: method_seed(seed, streams::RMMA), ..cfg.rmma.clone() };
                let out = train_rmma(&sources, &r, &validation, cfg.rmma_episodes)?;
                report.rmma_log = Some(out.log);
                report.rmma_direct_average_cer = Some(out.direct_average_cer);
                (out.best, Some(out.best_cer))
            }
            Method::Avg => {
                let pair = direct_average(&sources)?;
                let cer = validation.evaluate_pair(&pair);
                (pair, Some(cer))
            }
            Method::Finetune => {
                let pooled: Vec<Sentence> =
                    data.curators.iter().flat_map(|c| c.validation.sentences.iter().cloned()).collect();
                let f = crate::baselines::FineTuneConfig {
                    seed: method_seed(seed, streams::NEURAL_SHUFFLE),
                    ..cfg.finetune.clone()
                };
                let pair = fine_tune(&direct_average(&sources)?, &pooled, &f)?;
                let cer = validation.evaluate_pair(&pair);
                (pair, Some(cer))
            }
            Method::Reference => {
                let train: Vec<&[Sentence]> = data.curators.iter().map(|c| c.train.sentences.as_slice()).collect();
                let val: Vec<&[Sentence]> = data.curators.iter().map(|c| c.validation.sentences.as_slice()).collect();
                let mut t = cfg.train.clone();
                t.neural.seed = seeding::mix(seed, streams::NEURAL_INIT);
                (centralized_reference(&train, &val, v, &t)?, None)
            }
        };
        report.rows.push(tests.row(method.name(), &pair, val_cer));
    }
    Ok(report)
}

fn mean_rows(seeds: &[SeedReport]) -> Vec<Row> {
    let Some(first) = seeds.first() else { return Vec::new() };
    let k = seeds.len() as f64;
    first
        .rows
        .iter()
        .enumerate()
        .map(|(i, r0)| {
            let rows: Vec<&Row> = seeds.iter().map(|s| &s.rows[i]).collect();
            let mean = |f: &dyn Fn(&Row) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            Row {
                name: r0.name.clone(),
                test: (0..r0.test.len()).map(|j| mean(&|r| r.test[j])).collect(),
                average: mean(&|r| r.average),
                held_out: (0..r0.held_out.len()).map(|j| mean(&|r| r.held_out[j])).collect(),
                held_out_mean: mean(&|r| r.held_out_mean),
                validation: r0.validation.map(|_| mean(&|r| r.validation.unwrap_or(f64::NAN))),
            }
        })
        .collect()
}

/// Runs every seed (concurrently), aggregates, and writes the reports when
/// `cfg.output` is set. A failing seed is recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle> {
    cfg.validate()?;
    let corpus = Corpus::load(&cfg.corpus)?;
    let results: Vec<Result<SeedReport>> = cfg.seeds.par_iter().map(|&s| run_seed(&corpus, cfg, s)).collect();
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(rep) => seeds.push(rep),
            Err(e) => failures.push(Failure { seed, message: e.to_string() }),
        }
    }
    let bundle = ReportBundle { config: cfg.report_ini(), mean: mean_rows(&seeds), seeds, failures };
    if let Some(dir) = &cfg.output {
        write_report(&bundle, dir)?;
    }
    Ok(bundle)
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn table(rows: &[Row]) -> String {
    let Some(first) = rows.first() else { return String::from("(no rows)\n") };
    let mut header = vec!["method".to_string()];
    header.extend((1..=first.test.len()).map(|i| format!("test{i}")));
    header.push("average".into());
    header.extend((1..=first.held_out.len()).map(|i| format!("heldout{i}")));
    header.push("heldout".into());
    header.push("validation".into());
    let mut lines = vec![header];
    for r in rows {
        let mut l = vec![r.name.clone()];
        l.extend(r.test.iter().map(|&x| pct(x)));
        l.push(pct(r.average));
        l.extend(r.held_out.iter().map(|&x| pct(x)));
        l.push(pct(r.held_out_mean));
        l.push(r.validation.map_or("-".into(), pct));
        lines.push(l);
    }
    let widths: Vec<usize> = (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap()).collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// Human-readable CER table (percent): mean over seeds, then each seed.
pub fn render_text(bundle: &ReportBundle) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = bundle.seeds.iter().map(|r| r.seed.to_string()).collect();
    let _ = writeln!(s, "CER (%) — mean over seeds [{}]\n", seeds.join(", "));
    s.push_str(&table(&bundle.mean));
    for r in &bundle.seeds {
        let _ = writeln!(s, "\nseed {}\n", r.seed);
        s.push_str(&table(&r.rows));
    }
    for f in &bundle.failures {
        let _ = writeln!(s, "\nseed {} failed: {}", f.seed, f.message);
    }
    s
}

/// Writes `report.json`, `report.txt`, `config.ini` and per-seed
/// `seed-<s>/{gmma,rmma}_history.csv` into `dir`. All files are a pure
/// function of the configuration.
pub fn write_report(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(bundle).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("report.txt"), render_text(bundle))?;
    fs::write(dir.join("config.ini"), &bundle.config)?;
    for r in &bundle.seeds {
        let sd = dir.join(format!("seed-{}", r.seed));
        fs::create_dir_all(&sd)?;
        if let Some(h) = &r.gmma_history {
            gmma::write_history_csv(fs::File::create(sd.join("gmma_history.csv"))?, h, false)?;
        }
        if let Some(log) = &r.rmma_log {
            rmma::write_history_csv(fs::File::create(sd.join("rmma_history.csv"))?, log)?;
        }
    }
    Ok(())
}

/// Direct Average and RMMA for the first `m` sources, evaluated on the fixed
/// test sets of all curators and the held-out shards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub sources: usize,
    pub avg_average: f64,
    pub avg_held_out: f64,
    pub rmma_average: f64,
    pub rmma_held_out: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingTable {
    pub config: String,
    pub max_sources: usize,
    pub per_seed: Vec<(u64, Vec<ScalingRow>)>,
    pub mean: Vec<ScalingRow>,
    pub failures: Vec<Failure>,
}

fn scaling_seed(corpus: &Corpus, cfg: &ExperimentConfig, max_sources: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    let v = corpus.vocab.len();
    let data = partition_for_seed(corpus, cfg.curators, cfg.skew, seed)?;
    let sources = train_sources(&data, v, cfg, seed)?;
    let tests = TestSets::new(&data, v, cfg, seed)?;
    (2..=max_sources)
        .map(|m| {
            let validation = merge_validation(&data, m, v, cfg, seed)?;
            let avg = tests.row("avg", &direct_average(&sources[..m])?, None);
            let r = rmma::RmmaConfig { seed: method_seed(seed, streams::RMMA), ..cfg.rmma.clone() };
            let out = train_rmma(&sources[..m], &r, &validation, cfg.rmma_episodes)?;
            let rm = tests.row("rmma", &out.best, None);
            Ok(ScalingRow {
                sources: m,
                avg_average: avg.average,
                avg_held_out: avg.held_out_mean,
                rmma_average: rm.average,
                rmma_held_out: rm.held_out_mean,
            })
        })
        .collect()
}

/// Adds sources one at a time (m = 2..=max_sources) and compares Direct
/// Average with RMMA at each size, mean over the configured seeds.
pub fn scaling_study(cfg: &ExperimentConfig, max_sources: usize) -> Result<ScalingTable> {
    cfg.validate()?;
    if !(2..=cfg.curators).contains(&max_sources) {
        return Err(Error::Config(format!("max sources {max_sources} must be in [2, {}]", cfg.curators)));
    }
    let corpus = Corpus::load(&cfg.corpus)?;
    let results: Vec<Result<Vec<ScalingRow>>> =
        cfg.seeds.par_iter().map(|&s| scaling_seed(&corpus, cfg, max_sources, s)).collect();
    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(rows) => per_seed.push((seed, rows)),
            Err(e) => failures.push(Failure { seed, message: e.to_string() }),
        }
    }
    let k = per_seed.len() as f64;
    let mean = (2..=max_sources)
        .enumerate()
        .filter(|_| !per_seed.is_empty())
        .map(|(i, m)| {
            let avg = |f: fn(&ScalingRow) -> f64| per_seed.iter().map(|(_, rows)| f(&rows[i])).sum::<f64>() / k;
            ScalingRow {
                sources: m,
                avg_average: avg(|r| r.avg_average),
                avg_held_out: avg(|r| r.avg_held_out),
                rmma_average: avg(|r| r.rmma_average),
                rmma_held_out: avg(|r| r.rmma_held_out),
            }
        })
        .collect();
    let table = ScalingTable { config: cfg.report_ini(), max_sources, per_seed, mean, failures };
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&table).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        fs::write(dir.join("scaling.json"), json + "\n")?;
        fs::write(dir.join("scaling.txt"), render_scaling(&table))?;
    }
    Ok(table)
}

pub fn render_scaling(t: &ScalingTable) -> String {
    let mut s = String::from("CER (%) vs number of merged sources — mean over seeds\n\n");
    let _ =
        writeln!(s, "{:>7}  {:>11}  {:>11}  {:>11}  {:>11}", "sources", "avg", "rmma", "avg-heldout", "rmma-heldout");
    for r in &t.mean {
        let _ = writeln!(
            s,
            "{:>7}  {:>11}  {:>11}  {:>11}  {:>11}",
            r.sources,
            pct(r.avg_average),
            pct(r.rmma_average),
            pct(r.avg_held_out),
            pct(r.rmma_held_out)
        );
    }
    for f in &t.failures {
        let _ = writeln!(s, "\nseed {} failed: {}", f.seed, f.message);
    }
    s
}

/// Evaluations RMMA needs to come within 5% (relative) of its final CER, and
/// evaluations GMMA needs to reach that same level (its total if it never
/// does). Returns `(rmma, gmma, gmma_reached)`.
pub fn convergence_costs(report: &SeedReport) -> Option<(usize, usize, bool)> {
    let log = report.rmma_log.as_ref()?;
    let history = report.gmma_history.as_ref()?;
    let da = report.rmma_direct_average_cer?;
    let final_cer = log.iter().map(|r| r.cer).fold(da, f64::min);
    let target = final_cer * 1.05;
    let rmma_cost =
        if da <= target { 1 } else { log.iter().find(|r| r.cer <= target).map_or(usize::MAX, |r| r.evaluations) };
    let hit = history.iter().find(|h| h.best_cer <= target);
    let gmma_cost = hit.map_or_else(|| history.last().map_or(0, |h| h.evaluations), |h| h.evaluations);
    Some((rmma_cost, gmma_cost, hit.is_some()))
}

/// Directory layout shared by the CLI stages: `vocab.tsv`,
/// `curator-<i>.tsv` (split-tagged sentences), `heldout-<j>.tsv`.
pub fn write_partitioned(dir: &Path, vocab: &Vocabulary, data: &Partitioned) -> Result<()> {
    fs::create_dir_all(dir)?;
    vocab.write(fs::File::create(dir.join("vocab.tsv"))?)?;
    for (i, c) in data.curators.iter().enumerate() {
        let f = fs::File::create(dir.join(format!("curator-{}.tsv", i + 1)))?;
        corpus::write_shards(std::io::BufWriter::new(f), &[&c.train, &c.validation, &c.test])?;
    }
    for (j, s) in data.held_out.iter().enumerate() {
        let tagged = CorpusShard { split: Some(corpus::Split::Test), ..s.clone() };
        let f = fs::File::create(dir.join(format!("heldout-{}.tsv", j + 1)))?;
        corpus::write_shards(std::io::BufWriter::new(f), &[&tagged])?;
    }
    Ok(())
}

fn numbered(dir: &Path, prefix: &str, suffix: &str) -> Vec<std::path::PathBuf> {
    (1..).map(|i| dir.join(format!("{prefix}{i}{suffix}"))).take_while(|p| p.is_file()).collect()
}

pub fn read_partitioned(dir: &Path) -> Result<(Vocabulary, Partitioned)> {
    let open = |p: &Path| -> Result<std::io::BufReader<fs::File>> { Ok(std::io::BufReader::new(fs::File::open(p)?)) };
    let vocab = Vocabulary::read(open(&dir.join("vocab.tsv"))?)?;
    let mut data = Partitioned { curators: Vec::new(), held_out: Vec::new() };
    for (i, p) in numbered(dir, "curator-", ".tsv").iter().enumerate() {
        let (train, validation, test) = corpus::read_shards(open(p)?, i)?;
        data.curators.push(CuratorData { train, validation, test });
    }
    for (j, p) in numbered(dir, "heldout-", ".tsv").iter().enumerate() {
        data.held_out.push(corpus::read_shards(open(p)?, j)?.2);
    }
    if data.curators.len() < 2 {
        return Err(Error::InsufficientData(format!("{} holds fewer than 2 curator files", dir.display())));
    }
    Ok((vocab, data))
}

/// Writes `<stem>.ngram` and `<stem>.nnlm`.
pub fn save_pair(pair: &ModelPair, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    pair.ngram.write(std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.ngram")))?))?;
    pair.neural.write(std::io::BufWriter::new(fs::File::create(dir.join(format!("{stem}.nnlm")))?))?;
    Ok(())
}

pub fn load_pair(ngram: &Path, neural: &Path) -> Result<ModelPair> {
    let ng = crate::ngram::NGramModel::read(std::io::BufReader::new(fs::File::open(ngram)?))?;
    let nn = crate::neurallm::NeuralLM::read(fs::File::open(neural)?)?;
    Ok(ModelPair::new(ng, nn))
}

/// Loads `source-<i>.{ngram,nnlm}` for i = 1, 2, …
pub fn load_sources(dir: &Path) -> Result<Vec<ModelPair>> {
    let pairs: Vec<ModelPair> = numbered(dir, "source-", ".ngram")
        .iter()
        .map(|p| load_pair(p, &p.with_extension("nnlm")))
        .collect::<Result<_>>()?;
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} holds fewer than 2 source pairs", dir.display())));
    }
    Ok(pairs)
}
