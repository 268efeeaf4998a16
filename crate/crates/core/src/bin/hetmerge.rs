use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hetmerge::baselines::{direct_average, fine_tune, FineTuneConfig};
use hetmerge::corpus::{synth, Sentence};
use hetmerge::experiment::{
    self, load_pair, load_sources, merge_validation, partition_for_seed, read_partitioned, render_scaling, render_text,
    save_pair, train_sources, write_partitioned, Corpus, CorpusSource, ExperimentConfig, TestSets,
};
use hetmerge::gmma::{self, run_gmma, GmmaConfig};
use hetmerge::rmma::{self, train_rmma, RmmaConfig};
use hetmerge::seeding::{mix, streams};
use hetmerge::Result;

/// Federated merging of heterogeneous (n-gram + neural) language-model pairs.
#[derive(Parser)]
#[command(name = "hetmerge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeMethod {
    Gmma,
    Rmma,
    Avg,
    Finetune,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-domain corpus, one sentence per line.
    GenerateCorpus {
        #[arg(long, default_value_t = 7000)]
        sentences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a corpus into curator shards (split 60/20/20) and two held-out shards.
    Partition {
        #[command(flatten)]
        common: Common,
        /// Text corpus, one sentence per line; overrides the configured corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        curators: Option<usize>,
        #[arg(long)]
        skew: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train each curator's model pair on its training split.
    TrainSources {
        #[command(flatten)]
        common: Common,
        /// Directory written by `partition`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge the source pairs into one target pair.
    Merge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: MergeMethod,
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `train-sources`.
        #[arg(long)]
        sources: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// CER of a model pair on every curator test set and held-out shard.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ngram: PathBuf,
        #[arg(long)]
        neural: PathBuf,
    },
    /// Run the full experiment and write report.json / report.txt / histories.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the configured one.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Direct Average vs RMMA for m = 2..=max-sources sequentially added sources.
    ScalingStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_sources: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateCorpus { sentences, seed, out } => {
            let mut text = synth::generate(sentences, seed, &synth::SynthConfig::default()).join("\n");
            text.push('\n');
            fs::write(out, text)?;
        }
        Command::Partition { common, corpus, curators, skew, out } => {
            let mut cfg = common.load()?;
            if let Some(p) = corpus {
                cfg.corpus = CorpusSource::File(p);
            }
            cfg.curators = curators.unwrap_or(cfg.curators);
            cfg.skew = skew.unwrap_or(cfg.skew);
            cfg.validate()?;
            let corpus = Corpus::load(&cfg.corpus)?;
            let data = partition_for_seed(&corpus, cfg.curators, cfg.skew, common.seed)?;
            write_partitioned(&out, &corpus.vocab, &data)?;
            for (i, c) in data.curators.iter().enumerate() {
                println!(
                    "curator {}: {} train / {} validation / {} test",
                    i + 1,
                    c.train.len(),
                    c.validation.len(),
                    c.test.len()
                );
            }
            for (j, h) in data.held_out.iter().enumerate() {
                println!("held-out {}: {} sentences", j + 1, h.len());
            }
        }
        Command::TrainSources { common, data, out } => {
            let cfg = common.load()?;
            let (vocab, parts) = read_partitioned(&data)?;
            let sources = train_sources(&parts, vocab.len(), &cfg, common.seed)?;
            for (i, s) in sources.iter().enumerate() {
                save_pair(s, &out, &format!("source-{}", i + 1))?;
            }
            println!("trained {} source pairs into {}", sources.len(), out.display());
        }
        Command::Merge { common, method, data, sources, out } => {
            let cfg = common.load()?;
            let seed = common.seed;
            let (vocab, parts) = read_partitioned(&data)?;
            let src = load_sources(&sources)?;
            let validation = merge_validation(&parts, src.len(), vocab.len(), &cfg, seed)?;
            fs::create_dir_all(&out)?;
            let (pair, cer) = match method {
                MergeMethod::Gmma => {
                    let g = GmmaConfig { seed: mix(seed, streams::GMMA), ..cfg.gmma.clone() };
                    let res = run_gmma(&src, &g, &validation)?;
                    gmma::write_history_csv(fs::File::create(out.join("gmma_history.csv"))?, &res.history, true)?;
                    (res.best, res.best_cer)
                }
                MergeMethod::Rmma => {
                    let r = RmmaConfig { seed: mix(seed, streams::RMMA), ..cfg.rmma.clone() };
                    let res = train_rmma(&src, &r, &validation, cfg.rmma_episodes)?;
                    rmma::write_history_csv(fs::File::create(out.join("rmma_history.csv"))?, &res.log)?;
                    res.net.write(fs::File::create(out.join("policy.bin"))?)?;
                    (res.best, res.best_cer)
                }
                MergeMethod::Avg => {
                    let pair = direct_average(&src)?;
                    let cer = validation.evaluate_pair(&pair);
                    (pair, cer)
                }
                MergeMethod::Finetune => {
                    let pooled: Vec<Sentence> =
                        parts.curators.iter().flat_map(|c| c.validation.sentences.iter().cloned()).collect();
                    let f = FineTuneConfig { seed: mix(seed, streams::NEURAL_SHUFFLE), ..cfg.finetune.clone() };
                    let pair = fine_tune(&direct_average(&src)?, &pooled, &f)?;
                    let cer = validation.evaluate_pair(&pair);
                    (pair, cer)
                }
            };
            save_pair(&pair, &out, "merged")?;
            println!("merge-validation CER {}%", pct(cer));
        }
        Command::Evaluate { common, data, ngram, neural } => {
            let cfg = common.load()?;
            let (vocab, parts) = read_partitioned(&data)?;
            let pair = load_pair(&ngram, &neural)?;
            let row = TestSets::new(&parts, vocab.len(), &cfg, common.seed)?.row("pair", &pair, None);
            for (i, c) in row.test.iter().enumerate() {
                println!("test{}\t{}", i + 1, pct(*c));
            }
            println!("average\t{}", pct(row.average));
            for (j, c) in row.held_out.iter().enumerate() {
                println!("heldout{}\t{}", j + 1, pct(*c));
            }
            println!("heldout\t{}", pct(row.held_out_mean));
        }
        Command::Report { config, output } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.output = output.or(cfg.output);
            let bundle = experiment::run_experiment(&cfg)?;
            print!("{}", render_text(&bundle));
            if !bundle.failures.is_empty() && bundle.seeds.is_empty() {
                return Err(hetmerge::Error::Config("every seed failed".into()));
            }
        }
        Command::ScalingStudy { config, max_sources, output } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.output = output.or(cfg.output);
            let table = experiment::scaling_study(&cfg, max_sources)?;
            print!("{}", render_scaling(&table));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
