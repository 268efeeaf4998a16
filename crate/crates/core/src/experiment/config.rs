//! Experiment configuration: flat `key = value` lines under `[section]`
//! headers, `#` or `;` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::FineTuneConfig;
use crate::error::{Error, Result};
use crate::evalsim::ChannelParams;
use crate::gmma::GmmaConfig;
use crate::pair::TrainConfig;
use crate::rmma::RmmaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Gmma,
    Rmma,
    Avg,
    Finetune,
    Reference,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Gmma, Method::Rmma, Method::Avg, Method::Finetune, Method::Reference];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gmma => "gmma",
            Method::Rmma => "rmma",
            Method::Avg => "avg",
            Method::Finetune => "finetune",
            Method::Reference => "reference",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where the text comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    /// One sentence per line.
    File(PathBuf),
    Synthetic {
        sentences: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub curators: usize,
    pub skew: f64,
    pub channel: ChannelParams,
    pub train: TrainConfig,
    pub beta_ngram: f64,
    pub beta_neural: f64,
    pub gmma: GmmaConfig,
    pub rmma: RmmaConfig,
    pub rmma_episodes: usize,
    pub finetune: FineTuneConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    /// Upper bound on merge-validation sentences (0 = no bound).
    pub validation_cap: usize,
    /// Upper bound on sentences per test set (0 = no bound).
    pub test_cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::Synthetic { sentences: 7000, seed: 0 },
            curators: 5,
            skew: 0.6,
            channel: ChannelParams::default(),
            train: TrainConfig::default(),
            beta_ngram: 1.0,
            beta_neural: 1.0,
            gmma: GmmaConfig::default(),
            rmma: RmmaConfig::default(),
            rmma_episodes: 10,
            finetune: FineTuneConfig::default(),
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            output: None,
            validation_cap: 0,
            test_cap: 0,
        }
    }
}

type Sections = BTreeMap<String, BTreeMap<String, (usize, String)>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse(format!("line {lineno}: unterminated section header")))?;
            current = Some(name.trim().to_string());
            sections.entry(name.trim().to_string()).or_default();
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Parse(format!("line {lineno}: expected key = value")))?;
        let section =
            current.as_ref().ok_or_else(|| Error::Parse(format!("line {lineno}: key outside of any section")))?;
        let prev =
            sections.get_mut(section).unwrap().insert(key.trim().to_string(), (lineno, value.trim().to_string()));
        if prev.is_some() {
            return Err(Error::Parse(format!("line {lineno}: duplicate key {}", key.trim())));
        }
    }
    Ok(sections)
}

struct Reader {
    sections: Sections,
}

impl Reader {
    fn take<T: FromStr>(&mut self, section: &str, key: &str, slot: &mut T) -> Result<()> {
        if let Some((lineno, v)) = self.sections.get_mut(section).and_then(|s| s.remove(key)) {
            *slot = v
                .parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: invalid value {v:?} for {section}.{key}")))?;
        }
        Ok(())
    }

    fn take_raw(&mut self, section: &str, key: &str) -> Option<String> {
        self.sections.get_mut(section).and_then(|s| s.remove(key)).map(|(_, v)| v)
    }

    fn finish(self) -> Result<()> {
        for (section, keys) in self.sections {
            if let Some((key, (lineno, _))) = keys.into_iter().next() {
                return Err(Error::Config(format!("line {lineno}: unknown key {section}.{key}")));
            }
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(v: &str, what: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Parse(format!("invalid {what} {s:?}"))))
        .collect()
}

impl ExperimentConfig {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let sections = parse_sections(text)?;
        if let Some(s) = sections.keys().find(|s| !SECTIONS.contains(&s.as_str())) {
            return Err(Error::Config(format!("unknown section [{s}]")));
        }
        let mut r = Reader { sections };
        let mut c = Self::default();

        let (mut sentences, mut corpus_seed) = (7000usize, 0u64);
        if let CorpusSource::Synthetic { sentences: s, seed } = c.corpus {
            (sentences, corpus_seed) = (s, seed);
        }
        r.take("corpus", "synthetic_sentences", &mut sentences)?;
        r.take("corpus", "synthetic_seed", &mut corpus_seed)?;
        c.corpus = match r.take_raw("corpus", "path") {
            Some(p) => CorpusSource::File(base.join(p)),
            None => CorpusSource::Synthetic { sentences, seed: corpus_seed },
        };

        r.take("experiment", "curators", &mut c.curators)?;
        r.take("experiment", "skew", &mut c.skew)?;
        r.take("experiment", "validation_cap", &mut c.validation_cap)?;
        r.take("experiment", "test_cap", &mut c.test_cap)?;
        if let Some(v) = r.take_raw("experiment", "seeds") {
            c.seeds = parse_list(&v, "seed")?;
        }
        if let Some(v) = r.take_raw("experiment", "methods") {
            c.methods = parse_list(&v, "method")?;
        }
        if let Some(v) = r.take_raw("experiment", "output") {
            c.output = Some(base.join(v));
        }

        let ch = &mut c.channel;
        r.take("channel", "n_best", &mut ch.n_best)?;
        r.take("channel", "edit_rate", &mut ch.edit_rate)?;
        r.take("channel", "noise_std", &mut ch.noise_std)?;
        r.take("channel", "per_edit_penalty", &mut ch.per_edit_penalty)?;

        r.take("ngram", "order", &mut c.train.order)?;
        r.take("ngram", "alpha", &mut c.train.alpha)?;
        let nn = &mut c.train.neural;
        r.take("neural", "embed", &mut nn.embed)?;
        r.take("neural", "hidden", &mut nn.hidden)?;
        r.take("neural", "epochs", &mut nn.epochs)?;
        r.take("neural", "learning_rate", &mut nn.learning_rate)?;

        r.take("rescoring", "beta_ngram", &mut c.beta_ngram)?;
        r.take("rescoring", "beta_neural", &mut c.beta_neural)?;

        let g = &mut c.gmma;
        r.take("gmma", "p_mutate", &mut g.p_mutate)?;
        r.take("gmma", "p_crossover", &mut g.p_crossover)?;
        r.take("gmma", "k", &mut g.k)?;
        r.take("gmma", "max_generations", &mut g.max_generations)?;
        r.take("gmma", "patience", &mut g.patience)?;
        r.take("gmma", "min_improvement", &mut g.min_improvement)?;

        let m = &mut c.rmma;
        r.take("rmma", "gamma", &mut m.gamma)?;
        r.take("rmma", "beta", &mut m.beta)?;
        r.take("rmma", "beta_critic", &mut m.beta_critic)?;
        r.take("rmma", "eta", &mut m.eta)?;
        if let Some(v) = r.take_raw("rmma", "target") {
            m.target = if v == "auto" {
                None
            } else {
                Some(v.parse().map_err(|_| Error::Parse(format!("invalid rmma.target {v:?}")))?)
            };
        }
        r.take("rmma", "t_max", &mut m.t_max)?;
        r.take("rmma", "step", &mut m.step)?;
        r.take("rmma", "sigma_mutate", &mut m.sigma_mutate)?;
        r.take("rmma", "epsilon_w", &mut m.epsilon_w)?;
        r.take("rmma", "hidden", &mut m.hidden)?;
        r.take("rmma", "episodes", &mut c.rmma_episodes)?;

        let f = &mut c.finetune;
        r.take("finetune", "epochs", &mut f.epochs)?;
        r.take("finetune", "learning_rate", &mut f.learning_rate)?;
        r.take("finetune", "count_weight", &mut f.count_weight)?;

        r.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.curators < 2 {
            return Err(Error::Config(format!("need at least 2 curators, got {}", self.curators)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if !(0.0..=1.0).contains(&self.skew) {
            return Err(Error::Config(format!("skew {} outside [0, 1]", self.skew)));
        }
        if let CorpusSource::File(p) = &self.corpus {
            if !p.is_file() {
                return Err(Error::Config(format!("corpus file {} does not exist", p.display())));
            }
        }
        if self.rmma_episodes == 0 {
            return Err(Error::Config("rmma.episodes must be at least 1".into()));
        }
        self.channel.validate()?;
        self.gmma.validate(self.curators)?;
        self.rmma.validate(self.curators)
    }

    /// Rendering embedded in reports: everything except the output
    /// directory, so a report does not depend on where it is written.
    pub fn report_ini(&self) -> String {
        Self { output: None, ..self.clone() }.to_ini()
    }

    /// Canonical rendering; parsing it yields the same configuration.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "[corpus]");
        match &self.corpus {
            CorpusSource::File(p) => {
                let _ = writeln!(w, "path = {}", p.display());
            }
            CorpusSource::Synthetic { sentences, seed } => {
                let _ = writeln!(w, "synthetic_sentences = {sentences}\nsynthetic_seed = {seed}");
            }
        }
        let join = |v: Vec<String>| v.join(",");
        let _ = writeln!(w, "\n[experiment]\ncurators = {}\nskew = {}", self.curators, self.skew);
        let _ = writeln!(w, "seeds = {}", join(self.seeds.iter().map(u64::to_string).collect()));
        let _ = writeln!(w, "methods = {}", join(self.methods.iter().map(|m| m.to_string()).collect()));
        let _ = writeln!(w, "validation_cap = {}\ntest_cap = {}", self.validation_cap, self.test_cap);
        if let Some(o) = &self.output {
            let _ = writeln!(w, "output = {}", o.display());
        }
        let ch = &self.channel;
        let _ = writeln!(
            w,
            "\n[channel]\nn_best = {}\nedit_rate = {}\nnoise_std = {}\nper_edit_penalty = {}",
            ch.n_best, ch.edit_rate, ch.noise_std, ch.per_edit_penalty
        );
        let _ = writeln!(w, "\n[ngram]\norder = {}\nalpha = {}", self.train.order, self.train.alpha);
        let nn = &self.train.neural;
        let _ = writeln!(
            w,
            "\n[neural]\nembed = {}\nhidden = {}\nepochs = {}\nlearning_rate = {}",
            nn.embed, nn.hidden, nn.epochs, nn.learning_rate
        );
        let _ = writeln!(w, "\n[rescoring]\nbeta_ngram = {}\nbeta_neural = {}", self.beta_ngram, self.beta_neural);
        let g = &self.gmma;
        let _ = writeln!(
            w,
            "\n[gmma]\np_mutate = {}\np_crossover = {}\nk = {}\nmax_generations = {}\npatience = {}\nmin_improvement = {}",
            g.p_mutate, g.p_crossover, g.k, g.max_generations, g.patience, g.min_improvement
        );
        let m = &self.rmma;
        let target = m.target.map_or("auto".to_string(), |t| t.to_string());
        let _ = writeln!(
            w,
            "\n[rmma]\ngamma = {}\nbeta = {}\nbeta_critic = {}\neta = {}\ntarget = {}\nt_max = {}\nstep = {}\nsigma_mutate = {}\nepsilon_w = {}\nhidden = {}\nepisodes = {}",
            m.gamma, m.beta, m.beta_critic, m.eta, target, m.t_max, m.step, m.sigma_mutate, m.epsilon_w, m.hidden, self.rmma_episodes
        );
        let f = &self.finetune;
        let _ = writeln!(
            w,
            "\n[finetune]\nepochs = {}\nlearning_rate = {}\ncount_weight = {}",
            f.epochs, f.learning_rate, f.count_weight
        );
        s
    }
}

const SECTIONS: [&str; 9] =
    ["corpus", "experiment", "channel", "ngram", "neural", "rescoring", "gmma", "rmma", "finetune"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_rejects_unknown_keys() {
        let text = "# desk run\n[experiment]\ncurators = 3 ; three curators\nseeds = 4, 5\nmethods = avg,rmma\n\n[rmma]\nt_max = 7\ntarget = 0.1\n";
        let c = ExperimentConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.curators, 3);
        assert_eq!(c.seeds, vec![4, 5]);
        assert_eq!(c.methods, vec![Method::Avg, Method::Rmma]);
        assert_eq!(c.rmma.t_max, 7);
        assert_eq!(c.rmma.target, Some(0.1));

        assert!(matches!(ExperimentConfig::parse("[rmma]\nbogus = 1\n", Path::new(".")), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("[nope]\n", Path::new(".")), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("x = 1\n", Path::new(".")), Err(Error::Parse(_))));
        assert!(matches!(ExperimentConfig::parse("[gmma]\nk = many\n", Path::new(".")), Err(Error::Parse(_))));
        assert!(ExperimentConfig::parse("[experiment]\ncurators = 1\n", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("[experiment]\nseeds =\n", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("[corpus]\npath = /does/not/exist\n", Path::new(".")).is_err());
    }

    #[test]
    fn canonical_rendering_round_trips() {
        let mut c = ExperimentConfig::default();
        c.rmma.t_max = 12;
        c.channel.edit_rate = 0.2;
        c.methods = vec![Method::Rmma, Method::Gmma];
        let text = c.to_ini();
        let back = ExperimentConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(back.to_ini(), text);
    }
}
