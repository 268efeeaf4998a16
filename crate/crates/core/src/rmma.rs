//! Reinforced match-and-merge: an actor-critic agent with a one-layer tanh
//! recurrent trunk steers the merge weights of both model families.
//!
//! The decision variables are the n-gram weights `φ` (one simplex row), the
//! per-layer neural weights `θ` (one simplex row per layer) and the
//! accumulated perturbations of each family. Every non-terminal action moves
//! one of them and is rewarded by the sign of the CER change. Terminating is
//! rewarded by whether the CER is under the target.

use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::evalsim::{argmax, Evaluator, ScoreTable};
use crate::neurallm::{LayerDelta, NeuralLM, NUM_LAYERS};
use crate::ngram::{ColumnScaling, NGramModel};
use crate::pair::ModelPair;
use crate::seeding::{self, streams, Rng};
use crate::simplex;

#[derive(Debug, Clone)]
pub struct RmmaConfig {
    pub gamma: f64,
    pub beta: f64,
    pub beta_critic: f64,
    pub eta: f64,
    /// CER threshold rewarded at termination; `None` uses the Direct-Average CER.
    pub target: Option<f64>,
    pub t_max: usize,
    /// Size of one weight adjustment.
    pub step: f64,
    /// Standard deviation of the Gaussian layer perturbation.
    pub sigma_mutate: f64,
    /// Floor on every merge weight.
    pub epsilon_w: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for RmmaConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            beta: 1e-3,
            beta_critic: 1e-3,
            eta: 0.5,
            target: None,
            t_max: 40,
            step: 0.05,
            sigma_mutate: 0.01,
            epsilon_w: 1e-3,
            hidden: 64,
            seed: 0,
        }
    }
}

impl RmmaConfig {
    pub fn validate(&self, num_sources: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("γ = {} must be in [0, 1)", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta_critic > 0.0 && self.eta > 0.0) {
            return Err(Error::Config("β, β_c and η must be positive".into()));
        }
        if !(self.epsilon_w > 0.0 && num_sources as f64 * self.epsilon_w < 1.0) {
            return Err(Error::Config(format!(
                "weight floor {} is infeasible for {num_sources} sources",
                self.epsilon_w
            )));
        }
        if !(self.step > 0.0 && self.sigma_mutate >= 0.0) || self.hidden == 0 {
            return Err(Error::Config("step, σ_m and hidden size must be positive".into()));
        }
        Ok(())
    }
}

/// Merge decision variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWeights {
    pub phi: Vec<f64>,
    /// One row per neural layer.
    pub theta: Vec<Vec<f64>>,
    pub nn_deltas: Vec<LayerDelta>,
    pub ngram_deltas: Vec<ColumnScaling>,
}

impl MergeWeights {
    /// Equal weights, no perturbations: the Direct Average.
    pub fn uniform(n: usize) -> Self {
        Self {
            phi: simplex::uniform(n),
            theta: vec![simplex::uniform(n); NUM_LAYERS],
            nn_deltas: Vec::new(),
            ngram_deltas: Vec::new(),
        }
    }

    pub fn merge_ngram(&self, sources: &[ModelPair]) -> Result<NGramModel> {
        let models: Vec<&NGramModel> = sources.iter().map(|p| &p.ngram).collect();
        NGramModel::merge(&models, &self.phi, &self.ngram_deltas)
    }

    pub fn merge_neural(&self, sources: &[ModelPair]) -> Result<NeuralLM> {
        let models: Vec<&NeuralLM> = sources.iter().map(|p| &p.neural).collect();
        NeuralLM::merge(&models, &self.theta, &self.nn_deltas)
    }

    pub fn merge(&self, sources: &[ModelPair]) -> Result<ModelPair> {
        Ok(ModelPair::new(self.merge_ngram(sources)?, self.merge_neural(sources)?))
    }

    /// Frobenius norm of the summed perturbation of each layer.
    pub fn delta_norms(&self) -> [f64; NUM_LAYERS] {
        let mut sums: [Vec<f64>; NUM_LAYERS] = Default::default();
        for d in &self.nn_deltas {
            let s = &mut sums[d.layer];
            if s.is_empty() {
                s.resize(d.values.len(), 0.0);
            }
            s.iter_mut().zip(&d.values).for_each(|(a, b)| *a += b);
        }
        sums.map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    /// Updates the variables for `action` without merging. Returns which
    /// family changed.
    pub fn apply(&mut self, action: Action, ctx: &ActionContext, rng: &mut Rng) -> Changed {
        match action {
            Action::AdjustPhi { source, up } => {
                shift(&mut self.phi, source, up, ctx);
                Changed::Ngram
            }
            Action::AdjustTheta { layer, source, up } => {
                shift(&mut self.theta[layer], source, up, ctx);
                Changed::Neural
            }
            Action::MutateNGram => {
                let token = rng.random_range(1..ctx.vocab_size as TokenId);
                let k = loop {
                    let k: f64 = rng.random();
                    if k > 0.0 {
                        break k;
                    }
                };
                self.ngram_deltas.push(ColumnScaling { token, k });
                Changed::Ngram
            }
            Action::MutateNN => {
                let layer = rng.random_range(0..NUM_LAYERS);
                let len = ctx.layer_sizes[layer];
                let values = if ctx.sigma_mutate > 0.0 {
                    let normal = Normal::new(0.0, ctx.sigma_mutate).expect("σ_m validated");
                    (0..len).map(|_| normal.sample(rng)).collect()
                } else {
                    vec![0.0; len]
                };
                self.nn_deltas.push(LayerDelta { layer, values });
                Changed::Neural
            }
            Action::Terminate => Changed::Nothing,
        }
    }
}

/// Moves `δ` onto (or off) entry `i`, spreading the opposite change evenly
/// over the other entries, then projects back onto the floored simplex.
fn shift(row: &mut Vec<f64>, i: usize, up: bool, ctx: &ActionContext) {
    let d = if up { ctx.step } else { -ctx.step };
    let rest = d / (row.len() - 1) as f64;
    for (j, x) in row.iter_mut().enumerate() {
        *x += if j == i { d } else { -rest };
    }
    *row = simplex::project_floored(row, ctx.epsilon_w);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Changed {
    Ngram,
    Neural,
    Nothing,
}

/// Fixed quantities needed to execute actions.
#[derive(Debug, Clone)]
pub struct ActionContext {
    pub step: f64,
    pub epsilon_w: f64,
    pub sigma_mutate: f64,
    pub vocab_size: usize,
    pub layer_sizes: [usize; NUM_LAYERS],
}

impl ActionContext {
    pub fn new(cfg: &RmmaConfig, sources: &[ModelPair]) -> Self {
        let dims = sources[0].neural.dims();
        Self {
            step: cfg.step,
            epsilon_w: cfg.epsilon_w,
            sigma_mutate: cfg.sigma_mutate,
            vocab_size: sources[0].ngram.vocab_size(),
            layer_sizes: [0, 1, 2].map(|l| dims.layer_range(l).len()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    AdjustPhi {
        source: usize,
        up: bool,
    },
    AdjustTheta {
        layer: usize,
        source: usize,
        up: bool,
    },
    MutateNGram,
    /// Gaussian perturbation of one neural layer, drawn uniformly when executed.
    MutateNN,
    Terminate,
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sign = |up: bool| if up { '+' } else { '-' };
        match *self {
            Action::AdjustPhi { source, up } => write!(f, "phi{}{}", source, sign(up)),
            Action::AdjustTheta { layer, source, up } => write!(f, "theta{}.{}{}", layer, source, sign(up)),
            Action::MutateNGram => f.write_str("mutate_ngram"),
            Action::MutateNN => f.write_str("mutate_nn"),
            Action::Terminate => f.write_str("terminate"),
        }
    }
}

/// Index ↔ action mapping: `±φ_i`, then `±θ_i^l` row by row, the two
/// mutation actions and finally `Terminate`, `2n + 2Ln + 3` actions in all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub num_sources: usize,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        2 * self.num_sources + 2 * NUM_LAYERS * self.num_sources + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn action(&self, idx: usize) -> Action {
        let n = self.num_sources;
        let phi_end = 2 * n;
        let theta_end = phi_end + 2 * NUM_LAYERS * n;
        if idx < phi_end {
            Action::AdjustPhi { source: idx / 2, up: idx.is_multiple_of(2) }
        } else if idx < theta_end {
            let k = idx - phi_end;
            let rem = k % (2 * n);
            Action::AdjustTheta { layer: k / (2 * n), source: rem / 2, up: rem.is_multiple_of(2) }
        } else {
            match idx - theta_end {
                0 => Action::MutateNGram,
                1 => Action::MutateNN,
                2 => Action::Terminate,
                _ => panic!("action index {idx} out of range"),
            }
        }
    }

    pub fn index(&self, action: Action) -> usize {
        let n = self.num_sources;
        let theta_end = 2 * n + 2 * NUM_LAYERS * n;
        match action {
            Action::AdjustPhi { source, up } => 2 * source + usize::from(!up),
            Action::AdjustTheta { layer, source, up } => 2 * n + layer * 2 * n + 2 * source + usize::from(!up),
            Action::MutateNGram => theta_end,
            Action::MutateNN => theta_end + 1,
            Action::Terminate => theta_end + 2,
        }
    }
}

/// Applies `action` and merges the sources under the resulting weights.
pub fn apply_action(
    weights: &MergeWeights,
    action: Action,
    sources: &[ModelPair],
    ctx: &ActionContext,
    rng: &mut Rng,
) -> Result<(MergeWeights, ModelPair)> {
    if action == Action::Terminate {
        return Err(Error::Config("terminate does not change the merge".into()));
    }
    let mut w = weights.clone();
    w.apply(action, ctx, rng);
    let pair = w.merge(sources)?;
    Ok((w, pair))
}

/// Piecewise reward: `η·sign(prev − cur)` for ordinary steps and
/// `sign(target − cur)` at termination, with `sign(0) = 0`.
pub fn reward(prev_cer: f64, cur_cer: f64, terminate: bool, eta: f64, target: f64) -> f64 {
    if terminate {
        sign(target - cur_cer)
    } else {
        eta * sign(prev_cer - cur_cer)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Agent observation: merge summary followed by evaluation feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// φ, flattened θ, per-layer delta norms, n-gram perturbation count / t_max.
    pub merge: Vec<f64>,
    /// Current CER, CER decrease since the previous step, t / t_max.
    pub feedback: [f64; 3],
}

impl AgentState {
    pub fn dim(num_sources: usize) -> usize {
        num_sources + NUM_LAYERS * num_sources + NUM_LAYERS + 1 + 3
    }

    pub fn new(w: &MergeWeights, cer: f64, cer_drop: f64, t: usize, t_max: usize) -> Self {
        let horizon = t_max.max(1) as f64;
        let mut merge = w.phi.clone();
        for row in &w.theta {
            merge.extend_from_slice(row);
        }
        merge.extend(w.delta_norms());
        merge.push(w.ngram_deltas.len() as f64 / horizon);
        Self { merge, feedback: [cer, cer_drop, t as f64 / horizon] }
    }

    pub fn features(&self) -> Vec<f64> {
        let mut f = self.merge.clone();
        f.extend_from_slice(&self.feedback);
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Greedy,
}

/// Recurrent actor-critic: `h = tanh(W_p·s + U_c·h_prev)`, a softmax actor
/// head and a linear critic head on `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    state_dim: usize,
    hidden: usize,
    actions: usize,
    /// `w_p` (H×S), `u_c` (H×H), `w_a` (A×H), `b_a` (A), `w_v` (H), `b_v` (1).
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct PolicyLayout {
    w_p: usize,
    u_c: usize,
    w_a: usize,
    b_a: usize,
    w_v: usize,
    b_v: usize,
    end: usize,
}

/// Output of one recurrent step.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

/// One-step transition for the TD update. `h_prev` is the hidden state fed
/// with `state`; `h_next_prev` the one fed with `next_state`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub h_next_prev: Vec<f64>,
    pub terminal: bool,
}

impl PolicyNet {
    pub fn zeros(state_dim: usize, hidden: usize, actions: usize) -> Self {
        let mut net = Self { state_dim, hidden, actions, params: Vec::new() };
        net.params = vec![0.0; net.layout().end];
        net
    }

    /// Uniform(−0.1, 0.1) initialization.
    pub fn new(state_dim: usize, hidden: usize, actions: usize, seed: u64) -> Self {
        let mut net = Self::zeros(state_dim, hidden, actions);
        let mut rng = seeding::stream(seed, streams::POLICY_INIT);
        net.params.iter_mut().for_each(|p| *p = rng.random_range(-0.1..0.1));
        net
    }

    pub fn from_params(state_dim: usize, hidden: usize, actions: usize, params: Vec<f64>) -> Result<Self> {
        let net = Self::zeros(state_dim, hidden, actions);
        if params.len() != net.params.len() {
            return Err(Error::ShapeError(format!(
                "{} policy parameters, expected {}",
                params.len(),
                net.params.len()
            )));
        }
        Ok(Self { params, ..net })
    }

    fn layout(&self) -> PolicyLayout {
        let (s, h, a) = (self.state_dim, self.hidden, self.actions);
        let w_p = 0;
        let u_c = w_p + h * s;
        let w_a = u_c + h * h;
        let b_a = w_a + a * h;
        let w_v = b_a + a;
        let b_v = w_v + h;
        PolicyLayout { w_p, u_c, w_a, b_a, w_v, b_v, end: b_v + 1 }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_actions(&self) -> usize {
        self.actions
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, state: &[f64], h_prev: &[f64]) -> Result<PolicyOutput> {
        if state.len() != self.state_dim || h_prev.len() != self.hidden {
            return Err(Error::ShapeError(format!(
                "state {} / hidden {} given, net expects {} / {}",
                state.len(),
                h_prev.len(),
                self.state_dim,
                self.hidden
            )));
        }
        let lay = self.layout();
        let p = &self.params;
        let (s_dim, hd) = (self.state_dim, self.hidden);
        let hidden: Vec<f64> = (0..hd)
            .map(|i| {
                let a: f64 = p[lay.w_p + i * s_dim..][..s_dim].iter().zip(state).map(|(w, x)| w * x).sum();
                let b: f64 = p[lay.u_c + i * hd..][..hd].iter().zip(h_prev).map(|(w, x)| w * x).sum();
                (a + b).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..self.actions)
            .map(|k| p[lay.b_a + k] + p[lay.w_a + k * hd..][..hd].iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs = exps.iter().map(|e| e / z).collect();
        let value = p[lay.b_v] + p[lay.w_v..lay.w_v + hd].iter().zip(&hidden).map(|(w, x)| w * x).sum::<f64>();
        Ok(PolicyOutput { hidden, probs, value })
    }

    /// Shared backward pass: `dh` is the gradient at the hidden layer, the
    /// head-specific parts are filled by the caller.
    fn backprop_trunk(&self, g: &mut [f64], state: &[f64], h_prev: &[f64], hidden: &[f64], dh: &[f64]) {
        let lay = self.layout();
        let (s_dim, hd) = (self.state_dim, self.hidden);
        for i in 0..hd {
            let dz = dh[i] * (1.0 - hidden[i] * hidden[i]);
            for (gw, x) in g[lay.w_p + i * s_dim..][..s_dim].iter_mut().zip(state) {
                *gw += dz * x;
            }
            for (gw, x) in g[lay.u_c + i * hd..][..hd].iter_mut().zip(h_prev) {
                *gw += dz * x;
            }
        }
    }

    /// `∇ log π(action | state, h_prev)`, with `h_prev` held constant.
    pub fn grad_log_prob(&self, state: &[f64], h_prev: &[f64], action: usize) -> Result<Vec<f64>> {
        let out = self.forward(state, h_prev)?;
        let lay = self.layout();
        let hd = self.hidden;
        let mut g = vec![0.0; self.params.len()];
        let mut dh = vec![0.0; hd];
        for k in 0..self.actions {
            let dl = f64::from(u8::from(k == action)) - out.probs[k];
            g[lay.b_a + k] = dl;
            for j in 0..hd {
                g[lay.w_a + k * hd + j] = dl * out.hidden[j];
                dh[j] += dl * self.params[lay.w_a + k * hd + j];
            }
        }
        self.backprop_trunk(&mut g, state, h_prev, &out.hidden, &dh);
        Ok(g)
    }

    /// `∇ v(state, h_prev)`, with `h_prev` held constant.
    pub fn grad_value(&self, state: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward(state, h_prev)?;
        let lay = self.layout();
        let hd = self.hidden;
        let mut g = vec![0.0; self.params.len()];
        g[lay.b_v] = 1.0;
        g[lay.w_v..lay.w_v + hd].copy_from_slice(&out.hidden);
        let dh = self.params[lay.w_v..lay.w_v + hd].to_vec();
        self.backprop_trunk(&mut g, state, h_prev, &out.hidden, &dh);
        Ok(g)
    }

    /// Selects an action: sampled in training mode, argmax (lowest index on
    /// ties) in greedy mode. Returns the action index, the step output and
    /// `log π(action)`.
    pub fn policy_step(
        &self,
        h_prev: &[f64],
        state: &[f64],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(usize, PolicyOutput, f64)> {
        let out = self.forward(state, h_prev)?;
        let action = match mode {
            Mode::Greedy => argmax(out.probs.iter().copied()),
            Mode::Train => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = self.actions - 1;
                for (k, &p) in out.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                pick
            }
        };
        let log_prob = out.probs[action].ln();
        Ok((action, out, log_prob))
    }

    /// One-step TD error `r + γ·v(s') − v(s)`, with `v(s') = 0` on terminal transitions.
    pub fn td_error(&self, tr: &Transition, gamma: f64) -> Result<f64> {
        let v = self.forward(&tr.state, &tr.h_prev)?.value;
        let v_next = if tr.terminal { 0.0 } else { self.forward(&tr.next_state, &tr.h_next_prev)?.value };
        Ok(tr.reward + gamma * v_next - v)
    }

    /// Actor step `+β·δ·∇log π` and critic step `+β_c·δ·∇v`. Returns the new
    /// net and the TD error; the net is returned unchanged when `δ = 0`.
    pub fn td_update(&self, tr: &Transition, gamma: f64, beta: f64, beta_critic: f64) -> Result<(Self, f64)> {
        let delta = self.td_error(tr, gamma)?;
        if !delta.is_finite() {
            return Err(Error::UpdateDiverged);
        }
        if delta == 0.0 {
            return Ok((self.clone(), delta));
        }
        let ga = self.grad_log_prob(&tr.state, &tr.h_prev, tr.action)?;
        let gv = self.grad_value(&tr.state, &tr.h_prev)?;
        let mut next = self.clone();
        for ((p, a), v) in next.params.iter_mut().zip(&ga).zip(&gv) {
            *p += beta * delta * a + beta_critic * delta * v;
        }
        if next.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::UpdateDiverged);
        }
        Ok((next, delta))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "POLICY v1 S={} H={} A={}", self.state_dim, self.hidden, self.actions)?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let nl = buf.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Parse("policy header missing".into()))?;
        let header = std::str::from_utf8(&buf[..nl]).map_err(|_| Error::Parse("policy header is not UTF-8".into()))?;
        let mut f = header.split_whitespace();
        if f.next() != Some("POLICY") || f.next() != Some("v1") {
            return Err(Error::Parse(format!("bad policy header {header:?}")));
        }
        let mut get = |key: &str| -> Result<usize> {
            f.next()
                .and_then(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
                .ok_or_else(|| Error::Parse(format!("policy header field {key} missing")))
        };
        let (s, h, a) = (get("S")?, get("H")?, get("A")?);
        let body = &buf[nl + 1..];
        if body.len() % 8 != 0 {
            return Err(Error::Parse("truncated policy parameters".into()));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_params(s, h, a, params)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct EnvStep {
    pub state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Anything the agent can act in.
pub trait Environment {
    fn num_actions(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize, t: usize, rng: &mut Rng) -> Result<EnvStep>;
}

/// Runs one episode of at most `t_max` actions, applying a TD update after
/// every step in training mode. Returns the number of actions taken.
pub fn run_episode<E: Environment>(
    env: &mut E,
    net: &mut PolicyNet,
    cfg: &RmmaConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<usize> {
    let mut state = env.reset()?;
    let mut h = vec![0.0; net.hidden_size()];
    for t in 1..=cfg.t_max {
        let (action, out, _) = net.policy_step(&h, &state, mode, rng)?;
        let step = env.step(action, t, rng)?;
        if mode == Mode::Train {
            let tr = Transition {
                state: std::mem::take(&mut state),
                action,
                reward: step.reward,
                next_state: step.state.clone(),
                h_prev: h,
                h_next_prev: out.hidden.clone(),
                terminal: step.done,
            };
            *net = net.td_update(&tr, cfg.gamma, cfg.beta, cfg.beta_critic)?.0;
        }
        state = step.state;
        h = out.hidden;
        if step.done {
            return Ok(t);
        }
    }
    Ok(cfg.t_max)
}

/// One row of the RMMA trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub action: String,
    pub cer: f64,
    pub reward: f64,
    pub evaluations: usize,
}

/// The merge problem as an environment over fixed sources and a fixed evaluator.
pub struct MergeEnv<'a> {
    sources: &'a [ModelPair],
    evaluator: &'a Evaluator,
    ctx: ActionContext,
    space: ActionSpace,
    t_max: usize,
    eta: f64,
    target: f64,
    start_scores: (ScoreTable, ScoreTable),
    start_cer: f64,
    weights: MergeWeights,
    scores: (ScoreTable, ScoreTable),
    cer: f64,
    /// Best CER seen since construction and the weights that produced it.
    pub best: (f64, MergeWeights),
    pub log: Vec<StepRecord>,
    pub episode: usize,
    base_evaluations: usize,
}

impl<'a> MergeEnv<'a> {
    /// Evaluates the Direct Average once; every episode starts from it.
    pub fn new(sources: &'a [ModelPair], evaluator: &'a Evaluator, cfg: &RmmaConfig) -> Result<Self> {
        if sources.len() < 2 {
            return Err(Error::InvalidPopulation(format!("RMMA needs at least 2 sources, got {}", sources.len())));
        }
        cfg.validate(sources.len())?;
        let base_evaluations = evaluator.evaluations();
        let weights = MergeWeights::uniform(sources.len());
        let pair = weights.merge(sources)?;
        let scores = (evaluator.score_ngram(&pair.ngram), evaluator.score_neural(&pair.neural));
        let cer = evaluator.cer_from_scores(&scores.0, &scores.1);
        Ok(Self {
            sources,
            evaluator,
            ctx: ActionContext::new(cfg, sources),
            space: ActionSpace { num_sources: sources.len() },
            t_max: cfg.t_max,
            eta: cfg.eta,
            target: cfg.target.unwrap_or(cer),
            start_scores: scores.clone(),
            start_cer: cer,
            best: (cer, weights.clone()),
            weights,
            scores,
            cer,
            log: Vec::new(),
            episode: 0,
            base_evaluations,
        })
    }

    pub fn start_cer(&self) -> f64 {
        self.start_cer
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn evaluations(&self) -> usize {
        self.evaluator.evaluations() - self.base_evaluations
    }

    fn state(&self, cer_drop: f64, t: usize) -> Vec<f64> {
        AgentState::new(&self.weights, self.cer, cer_drop, t, self.t_max).features()
    }
}

impl Environment for MergeEnv<'_> {
    fn num_actions(&self) -> usize {
        self.space.len()
    }

    fn state_dim(&self) -> usize {
        AgentState::dim(self.sources.len())
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.weights = MergeWeights::uniform(self.sources.len());
        self.scores = self.start_scores.clone();
        self.cer = self.start_cer;
        Ok(self.state(0.0, 0))
    }

    fn step(&mut self, action_idx: usize, t: usize, rng: &mut Rng) -> Result<EnvStep> {
        let action = self.space.action(action_idx);
        if action == Action::Terminate {
            let r = reward(self.cer, self.cer, true, self.eta, self.target);
            self.log.push(StepRecord {
                episode: self.episode,
                step: t,
                action: action.to_string(),
                cer: self.cer,
                reward: r,
                evaluations: self.evaluations(),
            });
            return Ok(EnvStep { state: self.state(0.0, t), reward: r, done: true });
        }
        let prev = self.cer;
        match self.weights.apply(action, &self.ctx, rng) {
            Changed::Ngram => self.scores.0 = self.evaluator.score_ngram(&self.weights.merge_ngram(self.sources)?),
            Changed::Neural => self.scores.1 = self.evaluator.score_neural(&self.weights.merge_neural(self.sources)?),
            Changed::Nothing => {}
        }
        self.cer = self.evaluator.cer_from_scores(&self.scores.0, &self.scores.1);
        if self.cer < self.best.0 {
            self.best = (self.cer, self.weights.clone());
        }
        let r = reward(prev, self.cer, false, self.eta, self.target);
        self.log.push(StepRecord {
            episode: self.episode,
            step: t,
            action: action.to_string(),
            cer: self.cer,
            reward: r,
            evaluations: self.evaluations(),
        });
        Ok(EnvStep { state: self.state(prev - self.cer, t), reward: r, done: false })
    }
}

#[derive(Debug, Clone)]
pub struct RmmaOutcome {
    pub net: PolicyNet,
    pub best: ModelPair,
    pub best_weights: MergeWeights,
    pub best_cer: f64,
    pub direct_average_cer: f64,
    pub log: Vec<StepRecord>,
    pub evaluations: usize,
}

fn outcome(env: MergeEnv<'_>, net: PolicyNet) -> Result<RmmaOutcome> {
    let best = env.best.1.merge(env.sources)?;
    Ok(RmmaOutcome {
        net,
        best,
        best_weights: env.best.1.clone(),
        best_cer: env.best.0,
        direct_average_cer: env.start_cer,
        evaluations: env.evaluations(),
        log: env.log,
    })
}

/// A single episode from the Direct Average with `net`. Returns the best pair visited.
pub fn run_rmma_episode(
    sources: &[ModelPair],
    net: &PolicyNet,
    cfg: &RmmaConfig,
    evaluator: &Evaluator,
    mode: Mode,
) -> Result<RmmaOutcome> {
    let mut env = MergeEnv::new(sources, evaluator, cfg)?;
    let mut net = net.clone();
    check_net(&net, &env)?;
    let mut rng = seeding::stream(cfg.seed, streams::RMMA);
    run_episode(&mut env, &mut net, cfg, mode, &mut rng)?;
    outcome(env, net)
}

fn check_net(net: &PolicyNet, env: &MergeEnv<'_>) -> Result<()> {
    if net.state_dim() != env.state_dim() || net.num_actions() != env.num_actions() {
        return Err(Error::ShapeError(format!(
            "policy is {}→{}, environment needs {}→{}",
            net.state_dim(),
            net.num_actions(),
            env.state_dim(),
            env.num_actions()
        )));
    }
    Ok(())
}

/// Fresh policy sized for `num_sources`.
pub fn new_policy(num_sources: usize, cfg: &RmmaConfig) -> PolicyNet {
    PolicyNet::new(AgentState::dim(num_sources), cfg.hidden, ActionSpace { num_sources }.len(), cfg.seed)
}

/// `episodes` training episodes followed by one greedy episode with the
/// final policy. The best pair over all of them is returned.
pub fn train_rmma(
    sources: &[ModelPair],
    cfg: &RmmaConfig,
    evaluator: &Evaluator,
    episodes: usize,
) -> Result<RmmaOutcome> {
    if episodes == 0 {
        return Err(Error::Config("RMMA needs at least one training episode".into()));
    }
    let mut env = MergeEnv::new(sources, evaluator, cfg)?;
    let mut net = new_policy(sources.len(), cfg);
    for episode in 0..=episodes {
        env.episode = episode;
        let mode = if episode < episodes { Mode::Train } else { Mode::Greedy };
        let mut rng = seeding::stream(seeding::mix(cfg.seed, episode as u64), streams::RMMA);
        run_episode(&mut env, &mut net, cfg, mode, &mut rng)?;
    }
    outcome(env, net)
}

/// `episode,step,action,cer,reward,cumulative_evaluations`
pub fn write_history_csv<W: Write>(w: W, log: &[StepRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = crate::gmma::csv_err;
    out.write_record(["episode", "step", "action", "cer", "reward", "cumulative_evaluations"]).map_err(err)?;
    for r in log {
        out.write_record([
            r.episode.to_string(),
            r.step.to_string(),
            r.action.clone(),
            format!("{:.17}", r.cer),
            r.reward.to_string(),
            r.evaluations.to_string(),
        ])
        .map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// Best-so-far CER against cumulative evaluations, starting with the
/// Direct-Average evaluation.
pub fn convergence_curve(out: &RmmaOutcome) -> Vec<(usize, f64)> {
    let mut best = out.direct_average_cer;
    let mut curve = vec![(1, best)];
    for r in &out.log {
        if r.cer < best {
            best = r.cer;
        }
        curve.push((r.evaluations, best));
    }
    curve
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsim::{simulate_channel, ChannelParams};
    use crate::neurallm::NeuralConfig;
    use proptest::prelude::*;

    #[test]
    fn reward_examples() {
        assert_eq!(reward(0.10, 0.08, false, 0.5, 0.0), 0.5);
        assert_eq!(reward(0.10, 0.10, false, 0.5, 0.0), 0.0);
        assert_eq!(reward(0.08, 0.10, false, 0.5, 0.0), -0.5);
        assert_eq!(reward(0.0, 0.12, true, 0.5, 0.10), -1.0);
        assert_eq!(reward(0.0, 0.10, true, 0.5, 0.10), 0.0);
    }

    #[test]
    fn action_space_round_trips() {
        let space = ActionSpace { num_sources: 3 };
        assert_eq!(space.len(), 2 * 3 + 2 * 3 * 3 + 3);
        for i in 0..space.len() {
            assert_eq!(space.index(space.action(i)), i);
        }
        assert_eq!(space.action(0), Action::AdjustPhi { source: 0, up: true });
        assert_eq!(space.action(space.len() - 1), Action::Terminate);
    }

    fn ctx(n_layers_len: usize) -> ActionContext {
        ActionContext { step: 0.05, epsilon_w: 1e-3, sigma_mutate: 0.01, vocab_size: 8, layer_sizes: [n_layers_len; 3] }
    }

    #[test]
    fn adjust_phi_examples() {
        let mut rng = seeding::stream(0, 0);
        let mut w = MergeWeights::uniform(2);
        w.apply(Action::AdjustPhi { source: 0, up: true }, &ctx(1), &mut rng);
        assert!((w.phi[0] - 0.55).abs() < 1e-12 && (w.phi[1] - 0.45).abs() < 1e-12);
        let mut w = MergeWeights::uniform(2);
        w.phi = vec![0.02, 0.98];
        w.apply(Action::AdjustPhi { source: 0, up: false }, &ctx(1), &mut rng);
        assert_eq!(w.phi[0], 1e-3);
        assert!((w.phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn weights_stay_on_floored_simplex(n in 2usize..6, seq in prop::collection::vec(0usize..1000, 1..60), seed in 0u64..1000) {
            let space = ActionSpace { num_sources: n };
            let c = ctx(2);
            let mut rng = seeding::stream(seed, 0);
            let mut w = MergeWeights::uniform(n);
            for a in seq {
                w.apply(space.action(a % space.len()), &c, &mut rng);
                for row in std::iter::once(&w.phi).chain(&w.theta) {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    prop_assert!(row.iter().all(|&x| x >= c.epsilon_w));
                }
            }
        }
    }

    #[test]
    fn zero_net_is_uniform_and_greedy_picks_first() {
        let net = PolicyNet::zeros(4, 3, 5);
        let mut rng = seeding::stream(0, 0);
        let (a, out, lp) = net.policy_step(&[0.0; 3], &[0.3, -0.1, 0.2, 1.0], Mode::Greedy, &mut rng).unwrap();
        assert_eq!(a, 0);
        assert!(out.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert!((lp - 0.2f64.ln()).abs() < 1e-12);
        assert!(matches!(net.forward(&[0.0; 2], &[0.0; 3]), Err(Error::ShapeError(_))));
    }

    #[test]
    fn sampling_frequency_matches_softmax() {
        // actor bias (1, 0), everything else zero: π(0) = e / (e + 1)
        let mut net = PolicyNet::zeros(1, 1, 2);
        let b_a = net.layout().b_a;
        net.params[b_a] = 1.0;
        let mut rng = seeding::stream(1, 0);
        assert_eq!(net.policy_step(&[0.0], &[0.5], Mode::Greedy, &mut rng).unwrap().0, 0);
        let draws = 100_000;
        let zeros =
            (0..draws).filter(|_| net.policy_step(&[0.0], &[0.5], Mode::Train, &mut rng).unwrap().0 == 0).count();
        let e = std::f64::consts::E;
        assert!((zeros as f64 / draws as f64 - e / (e + 1.0)).abs() < 0.01);
    }

    fn transition(net: &PolicyNet, r: f64, terminal: bool) -> Transition {
        let s = vec![0.2, -0.4, 0.9];
        let h0 = vec![0.1, 0.0, -0.2, 0.3];
        let h1 = net.forward(&s, &h0).unwrap().hidden;
        Transition {
            state: s,
            action: 1,
            reward: r,
            next_state: vec![0.5, 0.1, -0.3],
            h_prev: h0,
            h_next_prev: h1,
            terminal,
        }
    }

    #[test]
    fn terminal_td_error_ignores_next_value() {
        // critic bias 0.3, zero weights → v(s) = 0.3 everywhere
        let mut net = PolicyNet::zeros(3, 4, 2);
        let b_v = net.layout().b_v;
        net.params[b_v] = 0.3;
        let tr = transition(&net, 1.0, true);
        assert!((net.td_error(&tr, 0.9).unwrap() - 0.7).abs() < 1e-15);
        let tr = transition(&net, 1.0, false);
        assert!((net.td_error(&tr, 0.9).unwrap() - (1.0 + 0.9 * 0.3 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn zero_td_error_leaves_net_untouched() {
        let net = PolicyNet::new(3, 4, 2, 7);
        let mut tr = transition(&net, 0.0, true);
        tr.reward = net.forward(&tr.state, &tr.h_prev).unwrap().value;
        let (next, delta) = net.td_update(&tr, 0.9, 0.1, 0.1).unwrap();
        assert_eq!(delta, 0.0);
        assert_eq!(next, net);
    }

    fn finite_diff(net: &PolicyNet, f: impl Fn(&PolicyNet) -> f64) -> Vec<f64> {
        let eps = 1e-4;
        (0..net.params.len())
            .map(|i| {
                let mut p = net.clone();
                p.params[i] += eps;
                let up = f(&p);
                p.params[i] -= 2.0 * eps;
                (up - f(&p)) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-3, "param {i}: analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = PolicyNet::new(3, 4, 5, 3);
        let s = [0.4, -0.7, 0.2];
        let h = [0.3, -0.1, 0.05, 0.2];
        for a in 0..5 {
            let g = net.grad_log_prob(&s, &h, a).unwrap();
            let fd = finite_diff(&net, |n| n.forward(&s, &h).unwrap().probs[a].ln());
            assert_close(&g, &fd);
        }
        let g = net.grad_value(&s, &h).unwrap();
        let fd = finite_diff(&net, |n| n.forward(&s, &h).unwrap().value);
        assert_close(&g, &fd);
    }

    struct Bandit {
        eta: f64,
    }

    impl Environment for Bandit {
        fn num_actions(&self) -> usize {
            2
        }
        fn state_dim(&self) -> usize {
            2
        }
        fn reset(&mut self) -> Result<Vec<f64>> {
            Ok(vec![1.0, 0.5])
        }
        fn step(&mut self, action: usize, _t: usize, _rng: &mut seeding::Rng) -> Result<EnvStep> {
            let reward = if action == 0 { self.eta } else { -self.eta };
            Ok(EnvStep { state: vec![1.0, 0.5], reward, done: false })
        }
    }

    #[test]
    fn agent_learns_a_two_armed_bandit() {
        let cfg = RmmaConfig { beta: 0.05, beta_critic: 0.05, t_max: 50, hidden: 4, ..Default::default() };
        let mut net = PolicyNet::new(2, 4, 2, 1);
        let mut env = Bandit { eta: 0.5 };
        let mut rng = seeding::stream(2, 0);
        for _ in 0..10 {
            run_episode(&mut env, &mut net, &cfg, Mode::Train, &mut rng).unwrap();
        }
        let mut h = vec![0.0; 4];
        let mut p0 = 0.0;
        for _ in 0..5 {
            let out = net.forward(&[1.0, 0.5], &h).unwrap();
            p0 = out.probs[0];
            h = out.hidden;
        }
        assert!(p0 > 0.9, "π(0) = {p0}");
    }

    #[test]
    fn policy_serialization_round_trip() {
        let net = PolicyNet::new(3, 4, 5, 9);
        let mut buf = Vec::new();
        net.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"POLICY v1 S=3 H=4 A=5\n"));
        assert_eq!(PolicyNet::read(&buf[..]).unwrap(), net);
    }

    fn toy_sources() -> (Vec<ModelPair>, Evaluator) {
        let data: Vec<Vec<Vec<TokenId>>> = vec![
            vec![vec![3, 4, 5, 3, 4], vec![3, 4, 3, 4, 5], vec![4, 5, 3]],
            vec![vec![6, 7, 6, 7], vec![7, 6, 7, 3], vec![6, 6, 7]],
        ];
        let cfg = NeuralConfig { embed: 3, hidden: 4, epochs: 3, learning_rate: 0.1, seed: 1 };
        let pairs = data
            .iter()
            .map(|d| ModelPair::new(NGramModel::train(d, 3, 8, 0.01).unwrap(), NeuralLM::train(d, d, 8, &cfg).unwrap()))
            .collect();
        let refs: Vec<Vec<TokenId>> = data.iter().flatten().cloned().collect();
        let set =
            simulate_channel(&refs, 8, &ChannelParams { n_best: 5, edit_rate: 0.3, ..Default::default() }, 3).unwrap();
        (pairs, Evaluator::new(set, 1.0, 1.0))
    }

    #[test]
    fn zero_horizon_returns_direct_average() {
        let (src, ev) = toy_sources();
        let cfg = RmmaConfig { t_max: 0, hidden: 4, ..Default::default() };
        let net = new_policy(2, &cfg);
        let out = run_rmma_episode(&src, &net, &cfg, &ev, Mode::Greedy).unwrap();
        assert_eq!(out.best, MergeWeights::uniform(2).merge(&src).unwrap());
        let trained = train_rmma(&src, &cfg, &ev, 1).unwrap();
        assert_eq!(trained.best, out.best);
    }

    #[test]
    fn greedy_episodes_are_deterministic() {
        let (src, ev) = toy_sources();
        let cfg = RmmaConfig { t_max: 6, hidden: 4, seed: 3, ..Default::default() };
        let net = new_policy(2, &cfg);
        let a = run_rmma_episode(&src, &net, &cfg, &ev, Mode::Greedy).unwrap();
        let b = run_rmma_episode(&src, &net, &cfg, &ev, Mode::Greedy).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn replayed_actions_give_identical_merges() {
        let (src, _) = toy_sources();
        let cfg = RmmaConfig::default();
        let c = ActionContext::new(&cfg, &src);
        let space = ActionSpace { num_sources: 2 };
        let run = || {
            let mut rng = seeding::stream(5, 0);
            let mut w = MergeWeights::uniform(2);
            let mut pair = None;
            for i in [0, 3, space.len() - 3, space.len() - 2, 7] {
                let (nw, p) = apply_action(&w, space.action(i), &src, &c, &mut rng).unwrap();
                w = nw;
                pair = Some(p);
            }
            pair.unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn agent_never_beats_exhaustive_search() {
        let (src, ev) = toy_sources();
        let cfg = RmmaConfig { t_max: 3, hidden: 4, sigma_mutate: 0.0, ..Default::default() };
        // deterministic action subset: the weight adjustments only
        let space = ActionSpace { num_sources: 2 };
        let c = ActionContext::new(&cfg, &src);
        let det: Vec<usize> = (0..space.len())
            .filter(|&i| matches!(space.action(i), Action::AdjustPhi { .. } | Action::AdjustTheta { .. }))
            .collect();
        let fresh = Evaluator::new(ev.eval_set().clone(), 1.0, 1.0);
        let mut best = fresh.evaluate_pair(&MergeWeights::uniform(2).merge(&src).unwrap());
        let mut frontier = vec![MergeWeights::uniform(2)];
        let mut rng = seeding::stream(0, 0);
        for _ in 0..cfg.t_max {
            let mut next = Vec::new();
            for w in &frontier {
                for &a in &det {
                    let (nw, pair) = apply_action(w, space.action(a), &src, &c, &mut rng).unwrap();
                    best = best.min(fresh.evaluate_pair(&pair));
                    next.push(nw);
                }
            }
            frontier = next;
        }
        let trained =
            train_rmma(&src, &RmmaConfig { t_max: 3, hidden: 4, sigma_mutate: 0.0, ..Default::default() }, &ev, 3)
                .unwrap();
        // MutateNGram may be drawn by the agent; the search is only over weights, so compare
        // against episodes that used weight actions alone.
        let weight_only = trained
            .log
            .iter()
            .all(|r| r.action.starts_with("phi") || r.action.starts_with("theta") || r.action == "terminate");
        if weight_only {
            assert!(trained.best_cer >= best);
        }
        let curve = convergence_curve(&trained);
        assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1));
    }
}
