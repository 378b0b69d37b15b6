//! Offline estimation of the dual value functions: tabular Q-learning over
//! dataset sweeps and fitted double-Q with a small dense network.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_minibatch, EmptyAugmentPolicy, TransitionBuffers};
use crate::error::{Error, Result};
use crate::mdp::{DualKind, Trajectory};
use crate::nn::{Adam, Differentiable, Mlp};
use crate::sc::Encoder;
use crate::solver::{argmax, QTable};
use crate::synth::child_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr = min(1, base / n^power)` on the `n`-th visit of a pair.
    VisitDecay { base: f64, power: f64 },
}

impl LrSchedule {
    pub fn rate(&self, visits: u64) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::VisitDecay { base, power } => (base / libm::pow(visits.max(1) as f64, power)).min(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    pub lr: LrSchedule,
    pub sweeps: usize,
    pub seed: u64,
    /// Initial value of every entry, clamped into the kind's range.
    pub init: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            lr: LrSchedule::Constant { lr: 0.1 },
            sweeps: 50,
            seed: 0,
            init: 0.0,
        }
    }
}

/// `(s, a, dual reward, next state)`; `next` is `None` on terminal steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularTransition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub next: Option<usize>,
}

/// State-indexed transitions of terminated trajectories. An unterminated
/// final step has no successor and is dropped.
pub fn tabular_transitions(data: &[Trajectory], kind: DualKind, n_states: usize, n_actions: usize) -> Result<Vec<TabularTransition>> {
    let mut out = Vec::new();
    for t in data {
        for tr in t.transitions() {
            let s = tr.obs.state().ok_or_else(|| Error::NonTabularData(t.id.clone()))?;
            let next = match tr.next_obs {
                Some(o) => Some(o.state().ok_or_else(|| Error::NonTabularData(t.id.clone()))?),
                None if tr.terminal.is_terminal() => None,
                None => continue,
            };
            if s >= n_states || next.is_some_and(|n| n >= n_states) || tr.action >= n_actions {
                return Err(Error::ShapeMismatch(format!("transition in {} outside {n_states}x{n_actions}", t.id)));
            }
            out.push(TabularTransition {
                s,
                a: tr.action,
                r: kind.reward(tr.terminal),
                next,
            });
        }
    }
    Ok(out)
}

/// Q-learning with `γ = 1` over shuffled sweeps of the dataset. Entries are
/// clamped into the kind's range after every update. `on_sweep(k, q)` sees
/// the table after sweep `k`.
pub fn tabular_q_learning(
    data: &[Trajectory],
    n_states: usize,
    n_actions: usize,
    kind: DualKind,
    config: &TabularConfig,
    mut on_sweep: impl FnMut(usize, &QTable),
) -> Result<QTable> {
    let mut transitions = tabular_transitions(data, kind, n_states, n_actions)?;
    let mut q = QTable::filled(kind, n_states, n_actions, kind.clamp(config.init));
    let mut visits = vec![0u64; n_states * n_actions];
    let mut rng = child_rng(config.seed, 0);
    for sweep in 0..config.sweeps {
        transitions.shuffle(&mut rng);
        for tr in &transitions {
            let idx = tr.s * n_actions + tr.a;
            visits[idx] += 1;
            let alpha = config.lr.rate(visits[idx]);
            let target = tr.r + tr.next.map_or(0.0, |n| q.state_value(n));
            let old = q.get(tr.s, tr.a);
            q.set(tr.s, tr.a, old + alpha * (target - old));
        }
        on_sweep(sweep, &q);
    }
    Ok(q)
}

/// Visit counts per `(s, a)` in a tabular dataset.
pub fn visit_counts(data: &[Trajectory], n_states: usize, n_actions: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; n_states * n_actions];
    for tr in tabular_transitions(data, DualKind::D, n_states, n_actions)? {
        counts[tr.s * n_actions + tr.a] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub target_sync: usize,
    pub updates: usize,
    pub seed: u64,
    pub on_empty: EmptyAugmentPolicy,
    /// Updates per loss-curve entry.
    pub log_every: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 1e-4,
            batch: 64,
            target_sync: 2000,
            updates: 50_000,
            seed: 0,
            on_empty: EmptyAugmentPolicy::Error,
            log_every: 500,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.target_sync == 0 || self.hidden == 0 || self.log_every == 0 {
            return Err(Error::InvalidParameter(
                "dqn needs lr > 0 and positive hidden, target_sync and log_every".into(),
            ));
        }
        if self.batch != crate::dataset::BATCH_SIZE {
            return Err(Error::InvalidParameter(format!(
                "stratified batches hold {} transitions, not {}",
                crate::dataset::BATCH_SIZE,
                self.batch
            )));
        }
        Ok(())
    }
}

/// A value network with one output per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub kind: DualKind,
    pub net: Mlp,
}

impl QNetwork {
    pub fn new(kind: DualKind, input_dim: usize, hidden: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = child_rng(seed, 0);
        Self {
            kind,
            net: Mlp::new(&[input_dim, hidden, n_actions], &mut rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    /// Unclamped outputs for a batch.
    pub fn raw(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.net.forward(x, batch)
    }
}

/// Per-action values, clamped into the kind's range.
pub trait QValues {
    fn kind(&self) -> DualKind;
    fn n_actions(&self) -> usize;
    fn q_values_raw(&self, input: &QInput<'_>) -> Result<Vec<f64>>;

    fn q_values(&self, input: &QInput<'_>) -> Result<Vec<f64>> {
        let kind = self.kind();
        Ok(self.q_values_raw(input)?.into_iter().map(|v| kind.clamp(v)).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum QInput<'a> {
    State(usize),
    Embedding(&'a [f64]),
}

impl QValues for QTable {
    fn kind(&self) -> DualKind {
        QTable::kind(self)
    }

    fn n_actions(&self) -> usize {
        QTable::n_actions(self)
    }

    fn q_values_raw(&self, input: &QInput<'_>) -> Result<Vec<f64>> {
        match *input {
            QInput::State(s) if s < self.n_states() => Ok(self.row(s).to_vec()),
            QInput::State(s) => Err(Error::ShapeMismatch(format!("state {s} outside table of {}", self.n_states()))),
            QInput::Embedding(_) => Err(Error::ShapeMismatch("tables are indexed by state".into())),
        }
    }
}

impl QValues for QNetwork {
    fn kind(&self) -> DualKind {
        self.kind
    }

    fn n_actions(&self) -> usize {
        self.net.output_dim()
    }

    fn q_values_raw(&self, input: &QInput<'_>) -> Result<Vec<f64>> {
        match *input {
            QInput::Embedding(x) if x.len() == self.input_dim() => self.raw(x, 1),
            QInput::Embedding(x) => Err(Error::ShapeMismatch(format!(
                "embedding of length {} for network input {}",
                x.len(),
                self.input_dim()
            ))),
            QInput::State(s) => {
                // tabular inputs are one-hot
                if s >= self.input_dim() {
                    return Err(Error::ShapeMismatch(format!("state {s} outside one-hot of {}", self.input_dim())));
                }
                let mut x = vec![0.0; self.input_dim()];
                x[s] = 1.0;
                self.raw(&x, 1)
            }
        }
    }
}

/// Bootstrapped targets: `r` on terminal rows, otherwise
/// `r + clamp(Q_target(s', argmax_a Q_online(s', a)))`. Returns the targets
/// and the action chosen for each bootstrapped row.
pub fn double_q_targets(
    online: &QNetwork,
    target: &QNetwork,
    next_x: &[f64],
    rewards: &[f64],
    has_next: &[bool],
) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
    let n = rewards.len();
    let m = online.n_actions();
    let q_on = online.raw(next_x, n)?;
    let q_tg = target.raw(next_x, n)?;
    let mut ys = Vec::with_capacity(n);
    let mut chosen = Vec::with_capacity(n);
    for b in 0..n {
        if has_next[b] {
            let a = argmax(&q_on[b * m..(b + 1) * m]);
            ys.push(rewards[b] + online.kind.clamp(q_tg[b * m + a]));
            chosen.push(Some(a));
        } else {
            ys.push(rewards[b]);
            chosen.push(None);
        }
    }
    Ok((ys, chosen))
}

/// Regression batch for one update: inputs, taken actions and targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QBatch {
    pub x: Vec<f64>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

/// Summed `0.5·(Q(x, a) − y)²` and its gradient.
pub fn q_loss_and_grad(q: &QNetwork, batch: &QBatch, grad: bool) -> Result<(f64, Vec<f64>)> {
    let n = batch.actions.len();
    let m = q.n_actions();
    let cache = q.net.forward_cached(&batch.x, n)?;
    let out = cache.output();
    let mut d = vec![0.0; n * m];
    let mut loss = 0.0;
    for b in 0..n {
        let r = out[b * m + batch.actions[b]] - batch.targets[b];
        loss += 0.5 * r * r;
        d[b * m + batch.actions[b]] = r;
    }
    if !grad {
        return Ok((loss, Vec::new()));
    }
    Ok((loss, q.net.backward(&cache, &d).0))
}

impl Differentiable<QBatch> for QNetwork {
    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn param_mut(&mut self, i: usize) -> &mut f64 {
        self.net.param_mut(i)
    }

    fn loss(&self, batch: &QBatch) -> f64 {
        q_loss_and_grad(self, batch, false).expect("probe shape").0
    }

    fn loss_and_grad(&self, batch: &QBatch) -> (f64, Vec<f64>) {
        q_loss_and_grad(self, batch, true).expect("probe shape")
    }
}

/// Embeddings of every step of every trajectory.
pub fn embed_cohort(encoder: &Encoder, data: &[Trajectory]) -> Result<Vec<Vec<Vec<f64>>>> {
    data.iter().map(|t| encoder.encode_trajectory(t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnTraining {
    pub q: QNetwork,
    /// Mean per-transition loss over each `log_every` window.
    pub curve: Vec<f64>,
}

/// Fitted double-Q on stratified minibatches of the frozen embeddings.
pub fn fit_double_q(
    data: &[Trajectory],
    encoder: &Encoder,
    n_actions: usize,
    kind: DualKind,
    config: &DqnConfig,
) -> Result<DqnTraining> {
    config.validate()?;
    if let Some(t) = data.iter().find(|t| !t.is_terminated()) {
        return Err(Error::Unterminated(t.id.clone()));
    }
    let emb = embed_cohort(encoder, data)?;
    let dim = encoder.embed_dim();
    let buffers = TransitionBuffers::build(data);
    let mut online = QNetwork::new(kind, dim, config.hidden, n_actions, config.seed);
    let mut target = online.clone();
    let mut opt = Adam::new(config.lr, online.net.n_params());
    let mut rng = child_rng(config.seed, 1);
    let mut curve = Vec::new();
    let mut window_loss = 0.0;
    let mut window_rows = 0usize;

    let mut batch = QBatch::default();
    let mut next_x = Vec::new();
    let mut rewards = Vec::new();
    let mut has_next = Vec::new();
    for update in 0..config.updates {
        let refs = stratified_minibatch(&buffers, &mut rng, config.on_empty)?;
        batch.x.clear();
        batch.actions.clear();
        next_x.clear();
        rewards.clear();
        has_next.clear();
        for r in &refs {
            let tr = buffers.get(*r);
            if tr.action >= n_actions {
                return Err(Error::ShapeMismatch(format!("action {} outside {n_actions}", tr.action)));
            }
            batch.x.extend_from_slice(&emb[r.traj][r.step]);
            batch.actions.push(tr.action);
            rewards.push(kind.reward(tr.terminal));
            match emb[r.traj].get(r.step + 1) {
                Some(e) if !tr.terminal.is_terminal() => {
                    next_x.extend_from_slice(e);
                    has_next.push(true);
                }
                _ => {
                    next_x.extend(core::iter::repeat_n(0.0, dim));
                    has_next.push(false);
                }
            }
        }
        batch.targets = double_q_targets(&online, &target, &next_x, &rewards, &has_next)?.0;
        let (loss, grads) = q_loss_and_grad(&online, &batch, true)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(update));
        }
        opt.step(&mut online.net, &grads);
        window_loss += loss;
        window_rows += refs.len();
        if (update + 1) % config.log_every == 0 {
            curve.push(window_loss / window_rows as f64);
            window_loss = 0.0;
            window_rows = 0;
        }
        if (update + 1) % config.target_sync == 0 {
            target = online.clone();
        }
    }
    Ok(DqnTraining { q: online, curve })
}
