//! In-process building blocks of the pipeline stages.

use anyhow::{bail, Result};
use ded_core::analysis::{StepValues, ValuedTrajectory};
use ded_core::learner::{embed_cohort, QInput, QNetwork, QValues};
use ded_core::lifegate::{build_lifegate, CellKind, LifeGateLayout, DEFAULT_LAYOUT};
use ded_core::mdp::{DualKind, TabularMdp, Trajectory};
use ded_core::policy::PolicyMatrix;
use ded_core::sc::Encoder;
use ded_core::solver::{ExactSolution, QTable};
use ded_core::synth::{epsilon_greedy, harmful_biased, rollout_one, uniform_policy, Env, Rollout};
use rayon::prelude::*;

use crate::config::{BehaviorConfig, BehaviorKind, LifeGateConfig};
use crate::ValidationError;

/// Rolls out trajectories `first..first + n` in parallel; the result is
/// ordered by index and independent of scheduling.
pub fn rollout_range(env: &Env, policy: &PolicyMatrix, first: usize, n: usize, seed: u64) -> Result<Rollout> {
    let results: Vec<_> = (first..first + n)
        .into_par_iter()
        .map(|i| rollout_one(env, policy, seed, i))
        .collect::<Result<_, _>>()?;
    let discarded = results.iter().map(|(_, d)| d).sum();
    if discarded > 0 {
        log::info!("discarded {discarded} truncated rollouts");
    }
    Ok(Rollout {
        trajectories: results.into_iter().map(|(t, _)| t).collect(),
        discarded,
    })
}

pub fn rollout_parallel(env: &Env, policy: &PolicyMatrix, n: usize, seed: u64) -> Result<Rollout> {
    rollout_range(env, policy, 0, n, seed)
}

/// Whole trajectories, in index order, until at least `n_transitions` steps
/// are collected.
pub fn rollout_transitions(env: &Env, policy: &PolicyMatrix, n_transitions: usize, seed: u64) -> Result<Rollout> {
    const CHUNK: usize = 256;
    let mut out = Rollout::default();
    let mut total = 0;
    while total < n_transitions {
        let chunk = rollout_range(env, policy, out.trajectories.len(), CHUNK, seed)?;
        out.discarded += chunk.discarded;
        for t in chunk.trajectories {
            if total >= n_transitions {
                break;
            }
            total += t.len();
            out.trajectories.push(t);
        }
    }
    Ok(out)
}

pub fn load_layout(cfg: &LifeGateConfig) -> Result<LifeGateLayout> {
    let text = match &cfg.layout {
        Some(p) => std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("reading {}: {e}", p.display()))?,
        None => DEFAULT_LAYOUT.to_string(),
    };
    LifeGateLayout::parse(&text)
        .and_then(|l| l.with_drifts(cfg.death_drift, cfg.deadend_drift_right))
        .map_err(|e| ValidationError(e.to_string()).into())
}

/// Life-Gate episodes started uniformly over every cell the agent can occupy.
pub fn lifegate_env(layout: &LifeGateLayout, max_len: usize) -> Result<Env> {
    let mdp = build_lifegate(layout)?;
    let mut starts = layout.states_of_kind(CellKind::Black);
    starts.extend(layout.states_of_kind(CellKind::Yellow));
    starts.sort_unstable();
    Ok(Env::new(mdp, &starts, max_len)?)
}

pub fn behavior_policy(cfg: &BehaviorConfig, mdp: &TabularMdp, exact: &ExactSolution) -> PolicyMatrix {
    match cfg.policy {
        BehaviorKind::Uniform => uniform_policy(mdp),
        BehaviorKind::EpsilonGreedy => epsilon_greedy(&exact.q_r, cfg.epsilon),
        BehaviorKind::HarmfulBiased => harmful_biased(mdp, &exact.sets, cfg.bias),
    }
}

/// A source of clamped per-action values for every step of a trajectory.
#[derive(Debug, Clone)]
pub enum ValueModel {
    Table(QTable),
    Network { encoder: Encoder, q: QNetwork },
}

impl ValueModel {
    pub fn kind(&self) -> DualKind {
        match self {
            ValueModel::Table(t) => t.kind(),
            ValueModel::Network { q, .. } => q.kind,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            ValueModel::Table(t) => t.n_actions(),
            ValueModel::Network { q, .. } => q.n_actions(),
        }
    }

    /// One clamped row per step.
    pub fn rows(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        match self {
            ValueModel::Table(t) => traj
                .steps
                .iter()
                .map(|s| {
                    let st = s.obs.state().ok_or_else(|| ValidationError(format!("{} is not tabular", traj.id)))?;
                    t.q_values(&QInput::State(st)).map_err(|e| ValidationError(e.to_string()).into())
                })
                .collect(),
            ValueModel::Network { encoder, q } => {
                if encoder.embed_dim() != q.input_dim() {
                    return Err(ValidationError(format!(
                        "shape mismatch: encoder embeds {} values, network expects {}",
                        encoder.embed_dim(),
                        q.input_dim()
                    ))
                    .into());
                }
                embed_cohort(encoder, std::slice::from_ref(traj))
                    .map_err(|e| ValidationError(e.to_string()))?
                    .remove(0)
                    .iter()
                    .map(|e| Ok(q.q_values(&QInput::Embedding(e))?))
                    .collect()
            }
        }
    }
}

/// Per-step D and R rows for every trajectory.
pub fn value_cohort(data: &[Trajectory], d: &ValueModel, r: &ValueModel) -> Result<Vec<ValuedTrajectory>> {
    if d.kind() != DualKind::D || r.kind() != DualKind::R {
        bail!(ValidationError("value models must be one D and one R".into()));
    }
    if d.n_actions() != r.n_actions() {
        bail!(ValidationError(format!(
            "shape mismatch: D has {} actions, R has {}",
            d.n_actions(),
            r.n_actions()
        )));
    }
    data.par_iter()
        .map(|t| {
            let (qd, qr) = (d.rows(t)?, r.rows(t)?);
            let steps = t
                .steps
                .iter()
                .zip(qd.into_iter().zip(qr))
                .map(|(s, (qd, qr))| {
                    if s.action >= qd.len() {
                        bail!(ValidationError(format!(
                            "shape mismatch: {} uses action {} but models have {}",
                            t.id,
                            s.action,
                            qd.len()
                        )));
                    }
                    Ok(StepValues { qd, qr, action: s.action })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ValuedTrajectory {
                id: t.id.clone(),
                outcome: t.outcome,
                steps,
            })
        })
        .collect()
}

/// Number of actions seen in the data (largest index plus one).
pub fn infer_n_actions(data: &[Trajectory]) -> usize {
    data.iter().flat_map(|t| t.steps.iter().map(|s| s.action + 1)).max().unwrap_or(0)
}

/// Number of states seen in tabular data (largest index plus one).
pub fn infer_n_states(data: &[Trajectory]) -> Option<usize> {
    let mut n = 0;
    for t in data {
        for s in &t.steps {
            n = n.max(s.obs.state()? + 1);
        }
    }
    Some(n)
}

pub fn infer_obs_dim(data: &[Trajectory]) -> Result<usize> {
    let dim = data
        .iter()
        .flat_map(|t| t.steps.first())
        .find_map(|s| s.obs.vector().map(<[f64]>::len))
        .ok_or_else(|| ValidationError("cohort has no observation vectors".into()))?;
    Ok(dim)
}
