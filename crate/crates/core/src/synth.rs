//! Random episodic MDPs with a planted dead-end region, a Gaussian
//! observation emitter, behavior policies and seeded offline rollouts.
//!
//! State layout of a generated MDP: non-terminal states `0..n_states`, then
//! the positive terminal at `n_states` and the negative one at
//! `n_states + 1`. The planted region is the last `round(fraction·n)`
//! non-terminal states.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Observation, Outcome, Step, TabularMdp, TerminalKind, Trajectory};
use crate::policy::{sample_index, PolicyMatrix};
use crate::solver::{termination_probabilities, QTable, SpecialStateSets, TerminationMode, TERMINATION_TOL};

/// Generation attempts before [`Error::GenerationFailed`].
const GENERATION_RETRIES: usize = 16;
/// Mass moved into a terminal per repair round on a non-proper state.
const LEAK: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub dead_end_fraction: f64,
    /// Non-terminal successors per row.
    pub branching: usize,
    pub obs_dim: usize,
    pub obs_noise_sd: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Mean mass into the positive terminal from a row outside the planted
    /// region.
    pub terminal_rate: f64,
    /// Probability that a row outside the region reaches the positive
    /// terminal at all.
    pub pos_leak_prob: f64,
    /// Mean mass into the negative terminal from a planted row.
    pub death_rate: f64,
    /// Probability that a row outside the region has a planted successor.
    pub harm_prob: f64,
    /// Probability that a row outside the region reaches the negative
    /// terminal directly.
    pub neg_leak_prob: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_states: 40,
            n_actions: 4,
            dead_end_fraction: 0.2,
            branching: 3,
            obs_dim: 8,
            obs_noise_sd: 0.1,
            max_len: 18,
            seed: 0,
            terminal_rate: 0.15,
            pos_leak_prob: 1.0,
            death_rate: 0.3,
            harm_prob: 0.25,
            neg_leak_prob: 0.05,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, closed: bool| {
            let ok = v >= 0.0 && if closed { v <= 1.0 } else { v < 1.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} out of range")))
            }
        };
        if self.n_states == 0 || self.n_actions == 0 || self.branching == 0 || self.obs_dim == 0 || self.max_len == 0 {
            return Err(Error::InvalidParameter("cohort counts must be positive".into()));
        }
        unit("dead_end_fraction", self.dead_end_fraction, false)?;
        unit("terminal_rate", self.terminal_rate, false)?;
        unit("pos_leak_prob", self.pos_leak_prob, true)?;
        unit("death_rate", self.death_rate, false)?;
        unit("harm_prob", self.harm_prob, true)?;
        unit("neg_leak_prob", self.neg_leak_prob, true)?;
        if !(self.obs_noise_sd >= 0.0) {
            return Err(Error::InvalidParameter("obs_noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    pub fn planted_count(&self) -> usize {
        libm::round(self.dead_end_fraction * self.n_states as f64) as usize
    }

    pub fn positive_terminal(&self) -> usize {
        self.n_states
    }

    pub fn negative_terminal(&self) -> usize {
        self.n_states + 1
    }
}

/// A generated MDP with its planted region.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMdp {
    pub mdp: TabularMdp,
    pub planted: Vec<usize>,
    /// Repair rounds that were needed to make the MDP proper.
    pub leak_rounds: usize,
}

/// Counter-based child generator: stream `index` of the master seed.
pub fn child_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_mdp(spec: &CohortSpec) -> Result<GeneratedMdp> {
    spec.validate()?;
    for attempt in 0..GENERATION_RETRIES {
        let mut rng = child_rng(spec.seed, attempt as u64);
        if let Some(g) = try_generate(spec, &mut rng) {
            return Ok(g);
        }
    }
    Err(Error::GenerationFailed(GENERATION_RETRIES))
}

fn try_generate(spec: &CohortSpec, rng: &mut ChaCha8Rng) -> Option<GeneratedMdp> {
    let n = spec.n_states;
    let total = n + 2;
    let m = spec.n_actions;
    let (pos, neg) = (spec.positive_terminal(), spec.negative_terminal());
    let k = spec.planted_count().min(n);
    let first_planted = n - k;
    let is_planted = |s: usize| s >= first_planted && s < n;

    let mut t = vec![0.0; total * m * total];
    for s in 0..n {
        for a in 0..m {
            let row = &mut t[(s * m + a) * total..(s * m + a + 1) * total];
            if is_planted(s) {
                pick_successors(rng, first_planted..n, spec.branching, row);
                let death = (spec.death_rate * rng.random_range(0.75..1.25)).min(0.95);
                scale_into(row, 1.0 - death);
                row[neg] += death;
            } else {
                if first_planted > 0 {
                    pick_successors(rng, 0..first_planted, spec.branching, row);
                }
                if k > 0 && rng.random_bool(spec.harm_prob) {
                    row[rng.random_range(first_planted..n)] += rng.random_range(0.3..1.0);
                }
                if rng.random_bool(spec.neg_leak_prob) {
                    row[neg] += rng.random_range(0.05..0.3);
                }
                if row.iter().all(|p| *p == 0.0) {
                    row[pos] = 1.0;
                    continue;
                }
                if rng.random_bool(spec.pos_leak_prob) {
                    let leak = (spec.terminal_rate * rng.random_range(0.5..1.5)).min(0.95);
                    scale_into(row, 1.0 - leak);
                    row[pos] += leak;
                } else {
                    scale_into(row, 1.0);
                }
            }
        }
    }
    for term in [pos, neg] {
        for a in 0..m {
            t[(term * m + a) * total + term] = 1.0;
        }
    }
    let mut kinds = vec![TerminalKind::None; total];
    kinds[pos] = TerminalKind::Positive;
    kinds[neg] = TerminalKind::Negative;

    // leak mass into a terminal until every state terminates almost surely
    let all: Vec<usize> = (0..n).collect();
    let mut rounds = 0;
    loop {
        let probe = TabularMdp::from_parts_unchecked(total, m, t.clone(), kinds.clone());
        let (ok, p) = termination_probabilities(&probe, &all, TerminationMode::WorstCase);
        if ok {
            let mdp = TabularMdp::new(total, m, t, kinds).ok()?;
            return Some(GeneratedMdp {
                mdp,
                planted: (first_planted..n).collect(),
                leak_rounds: rounds,
            });
        }
        rounds += 1;
        if rounds > n + 1 {
            return None;
        }
        for s in (0..n).filter(|&s| p[s] < 1.0 - TERMINATION_TOL) {
            let target = if is_planted(s) { neg } else { pos };
            for a in 0..m {
                let row = &mut t[(s * m + a) * total..(s * m + a + 1) * total];
                scale_into(row, 1.0 - LEAK);
                row[target] += LEAK;
            }
        }
    }
}

/// Adds `min(branching, len)` distinct successors from `range` with random
/// weights.
fn pick_successors(rng: &mut ChaCha8Rng, range: core::ops::Range<usize>, branching: usize, row: &mut [f64]) {
    let len = range.len();
    for i in sample(rng, len, branching.min(len)).into_iter() {
        row[range.start + i] += rng.random_range(0.2..1.0);
    }
}

/// Rescales the row so it sums to `mass`.
fn scale_into(row: &mut [f64], mass: f64) {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter_mut().for_each(|p| *p *= mass / sum);
    }
}

/// Per-state Gaussian emission means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub obs_dim: usize,
    pub noise_sd: f64,
    pub means: Vec<Vec<f64>>,
    /// Smallest pairwise distance between means actually achieved.
    pub min_distance: f64,
}

/// Draws one mean per state, uniform in `[-1, 1]^d`, rejecting draws closer
/// than a target distance to earlier means. The target halves whenever a
/// state exhausts its rejection budget, so generation always finishes with
/// distinct means.
pub fn emit_observations(mdp: &TabularMdp, spec: &CohortSpec) -> Emitter {
    let d = spec.obs_dim;
    let mut rng = child_rng(spec.seed ^ 0x5EED_E417, 0);
    let mut target = 0.5 * libm::sqrt(d as f64);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(mdp.n_states());
    while means.len() < mdp.n_states() {
        let mut placed = false;
        for _ in 0..200 {
            let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if means.iter().all(|mu| distance(mu, &cand) >= target) {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            target *= 0.5;
        }
    }
    let mut min_distance = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            min_distance = min_distance.min(distance(&means[i], &means[j]));
        }
    }
    Emitter {
        obs_dim: d,
        noise_sd: spec.obs_noise_sd,
        means,
        min_distance,
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

impl Emitter {
    pub fn observe<R: Rng>(&self, state: usize, rng: &mut R) -> Vec<f64> {
        let mean = &self.means[state];
        if self.noise_sd == 0.0 {
            return mean.clone();
        }
        let noise = Normal::new(0.0, self.noise_sd).expect("noise sd checked non-negative");
        mean.iter().map(|m| m + noise.sample(rng)).collect()
    }

    /// Replaces state observations by emitted vectors. Trajectory `i` uses
    /// stream `i` of `seed`, so the result is independent of cohort order.
    pub fn emit_trajectory(&self, traj: &Trajectory, seed: u64, index: u64) -> Result<Trajectory> {
        let mut rng = child_rng(seed, index);
        let mut out = traj.clone();
        for step in &mut out.steps {
            let s = step.obs.state().ok_or_else(|| Error::NonTabularData(traj.id.clone()))?;
            step.obs = Observation::Vector(self.observe(s, &mut rng));
        }
        Ok(out)
    }
}

/// Rollout environment: an MDP, a start distribution and a length cap.
#[derive(Debug, Clone)]
pub struct Env {
    pub mdp: TabularMdp,
    pub start: Vec<f64>,
    pub max_len: usize,
}

impl Env {
    /// Starts uniformly over `starts`.
    pub fn new(mdp: TabularMdp, starts: &[usize], max_len: usize) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::InvalidParameter("empty start set".into()));
        }
        let mut start = vec![0.0; mdp.n_states()];
        for &s in starts {
            if s >= mdp.n_states() || mdp.is_terminal(s) {
                return Err(Error::InvalidParameter(format!("start state {s} is not a live state")));
            }
            start[s] = 1.0 / starts.len() as f64;
        }
        Ok(Self { mdp, start, max_len })
    }
}

pub fn uniform_policy(mdp: &TabularMdp) -> PolicyMatrix {
    PolicyMatrix::uniform(mdp.n_states(), mdp.n_actions())
}

/// `(1 − ε)` on the greedy action of `q` (lowest index on ties) plus `ε`
/// spread uniformly.
pub fn epsilon_greedy(q: &QTable, epsilon: f64) -> PolicyMatrix {
    let m = q.n_actions();
    let mut probs = vec![epsilon / m as f64; q.n_states() * m];
    for s in 0..q.n_states() {
        probs[s * m + q.greedy(s)] += 1.0 - epsilon;
    }
    PolicyMatrix::from_rows(q.n_states(), m, probs).expect("rows are distributions")
}

/// Multiplies the weight of every action that can enter a dead-end by
/// `1 + bias`.
pub fn harmful_biased(mdp: &TabularMdp, sets: &SpecialStateSets, bias: f64) -> PolicyMatrix {
    let m = mdp.n_actions();
    let mut probs = vec![0.0; mdp.n_states() * m];
    for s in 0..mdp.n_states() {
        let row = &mut probs[s * m..(s + 1) * m];
        for (a, w) in row.iter_mut().enumerate() {
            let harmful = mdp.successors(s, a).iter().any(|&(s2, _)| sets.is_dead_end(s2));
            *w = if harmful { 1.0 + bias } else { 1.0 };
        }
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= z);
    }
    PolicyMatrix::from_rows(mdp.n_states(), m, probs).expect("rows are distributions")
}

/// Regeneration attempts for one trajectory before [`Error::YieldTooLow`].
pub const RETRY_BUDGET: usize = 1000;

/// Trajectories plus the number of truncated rollouts that were discarded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub trajectories: Vec<Trajectory>,
    pub discarded: usize,
}

/// Rolls out trajectory `index`, regenerating until it terminates within
/// `max_len` steps. Returns the trajectory and the discard count.
pub fn rollout_one(env: &Env, policy: &PolicyMatrix, seed: u64, index: usize) -> Result<(Trajectory, usize)> {
    let mdp = &env.mdp;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::ShapeMismatch(format!(
            "policy is {}x{}, mdp is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let mut rng = child_rng(seed, index as u64);
    for attempt in 0..RETRY_BUDGET {
        let mut s = sample_index(&env.start, rng.random());
        let mut steps = Vec::new();
        while steps.len() < env.max_len {
            let a = sample_index(policy.row(s), rng.random());
            let succ = mdp.successors(s, a);
            let weights: Vec<f64> = succ.iter().map(|p| p.1).collect();
            let next = succ[sample_index(&weights, rng.random())].0;
            let terminal = mdp.terminal_kind(next);
            steps.push(Step {
                obs: Observation::State(s),
                action: a,
                reward: mdp.reward(s, a, next),
                terminal,
            });
            if let Some(outcome) = Outcome::from_terminal(terminal) {
                let traj = Trajectory::new(format!("t{index:06}"), outcome, steps)?;
                return Ok((traj, attempt));
            }
            s = next;
        }
    }
    Err(Error::YieldTooLow {
        index,
        attempts: RETRY_BUDGET,
    })
}

pub fn rollout_behavior(env: &Env, policy: &PolicyMatrix, n_trajectories: usize, seed: u64) -> Result<Rollout> {
    let mut out = Rollout {
        trajectories: Vec::with_capacity(n_trajectories),
        discarded: 0,
    };
    for i in 0..n_trajectories {
        let (traj, discarded) = rollout_one(env, policy, seed, i)?;
        out.trajectories.push(traj);
        out.discarded += discarded;
    }
    if out.discarded > 0 {
        log::info!("discarded {} truncated rollouts", out.discarded);
    }
    Ok(out)
}

/// Latent state sequence of a tabular trajectory.
pub fn latent_states(traj: &Trajectory) -> Option<Vec<usize>> {
    traj.steps.iter().map(|s| s.obs.state()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::classify_special_states;

    fn small(seed: u64) -> CohortSpec {
        CohortSpec {
            n_states: 20,
            n_actions: 3,
            dead_end_fraction: 0.25,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_mdp(&small(7)).unwrap();
        let b = generate_mdp(&small(7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.mdp, generate_mdp(&small(8)).unwrap().mdp);
    }

    #[test]
    fn planted_region_is_dead() {
        let spec = CohortSpec {
            n_states: 20,
            dead_end_fraction: 0.25,
            ..small(3)
        };
        let g = generate_mdp(&spec).unwrap();
        assert_eq!(g.planted.len(), 5);
        let sets = classify_special_states(&g.mdp).unwrap();
        assert!(g.planted.iter().all(|s| sets.is_dead_end(*s)));
    }

    #[test]
    fn no_planting_means_no_dead_ends() {
        for seed in 0..10 {
            let spec = CohortSpec {
                dead_end_fraction: 0.0,
                ..small(seed)
            };
            let g = generate_mdp(&spec).unwrap();
            assert!(classify_special_states(&g.mdp).unwrap().dead_ends.is_empty());
        }
    }

    #[test]
    fn sparse_terminal_leak_is_repaired() {
        let spec = CohortSpec {
            pos_leak_prob: 0.1,
            neg_leak_prob: 0.0,
            ..small(11)
        };
        let g = generate_mdp(&spec).unwrap();
        let all: Vec<usize> = g.mdp.non_terminal_states().collect();
        assert!(crate::solver::confirm_termination(&g.mdp, &all, TerminationMode::WorstCase));
    }

    #[test]
    fn emitter_means_are_distinct_and_stable() {
        let spec = small(5);
        let g = generate_mdp(&spec).unwrap();
        let e = emit_observations(&g.mdp, &spec);
        assert!(e.min_distance > 0.0);
        assert_eq!(e, emit_observations(&g.mdp, &spec));
        let noiseless = Emitter { noise_sd: 0.0, ..e };
        let mut rng = child_rng(0, 0);
        assert_eq!(noiseless.observe(3, &mut rng), noiseless.means[3]);
    }

    #[test]
    fn rollouts_terminate_and_reproduce() {
        let spec = small(2);
        let g = generate_mdp(&spec).unwrap();
        let starts: Vec<usize> = (0..spec.n_states).filter(|s| !g.planted.contains(s)).collect();
        let env = Env::new(g.mdp.clone(), &starts, spec.max_len).unwrap();
        let pi = uniform_policy(&g.mdp);
        let a = rollout_behavior(&env, &pi, 200, 9).unwrap();
        let b = rollout_behavior(&env, &pi, 200, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.trajectories.iter().all(|t| t.is_terminated() && t.len() <= spec.max_len));
        assert!(rollout_behavior(&env, &pi, 0, 9).unwrap().trajectories.is_empty());
    }

    #[test]
    fn sure_path_policy_only_sees_positive_outcomes() {
        // s0 --a0--> s1 --a0--> pos; a1 leads to death
        let n = 4;
        let mut t = vec![0.0; n * 2 * n];
        let mut set = |s: usize, a: usize, s2: usize| t[(s * 2 + a) * n + s2] = 1.0;
        set(0, 0, 1);
        set(0, 1, 3);
        set(1, 0, 2);
        set(1, 1, 3);
        for a in 0..2 {
            set(2, a, 2);
            set(3, a, 3);
        }
        let kinds = vec![TerminalKind::None, TerminalKind::None, TerminalKind::Positive, TerminalKind::Negative];
        let mdp = TabularMdp::new(n, 2, t, kinds).unwrap();
        let env = Env::new(mdp, &[0], 5).unwrap();
        let pi = PolicyMatrix::deterministic(2, &[0, 0, 0, 0]);
        let r = rollout_behavior(&env, &pi, 50, 1).unwrap();
        assert!(r.trajectories.iter().all(|t| t.outcome == Outcome::Positive));
    }

    #[test]
    fn impossible_length_cap_reports_yield() {
        // s0 -> s1 -> pos needs two steps
        let n = 3;
        let mut t = vec![0.0; n * n];
        t[1] = 1.0;
        t[n + 2] = 1.0;
        t[2 * n + 2] = 1.0;
        let kinds = vec![TerminalKind::None, TerminalKind::None, TerminalKind::Positive];
        let mdp = TabularMdp::new(n, 1, t, kinds).unwrap();
        let pi = uniform_policy(&mdp);
        let env = Env::new(mdp, &[0], 1).unwrap();
        assert!(matches!(
            rollout_one(&env, &pi, 0, 4),
            Err(Error::YieldTooLow { index: 4, attempts: RETRY_BUDGET })
        ));
    }

    #[test]
    fn harmful_bias_shifts_mass() {
        let g = generate_mdp(&small(6)).unwrap();
        let sets = classify_special_states(&g.mdp).unwrap();
        let pi = harmful_biased(&g.mdp, &sets, 3.0);
        for s in 0..g.mdp.n_states() {
            for a in 0..g.mdp.n_actions() {
                let harmful = g.mdp.successors(s, a).iter().any(|&(s2, _)| sets.is_dead_end(s2));
                let others = (0..g.mdp.n_actions()).filter(|&b| {
                    !g.mdp.successors(s, b).iter().any(|&(s2, _)| sets.is_dead_end(s2))
                });
                for b in others {
                    if harmful {
                        assert!(pi.row(s)[a] > pi.row(s)[b]);
                    }
                }
            }
        }
    }
}
