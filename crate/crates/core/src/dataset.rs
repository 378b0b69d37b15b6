//! Train/validation/test splits, transition buffers and stratified
//! minibatches.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Outcome, Trajectory, Transition};
use crate::synth::child_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.75,
            val: 0.05,
            test: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(alloc::format!(
                "split fractions {parts:?} must be non-negative and sum to 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Splits at trajectory granularity, separately within each outcome group so
/// that every part keeps the cohort's negative-outcome rate up to rounding.
/// Group sizes use largest-remainder rounding; a lone trajectory goes to
/// train.
pub fn split(trajectories: &[Trajectory], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if trajectories.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut out = Split::default();
    for (g, outcome) in [Outcome::Negative, Outcome::Positive].into_iter().enumerate() {
        let mut group: Vec<&Trajectory> = trajectories.iter().filter(|t| t.outcome == outcome).collect();
        group.shuffle(&mut child_rng(spec.seed, g as u64));
        let [n_train, n_val, _] = allocate(group.len(), [spec.train, spec.val, spec.test]);
        for (i, t) in group.into_iter().enumerate() {
            let dest = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.val
            } else {
                &mut out.test
            };
            dest.push(t.clone());
        }
    }
    if out.val.is_empty() || out.test.is_empty() {
        log::warn!(
            "degenerate split: {} train, {} val, {} test",
            out.train.len(),
            out.val.len(),
            out.test.len()
        );
    }
    Ok(out)
}

/// Largest-remainder apportionment of `n` items; leftover ties favor the
/// earlier part.
fn allocate(n: usize, fracs: [f64; 3]) -> [usize; 3] {
    let exact = fracs.map(|f| f * n as f64);
    let mut counts = exact.map(|x| libm::floor(x) as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - counts[a] as f64, exact[b] - counts[b] as f64);
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Position of one transition inside a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransitionRef {
    pub traj: usize,
    pub step: usize,
}

/// Index buffers over a training cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBuffers<'a> {
    pub trajectories: &'a [Trajectory],
    pub main: Vec<TransitionRef>,
    /// Final transitions of negative-outcome trajectories.
    pub terminal_negative: Vec<TransitionRef>,
}

impl<'a> TransitionBuffers<'a> {
    pub fn build(trajectories: &'a [Trajectory]) -> Self {
        let mut main = Vec::new();
        let mut terminal_negative = Vec::new();
        for (i, t) in trajectories.iter().enumerate() {
            main.extend((0..t.len()).map(|step| TransitionRef { traj: i, step }));
            if t.outcome == Outcome::Negative && t.is_terminated() {
                terminal_negative.push(TransitionRef {
                    traj: i,
                    step: t.len() - 1,
                });
            }
        }
        Self {
            trajectories,
            main,
            terminal_negative,
        }
    }

    pub fn get(&self, r: TransitionRef) -> Transition<'a> {
        let t = &self.trajectories[r.traj];
        Transition {
            obs: &t.steps[r.step].obs,
            action: t.steps[r.step].action,
            reward: t.steps[r.step].reward,
            next_obs: t.steps.get(r.step + 1).map(|s| &s.obs),
            terminal: t.steps[r.step].terminal,
            step_index: r.step,
        }
    }
}

pub const BATCH_SIZE: usize = 64;
pub const AUGMENT: usize = 2;

/// What to do when the negative-terminal buffer is empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyAugmentPolicy {
    #[default]
    Error,
    /// Draw the whole batch from the main buffer.
    MainOnly,
}

/// 62 uniform draws with replacement from `main`, then 2 from
/// `terminal_negative`.
pub fn stratified_minibatch<R: Rng>(
    buffers: &TransitionBuffers<'_>,
    rng: &mut R,
    on_empty: EmptyAugmentPolicy,
) -> Result<Vec<TransitionRef>> {
    if buffers.main.is_empty() {
        return Err(Error::EmptyBuffer("main"));
    }
    let augment = if buffers.terminal_negative.is_empty() {
        match on_empty {
            EmptyAugmentPolicy::Error => return Err(Error::EmptyBuffer("terminal_negative")),
            EmptyAugmentPolicy::MainOnly => 0,
        }
    } else {
        AUGMENT
    };
    let mut batch = Vec::with_capacity(BATCH_SIZE);
    for _ in 0..BATCH_SIZE - augment {
        batch.push(buffers.main[rng.random_range(0..buffers.main.len())]);
    }
    for _ in 0..augment {
        batch.push(buffers.terminal_negative[rng.random_range(0..buffers.terminal_negative.len())]);
    }
    Ok(batch)
}

/// Uniform draws with replacement from an arbitrary index buffer.
pub fn uniform_minibatch<R: Rng>(pool: &[TransitionRef], size: usize, rng: &mut R) -> Result<Vec<TransitionRef>> {
    if pool.is_empty() {
        return Err(Error::EmptyBuffer("pool"));
    }
    Ok((0..size).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}
