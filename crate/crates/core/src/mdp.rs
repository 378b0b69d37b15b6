//! Episodic tabular decision processes, terminal semantics and the dual
//! reward construction.
//!
//! A [`TabularMdp`] owns a dense `(state, action, next_state)` probability
//! tensor plus a per-state terminal label. Rewards are never stored densely:
//! they are a function of the successor's terminal label and the MDP's
//! [`RewardModel`].

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on transition row sums. Rows within it are renormalized.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    #[default]
    None,
    Positive,
    Negative,
}

impl TerminalKind {
    pub fn is_terminal(self) -> bool {
        self != TerminalKind::None
    }
}

/// Which of the two dual MDPs a value function belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualKind {
    /// Dead-end MDP: −1 on entering a negative terminal.
    D,
    /// Rescue MDP: +1 on entering a positive terminal.
    R,
}

impl DualKind {
    pub fn reward(self, next: TerminalKind) -> f64 {
        match (self, next) {
            (DualKind::D, TerminalKind::Negative) => -1.0,
            (DualKind::R, TerminalKind::Positive) => 1.0,
            _ => 0.0,
        }
    }

    /// Legal value range `(lo, hi)`.
    pub fn range(self) -> (f64, f64) {
        match self {
            DualKind::D => (-1.0, 0.0),
            DualKind::R => (0.0, 1.0),
        }
    }

    pub fn clamp(self, v: f64) -> f64 {
        let (lo, hi) = self.range();
        v.clamp(lo, hi)
    }

    pub fn name(self) -> &'static str {
        match self {
            DualKind::D => "D",
            DualKind::R => "R",
        }
    }
}

impl fmt::Display for DualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardModel {
    /// Base environment: +1 entering a positive terminal, −1 entering a
    /// negative one.
    #[default]
    Outcome,
    Dual(DualKind),
}

impl RewardModel {
    pub fn reward(self, next: TerminalKind) -> f64 {
        match self {
            RewardModel::Outcome => match next {
                TerminalKind::Positive => 1.0,
                TerminalKind::Negative => -1.0,
                TerminalKind::None => 0.0,
            },
            RewardModel::Dual(kind) => kind.reward(next),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Issue {
    Shape { expected: usize, got: usize },
    BadDiscount(f64),
    NegativeProbability { state: usize, action: usize, next: usize, p: f64 },
    RowSum { state: usize, action: usize, sum: f64 },
    NonAbsorbingTerminal { state: usize, action: usize, self_prob: f64 },
    NoTerminal,
    TerminalUnreachable { state: usize },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Shape { expected, got } => {
                write!(f, "transition tensor has {got} entries, expected {expected}")
            }
            Issue::BadDiscount(g) => write!(f, "discount {g} outside [0, 1]"),
            Issue::NegativeProbability { state, action, next, p } => {
                write!(f, "T({state},{action},{next}) = {p} is negative")
            }
            Issue::RowSum { state, action, sum } => {
                write!(f, "row ({state},{action}) sums to {sum}")
            }
            Issue::NonAbsorbingTerminal { state, action, self_prob } => write!(
                f,
                "terminal {state} is not absorbing under action {action} (self-transition {self_prob})"
            ),
            Issue::NoTerminal => write!(f, "no terminal state"),
            Issue::TerminalUnreachable { state } => {
                write!(f, "no terminal reachable from state {state}")
            }
        }
    }
}

/// Every violated invariant of an MDP. Empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("valid");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Episodic tabular MDP.
///
/// Constructed through [`TabularMdp::new`], which validates and renormalizes
/// rows within [`PROB_TOL`]. [`TabularMdp::from_parts_unchecked`] exists so
/// that malformed inputs can still be inspected by [`validate_mdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    terminal_kind: Vec<TerminalKind>,
    discount: f64,
    reward: RewardModel,
    // CSR view of the positive entries of `transition`
    offsets: Vec<usize>,
    successors: Vec<(usize, f64)>,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        terminal_kind: Vec<TerminalKind>,
    ) -> Result<Self> {
        let mut mdp = Self::from_parts_unchecked(n_states, n_actions, transition, terminal_kind);
        let report = validate_mdp(&mdp);
        if !report.is_valid() {
            return Err(Error::InvalidMdp(report));
        }
        mdp.renormalize();
        Ok(mdp)
    }

    pub fn from_parts_unchecked(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        terminal_kind: Vec<TerminalKind>,
    ) -> Self {
        let mut mdp = Self {
            n_states,
            n_actions,
            transition,
            terminal_kind,
            discount: 1.0,
            reward: RewardModel::Outcome,
            offsets: Vec::new(),
            successors: Vec::new(),
        };
        if mdp.transition.len() == n_states * n_actions * n_states {
            mdp.rebuild_support();
        }
        mdp
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    fn renormalize(&mut self) {
        let n = self.n_states;
        for row in self.transition.chunks_mut(n) {
            let sum: f64 = row.iter().sum();
            if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        self.rebuild_support();
    }

    fn rebuild_support(&mut self) {
        let n = self.n_states;
        self.offsets.clear();
        self.successors.clear();
        self.offsets.push(0);
        for row in self.transition.chunks(n) {
            self.successors
                .extend(row.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(j, p)| (j, *p)));
            self.offsets.push(self.successors.len());
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward_model(&self) -> RewardModel {
        self.reward
    }

    pub fn terminal_kind(&self, s: usize) -> TerminalKind {
        self.terminal_kind[s]
    }

    pub fn terminal_kinds(&self) -> &[TerminalKind] {
        &self.terminal_kind
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal_kind[s].is_terminal()
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(move |&s| !self.is_terminal(s))
    }

    pub fn transition_tensor(&self) -> &[f64] {
        &self.transition
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Positive-probability successors of `(s, a)` in ascending state order.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        let k = s * self.n_actions + a;
        &self.successors[self.offsets[k]..self.offsets[k + 1]]
    }

    /// Reward of the transition `(s, a, next)` under this MDP's reward model.
    /// Transitions out of terminals are always zero.
    pub fn reward(&self, s: usize, _a: usize, next: usize) -> f64 {
        if self.is_terminal(s) {
            0.0
        } else {
            self.reward.reward(self.terminal_kind[next])
        }
    }
}

/// Checks every structural invariant and reports all violations.
pub fn validate_mdp(mdp: &TabularMdp) -> ValidationReport {
    let mut issues = Vec::new();
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let expected = n * m * n;
    if mdp.transition.len() != expected || mdp.terminal_kind.len() != n {
        issues.push(Issue::Shape {
            expected,
            got: mdp.transition.len(),
        });
        return ValidationReport { issues };
    }
    if !(0.0..=1.0).contains(&mdp.discount) {
        issues.push(Issue::BadDiscount(mdp.discount));
    }
    for s in 0..n {
        for a in 0..m {
            let row = mdp.row(s, a);
            let mut sum = 0.0;
            for (next, &p) in row.iter().enumerate() {
                if p < 0.0 || !p.is_finite() {
                    issues.push(Issue::NegativeProbability { state: s, action: a, next, p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL || !sum.is_finite() {
                issues.push(Issue::RowSum { state: s, action: a, sum });
            }
            if mdp.is_terminal(s) && (row[s] - 1.0).abs() > PROB_TOL {
                issues.push(Issue::NonAbsorbingTerminal {
                    state: s,
                    action: a,
                    self_prob: row[s],
                });
            }
        }
    }
    if !mdp.terminal_kind.iter().any(|k| k.is_terminal()) {
        issues.push(Issue::NoTerminal);
    } else {
        // reverse breadth-first search from the terminals over positive edges
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in 0..n {
            for a in 0..m {
                for (next, &p) in mdp.row(s, a).iter().enumerate() {
                    if p > 0.0 && next != s {
                        preds[next].push(s);
                    }
                }
            }
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| mdp.is_terminal(s)).collect();
        queue.iter().for_each(|&s| seen[s] = true);
        while let Some(s) = queue.pop_front() {
            for &p in &preds[s] {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(p);
                }
            }
        }
        issues.extend(
            (0..n)
                .filter(|&s| !seen[s])
                .map(|state| Issue::TerminalUnreachable { state }),
        );
    }
    ValidationReport { issues }
}

/// Rewrites the reward function for the dual MDP of `kind` and forces γ = 1.
/// Dynamics are copied bit-for-bit.
pub fn build_dual_mdp(mdp: &TabularMdp, kind: DualKind) -> Result<TabularMdp> {
    let report = validate_mdp(mdp);
    if !report.is_valid() {
        return Err(Error::InvalidMdp(report));
    }
    let mut dual = mdp.clone();
    dual.reward = RewardModel::Dual(kind);
    dual.discount = 1.0;
    Ok(dual)
}

/// JSON document form of a [`TabularMdp`], nested `(state, action, next)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub terminal_kind: Vec<TerminalKind>,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub discount: f64,
    #[serde(default)]
    pub reward: RewardModel,
}

fn one() -> f64 {
    1.0
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        let transition = mdp
            .transition
            .chunks(mdp.n_states * mdp.n_actions)
            .map(|s| s.chunks(mdp.n_states).map(|r| r.to_vec()).collect())
            .collect();
        Self {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            terminal_kind: mdp.terminal_kind,
            transition,
            discount: mdp.discount,
            reward: mdp.reward,
        }
    }
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = String;

    fn try_from(doc: MdpDocument) -> core::result::Result<Self, String> {
        let flat: Vec<f64> = doc.transition.into_iter().flatten().flatten().collect();
        let mut mdp = TabularMdp::new(doc.n_states, doc.n_actions, flat, doc.terminal_kind)
            .map_err(|e| alloc::format!("{e}"))?;
        if !(0.0..=1.0).contains(&doc.discount) {
            return Err(alloc::format!("discount {} outside [0, 1]", doc.discount));
        }
        mdp.discount = doc.discount;
        mdp.reward = doc.reward;
        Ok(mdp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Positive,
    Negative,
}

impl Outcome {
    pub fn terminal(self) -> TerminalKind {
        match self {
            Outcome::Positive => TerminalKind::Positive,
            Outcome::Negative => TerminalKind::Negative,
        }
    }

    pub fn from_terminal(kind: TerminalKind) -> Option<Self> {
        match kind {
            TerminalKind::Positive => Some(Outcome::Positive),
            TerminalKind::Negative => Some(Outcome::Negative),
            TerminalKind::None => None,
        }
    }
}

/// What the agent saw at a step: a state index (tabular data) or a feature
/// vector (observational data).
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    State(usize),
    Vector(Vec<f64>),
}

impl Observation {
    pub fn state(&self) -> Option<usize> {
        match self {
            Observation::State(s) => Some(*s),
            Observation::Vector(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Observation::Vector(v) => Some(v),
            Observation::State(_) => None,
        }
    }
}

/// One recorded decision: observation, action, the environment reward and
/// the terminal label of the successor.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub terminal: TerminalKind,
}

/// A view of step `step_index` together with its successor observation.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub obs: &'a Observation,
    pub action: usize,
    pub reward: f64,
    /// `None` for the final, terminal transition.
    pub next_obs: Option<&'a Observation>,
    pub terminal: TerminalKind,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub outcome: Outcome,
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// Builds a trajectory, checking that only the last step is terminal and
    /// that its label matches `outcome`.
    pub fn new(id: impl Into<String>, outcome: Outcome, steps: Vec<Step>) -> Result<Self> {
        let traj = Self {
            id: id.into(),
            outcome,
            steps,
        };
        traj.check()?;
        Ok(traj)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |reason: &str| Error::MalformedTrajectory {
            id: self.id.clone(),
            reason: reason.into(),
        };
        let Some(last) = self.steps.last() else {
            return Err(bad("no steps"));
        };
        if self.steps[..self.steps.len() - 1]
            .iter()
            .any(|s| s.terminal.is_terminal())
        {
            return Err(bad("terminal transition before the last step"));
        }
        if last.terminal != TerminalKind::None && last.terminal != self.outcome.terminal() {
            return Err(bad("outcome disagrees with final terminal label"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.steps.last().is_some_and(|s| s.terminal.is_terminal())
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_>> + '_ {
        self.steps.iter().enumerate().map(move |(i, step)| Transition {
            obs: &step.obs,
            action: step.action,
            reward: step.reward,
            next_obs: self.steps.get(i + 1).map(|s| &s.obs),
            terminal: step.terminal,
            step_index: i,
        })
    }
}

/// Undiscounted dual return of a terminated trajectory.
pub fn trajectory_return(traj: &Trajectory, kind: DualKind) -> Result<f64> {
    if !traj.is_terminated() {
        return Err(Error::Unterminated(traj.id.clone()));
    }
    Ok(traj.steps.iter().map(|s| kind.reward(s.terminal)).sum())
}
