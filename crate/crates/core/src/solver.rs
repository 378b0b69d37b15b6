//! Exact machinery on a known model: dual value iteration, the dead-end and
//! rescue fixed points, almost-sure termination checks and the brute-force
//! outcome probabilities that the learned values are meant to encode.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DualKind, TabularMdp, TerminalKind};

/// Termination probabilities at or above `1 - TERMINATION_TOL` count as 1.
pub const TERMINATION_TOL: f64 = 1e-9;
/// Residual at which the greedy-policy outcome fixed points stop.
pub const OUTCOME_TOL: f64 = 1e-9;

const FIXED_POINT_CAP: usize = 5_000_000;

/// A state-action value table for one dual MDP, values kept in the kind's
/// legal range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QTableDocument", into = "QTableDocument")]
pub struct QTable {
    kind: DualKind,
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(kind: DualKind, n_states: usize, n_actions: usize) -> Self {
        Self::filled(kind, n_states, n_actions, 0.0)
    }

    pub fn filled(kind: DualKind, n_states: usize, n_actions: usize, v: f64) -> Self {
        Self {
            kind,
            n_states,
            n_actions,
            values: vec![kind.clamp(v); n_states * n_actions],
        }
    }

    pub fn from_values(kind: DualKind, n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_actions,
                got: values.len(),
            });
        }
        let values = values.into_iter().map(|v| kind.clamp(v)).collect();
        Ok(Self {
            kind,
            n_states,
            n_actions,
            values,
        })
    }

    pub fn kind(&self) -> DualKind {
        self.kind
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// Stores `v` clamped to the kind's range.
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = self.kind.clamp(v);
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `max_a Q(s, a)`.
    pub fn state_value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, ties to the lowest index.
    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| self.state_value(s)).collect()
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QTableDocument {
    kind: DualKind,
    n_states: usize,
    n_actions: usize,
    values: Vec<Vec<f64>>,
}

impl From<QTable> for QTableDocument {
    fn from(q: QTable) -> Self {
        Self {
            kind: q.kind,
            n_states: q.n_states,
            n_actions: q.n_actions,
            values: q.values.chunks(q.n_actions.max(1)).map(|r| r.to_vec()).collect(),
        }
    }
}

impl TryFrom<QTableDocument> for QTable {
    type Error = alloc::string::String;

    fn try_from(doc: QTableDocument) -> core::result::Result<Self, Self::Error> {
        if doc.values.iter().any(|r| r.len() != doc.n_actions) {
            return Err("Q-table row length differs from n_actions".into());
        }
        let (lo, hi) = doc.kind.range();
        let flat: Vec<f64> = doc.values.into_iter().flatten().collect();
        if let Some(v) = flat.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(format!("value {v} outside the {} range", doc.kind));
        }
        QTable::from_values(doc.kind, doc.n_states, doc.n_actions, flat).map_err(|e| format!("{e}"))
    }
}

/// Jacobi value iteration on the dual MDP of `kind`, from zero, clamping
/// every sweep. Requires the MDP to terminate almost surely under every
/// policy; that is checked first.
pub fn value_iteration(mdp: &TabularMdp, kind: DualKind, tol: f64, max_sweeps: usize) -> Result<QTable> {
    value_iteration_with(mdp, kind, tol, max_sweeps, |_, _| {})
}

/// [`value_iteration`] calling `on_sweep(sweep, &q)` after every sweep.
pub fn value_iteration_with(
    mdp: &TabularMdp,
    kind: DualKind,
    tol: f64,
    max_sweeps: usize,
    mut on_sweep: impl FnMut(usize, &QTable),
) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let all: Vec<usize> = mdp.non_terminal_states().collect();
    let (proper, p) = termination_probabilities(mdp, &all, TerminationMode::WorstCase);
    if !proper {
        let bad = all
            .iter()
            .copied()
            .filter(|&s| p[s] < 1.0 - TERMINATION_TOL)
            .collect();
        return Err(Error::NonTerminatingRegion(bad));
    }

    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut q = QTable::zeros(kind, n, m);
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for sweep in 0..max_sweeps {
        residual = 0.0;
        let mut next = q.values.clone();
        for s in 0..n {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..m {
                let backup: f64 = mdp
                    .successors(s, a)
                    .iter()
                    .map(|&(s2, p)| p * (kind.reward(mdp.terminal_kind(s2)) + v[s2]))
                    .sum();
                let backup = kind.clamp(backup);
                residual = f64::max(residual, (backup - q.get(s, a)).abs());
                next[s * m + a] = backup;
            }
        }
        q.values = next;
        for s in 0..n {
            v[s] = if mdp.is_terminal(s) { 0.0 } else { q.state_value(s) };
        }
        on_sweep(sweep, &q);
        if residual < tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        residual,
        sweeps: max_sweeps,
    })
}

/// Sup-norm Bellman residual of `q` on the dual MDP of its kind.
pub fn bellman_residual(mdp: &TabularMdp, q: &QTable) -> f64 {
    let kind = q.kind();
    let v: Vec<f64> = (0..mdp.n_states())
        .map(|s| if mdp.is_terminal(s) { 0.0 } else { q.state_value(s) })
        .collect();
    let mut residual: f64 = 0.0;
    for s in mdp.non_terminal_states() {
        for a in 0..mdp.n_actions() {
            let backup: f64 = mdp
                .successors(s, a)
                .iter()
                .map(|&(s2, p)| p * (kind.reward(mdp.terminal_kind(s2)) + v[s2]))
                .sum();
            residual = residual.max((backup - q.get(s, a)).abs());
        }
    }
    residual
}

/// Sorted dead-end and rescue state sets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpecialStateSets {
    pub dead_ends: Vec<usize>,
    pub rescues: Vec<usize>,
}

impl SpecialStateSets {
    pub fn is_dead_end(&self, s: usize) -> bool {
        self.dead_ends.binary_search(&s).is_ok()
    }

    pub fn is_rescue(&self, s: usize) -> bool {
        self.rescues.binary_search(&s).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationMode {
    /// Adversarial: minimum termination probability over actions.
    WorstCase,
    /// Follow the lowest-index action whose whole mass stays inside the
    /// given set or enters a positive terminal.
    WitnessPolicy,
}

/// True iff every state in `states` terminates with probability at least
/// `1 - 1e-9` under `mode`.
pub fn confirm_termination(mdp: &TabularMdp, states: &[usize], mode: TerminationMode) -> bool {
    termination_probabilities(mdp, states, mode).0
}

/// Iterates `p_{k+1}(s) = opt_a Σ T(s,a,s')·[1 if s' terminal else p_k(s')]`
/// from zero. Returns whether the given states all reach `1 - 1e-9`, and the
/// per-state probabilities.
pub fn termination_probabilities(
    mdp: &TabularMdp,
    states: &[usize],
    mode: TerminationMode,
) -> (bool, Vec<f64>) {
    let n = mdp.n_states();
    let mut p = vec![0.0; n];
    if states.is_empty() {
        return (true, p);
    }
    // states iterated and the action choices available at each
    let plan: Vec<(usize, Vec<usize>)> = match mode {
        TerminationMode::WorstCase => mdp
            .non_terminal_states()
            .map(|s| (s, (0..mdp.n_actions()).collect()))
            .collect(),
        TerminationMode::WitnessPolicy => {
            let mut member = vec![false; n];
            states.iter().for_each(|&s| member[s] = true);
            let mut plan = Vec::with_capacity(states.len());
            for &s in states {
                let witness = (0..mdp.n_actions()).find(|&a| {
                    mdp.successors(s, a).iter().all(|&(s2, _)| {
                        member[s2] || mdp.terminal_kind(s2) == TerminalKind::Positive
                    })
                });
                match witness {
                    Some(a) => plan.push((s, vec![a])),
                    None => return (false, p),
                }
            }
            plan
        }
    };
    let done = |p: &[f64]| states.iter().all(|&s| p[s] >= 1.0 - TERMINATION_TOL);
    for _ in 0..FIXED_POINT_CAP {
        let mut delta: f64 = 0.0;
        let mut next = p.clone();
        for (s, actions) in &plan {
            let val = actions
                .iter()
                .map(|&a| {
                    mdp.successors(*s, a)
                        .iter()
                        .map(|&(s2, pr)| pr * if mdp.is_terminal(s2) { 1.0 } else { p[s2] })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            delta = delta.max((val - p[*s]).abs());
            next[*s] = val;
        }
        p = next;
        if done(&p) {
            return (true, p);
        }
        if delta < 1e-15 {
            break;
        }
    }
    (false, p)
}

/// Greatest fixed points of the dead-end and rescue support conditions,
/// confirmed by almost-sure termination.
pub fn classify_special_states(mdp: &TabularMdp) -> Result<SpecialStateSets> {
    let n = mdp.n_states();
    let m = mdp.n_actions();

    let mut in_d: Vec<bool> = (0..n).map(|s| !mdp.is_terminal(s)).collect();
    loop {
        let keep: Vec<bool> = (0..n)
            .map(|s| {
                in_d[s]
                    && (0..m).all(|a| {
                        mdp.successors(s, a).iter().all(|&(s2, _)| {
                            in_d[s2] || mdp.terminal_kind(s2) == TerminalKind::Negative
                        })
                    })
            })
            .collect();
        if keep == in_d {
            break;
        }
        in_d = keep;
    }

    let mut in_r: Vec<bool> = (0..n).map(|s| !mdp.is_terminal(s)).collect();
    loop {
        let keep: Vec<bool> = (0..n)
            .map(|s| {
                in_r[s]
                    && (0..m).any(|a| {
                        mdp.successors(s, a).iter().all(|&(s2, _)| {
                            in_r[s2] || mdp.terminal_kind(s2) == TerminalKind::Positive
                        })
                    })
            })
            .collect();
        if keep == in_r {
            break;
        }
        in_r = keep;
    }

    let dead_ends: Vec<usize> = (0..n).filter(|&s| in_d[s]).collect();
    let rescues: Vec<usize> = (0..n).filter(|&s| in_r[s]).collect();

    let (ok, p) = termination_probabilities(mdp, &dead_ends, TerminationMode::WorstCase);
    if !ok {
        let bad = dead_ends
            .iter()
            .copied()
            .filter(|&s| p[s] < 1.0 - TERMINATION_TOL)
            .collect();
        return Err(Error::NonTerminatingRegion(bad));
    }
    let (ok, p) = termination_probabilities(mdp, &rescues, TerminationMode::WitnessPolicy);
    if !ok {
        let bad = rescues
            .iter()
            .copied()
            .filter(|&s| p[s] < 1.0 - TERMINATION_TOL)
            .collect();
        return Err(Error::NonTerminatingRegion(bad));
    }
    Ok(SpecialStateSets { dead_ends, rescues })
}

/// Per `(state, action)` decomposition of the dual values into
/// dead-end/rescue entry, immediate termination and later outcomes under the
/// greedy policies. Terminal states carry zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbs {
    pub n_states: usize,
    pub n_actions: usize,
    pub p_dead: Vec<f64>,
    pub f_neg: Vec<f64>,
    pub m_neg: Vec<f64>,
    pub p_rescue: Vec<f64>,
    pub f_pos: Vec<f64>,
    pub m_pos: Vec<f64>,
    /// Greedy actions used for the later-outcome terms.
    pub greedy_d: Vec<usize>,
    pub greedy_r: Vec<usize>,
    /// States where the greedy choice was a tie resolved to the lowest index.
    pub tied_d: Vec<usize>,
    pub tied_r: Vec<usize>,
}

impl OutcomeProbs {
    fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// `P_D + F_D`, the certainty of dead-end entry or immediate death.
    pub fn dead_certainty(&self, s: usize, a: usize) -> f64 {
        let i = self.idx(s, a);
        self.p_dead[i] + self.f_neg[i]
    }

    pub fn rescue_certainty(&self, s: usize, a: usize) -> f64 {
        let i = self.idx(s, a);
        self.p_rescue[i] + self.f_pos[i]
    }

    /// `P_D + F_D + M_D`, which should equal `-Q*_D`.
    pub fn negative_total(&self, s: usize, a: usize) -> f64 {
        self.dead_certainty(s, a) + self.m_neg[self.idx(s, a)]
    }

    pub fn positive_total(&self, s: usize, a: usize) -> f64 {
        self.rescue_certainty(s, a) + self.m_pos[self.idx(s, a)]
    }
}

fn greedy_with_ties(q: &QTable, s: usize) -> (usize, bool) {
    let row = q.row(s);
    let a = argmax(row);
    let tied = row.iter().enumerate().any(|(i, &v)| i != a && (v - row[a]).abs() <= 1e-12);
    (a, tied)
}

/// Probability of ending in a terminal of `target` kind when following
/// `policy` forever, by fixed-point iteration from zero.
pub fn outcome_probability_under(
    mdp: &TabularMdp,
    policy: &[usize],
    target: TerminalKind,
    tol: f64,
) -> Vec<f64> {
    let n = mdp.n_states();
    let mut p = vec![0.0; n];
    for _ in 0..FIXED_POINT_CAP {
        let mut delta: f64 = 0.0;
        let mut next = p.clone();
        for s in mdp.non_terminal_states() {
            let val: f64 = mdp
                .successors(s, policy[s])
                .iter()
                .map(|&(s2, pr)| {
                    let k = mdp.terminal_kind(s2);
                    pr * if k == target {
                        1.0
                    } else if k.is_terminal() {
                        0.0
                    } else {
                        p[s2]
                    }
                })
                .sum();
            delta = delta.max((val - p[s]).abs());
            next[s] = val;
        }
        p = next;
        if delta < tol {
            break;
        }
    }
    p
}

pub fn outcome_probabilities(
    mdp: &TabularMdp,
    sets: &SpecialStateSets,
    q_d: &QTable,
    q_r: &QTable,
) -> Result<OutcomeProbs> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    for q in [q_d, q_r] {
        if q.n_states() != n || q.n_actions() != m {
            return Err(Error::StaleInputs(format!(
                "{} table is {}x{}, MDP is {n}x{m}",
                q.kind(),
                q.n_states(),
                q.n_actions()
            )));
        }
    }
    if sets.dead_ends.iter().chain(&sets.rescues).any(|&s| s >= n || mdp.is_terminal(s)) {
        return Err(Error::StaleInputs("special-state sets do not match the MDP".into()));
    }

    let mut greedy_d = vec![0; n];
    let mut greedy_r = vec![0; n];
    let mut tied_d = Vec::new();
    let mut tied_r = Vec::new();
    for s in mdp.non_terminal_states() {
        let (a, tied) = greedy_with_ties(q_d, s);
        greedy_d[s] = a;
        if tied {
            tied_d.push(s);
        }
        let (a, tied) = greedy_with_ties(q_r, s);
        greedy_r[s] = a;
        if tied {
            tied_r.push(s);
        }
    }
    let mort = outcome_probability_under(mdp, &greedy_d, TerminalKind::Negative, OUTCOME_TOL);
    let recov = outcome_probability_under(mdp, &greedy_r, TerminalKind::Positive, OUTCOME_TOL);

    let mut out = OutcomeProbs {
        n_states: n,
        n_actions: m,
        p_dead: vec![0.0; n * m],
        f_neg: vec![0.0; n * m],
        m_neg: vec![0.0; n * m],
        p_rescue: vec![0.0; n * m],
        f_pos: vec![0.0; n * m],
        m_pos: vec![0.0; n * m],
        greedy_d,
        greedy_r,
        tied_d,
        tied_r,
    };
    for s in mdp.non_terminal_states() {
        for a in 0..m {
            let i = s * m + a;
            for &(s2, p) in mdp.successors(s, a) {
                match mdp.terminal_kind(s2) {
                    TerminalKind::Negative => out.f_neg[i] += p,
                    TerminalKind::Positive => out.f_pos[i] += p,
                    TerminalKind::None => {
                        if sets.is_dead_end(s2) {
                            out.p_dead[i] += p;
                        } else {
                            out.m_neg[i] += p * mort[s2];
                        }
                        if sets.is_rescue(s2) {
                            out.p_rescue[i] += p;
                        } else {
                            out.m_pos[i] += p * recov[s2];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Everything the exact solver knows about one MDP.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    pub q_d: QTable,
    pub q_r: QTable,
    pub sets: SpecialStateSets,
    pub probs: OutcomeProbs,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_sweeps: 2_000_000,
        }
    }
}

pub fn solve_exact(mdp: &TabularMdp, opts: SolveOptions) -> Result<ExactSolution> {
    let q_d = value_iteration(mdp, DualKind::D, opts.tol, opts.max_sweeps)?;
    let q_r = value_iteration(mdp, DualKind::R, opts.tol, opts.max_sweeps)?;
    let sets = classify_special_states(mdp)?;
    let probs = outcome_probabilities(mdp, &sets, &q_d, &q_r)?;
    Ok(ExactSolution { q_d, q_r, sets, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::TerminalKind::{self, *};

    fn mdp(n: usize, m: usize, rows: &[(usize, usize, usize, f64)], kinds: &[TerminalKind]) -> TabularMdp {
        let mut t = vec![0.0; n * m * n];
        for &(s, a, s2, p) in rows {
            t[(s * m + a) * n + s2] += p;
        }
        for s in 0..n {
            if kinds[s].is_terminal() {
                for a in 0..m {
                    t[(s * m + a) * n + s] = 1.0;
                }
            }
        }
        TabularMdp::new(n, m, t, kinds.to_vec()).unwrap()
    }

    fn chain() -> TabularMdp {
        mdp(3, 1, &[(0, 0, 1, 1.0), (1, 0, 2, 1.0)], &[None, None, Negative])
    }

    #[test]
    fn two_step_chain_values() {
        let q = value_iteration(&chain(), DualKind::D, 1e-12, 100).unwrap();
        assert_eq!(q.get(0, 0), -1.0);
        assert_eq!(q.get(1, 0), -1.0);
        let r = value_iteration(&chain(), DualKind::R, 1e-12, 100).unwrap();
        assert_eq!(r.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_positive_gives_zero_d_table() {
        let m = mdp(
            3,
            2,
            &[(0, 0, 1, 1.0), (0, 1, 2, 1.0), (1, 0, 2, 0.5), (1, 0, 0, 0.5), (1, 1, 2, 1.0)],
            &[None, None, Positive],
        );
        let q = value_iteration(&m, DualKind::D, 1e-12, 1000).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
        assert!(classify_special_states(&m).unwrap().dead_ends.is_empty());
    }

    #[test]
    fn too_few_sweeps_is_an_error() {
        let m = mdp(2, 1, &[(0, 0, 0, 0.9), (0, 0, 1, 0.1)], &[None, Negative]);
        assert!(matches!(
            value_iteration(&m, DualKind::D, 1e-12, 3),
            Err(Error::NoConvergence { sweeps: 3, .. })
        ));
    }

    #[test]
    fn self_loop_does_not_terminate() {
        // action 0 loops, action 1 exits
        let m = mdp(2, 2, &[(0, 0, 0, 1.0), (0, 1, 1, 1.0)], &[None, Negative]);
        assert!(!confirm_termination(&m, &[0], TerminationMode::WorstCase));
        assert!(matches!(
            value_iteration(&m, DualKind::D, 1e-9, 100),
            Err(Error::NonTerminatingRegion(v)) if v == [0]
        ));
    }

    #[test]
    fn geometric_drift_terminates() {
        let m = mdp(2, 1, &[(0, 0, 0, 0.6), (0, 0, 1, 0.4)], &[None, Negative]);
        assert!(confirm_termination(&m, &[0], TerminationMode::WorstCase));
    }

    #[test]
    fn fixed_points() {
        // 0: a0 -> 1, a1 -> pos. 1: -> 2 or neg. 2: -> neg. 3: a0 -> 0, a1 -> 3/neg split
        let m = mdp(
            6,
            2,
            &[
                (0, 0, 1, 1.0),
                (0, 1, 4, 1.0),
                (1, 0, 2, 0.5),
                (1, 0, 5, 0.5),
                (1, 1, 5, 1.0),
                (2, 0, 5, 1.0),
                (2, 1, 2, 0.3),
                (2, 1, 5, 0.7),
                (3, 0, 0, 1.0),
                (3, 1, 5, 0.5),
                (3, 1, 4, 0.5),
            ],
            &[None, None, None, None, Positive, Negative],
        );
        let sets = classify_special_states(&m).unwrap();
        assert_eq!(sets.dead_ends, vec![1, 2]);
        assert_eq!(sets.rescues, vec![0, 3]);
        let q_d = value_iteration(&m, DualKind::D, 1e-12, 10_000).unwrap();
        let q_r = value_iteration(&m, DualKind::R, 1e-12, 10_000).unwrap();
        let probs = outcome_probabilities(&m, &sets, &q_d, &q_r).unwrap();
        // (0, a0) enters the dead-end 1 surely
        assert_eq!(probs.p_dead[0], 1.0);
        assert_eq!(probs.f_neg[0] + probs.m_neg[0], 0.0);
        // (3, a1) half death, half recovery
        assert!((probs.f_neg[3 * 2 + 1] - 0.5).abs() < 1e-15);
        for s in m.non_terminal_states() {
            for a in 0..2 {
                assert!((-q_d.get(s, a) - probs.negative_total(s, a)).abs() < 1e-9);
                assert!((q_r.get(s, a) - probs.positive_total(s, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn stale_dimensions_are_rejected() {
        let m = chain();
        let sets = classify_special_states(&m).unwrap();
        let q = QTable::zeros(DualKind::D, 2, 1);
        assert!(matches!(
            outcome_probabilities(&m, &sets, &q, &q),
            Err(Error::StaleInputs(_))
        ));
    }

    #[test]
    fn trapped_loop_without_terminal_exit_is_rejected() {
        // 0 and 1 swap forever under a0; a1 from 0 reaches the negative terminal.
        // Worst-case termination fails, so neither solver nor classifier accept it.
        let m = mdp(
            3,
            2,
            &[(0, 0, 1, 1.0), (0, 1, 2, 1.0), (1, 0, 0, 1.0), (1, 1, 0, 1.0)],
            &[None, None, Negative],
        );
        assert!(matches!(classify_special_states(&m), Err(Error::NonTerminatingRegion(_))));
    }

    #[test]
    fn qtable_json_shape_and_range() {
        let q = QTable::from_values(DualKind::R, 2, 2, vec![0.1, 1.3, -0.2, 0.5]).unwrap();
        assert_eq!(q.values(), &[0.1, 1.0, 0.0, 0.5]);
        assert_eq!(q.greedy(0), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
    }
}
