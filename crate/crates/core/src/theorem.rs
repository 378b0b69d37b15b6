//! Numerical verification of the dual-value characterization on one MDP.
//!
//! Every check compares two independently computed sides: value iteration on
//! the dual MDPs against the support fixed points and the greedy-policy
//! outcome probabilities.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{certify_security, secure_policy_matrix, CertifyOptions};
use crate::mdp::TabularMdp;
use crate::policy::PolicyMatrix;
use crate::solver::{solve_exact, ExactSolution, SolveOptions};
use crate::synth::{child_rng, generate_mdp, CohortSpec};
use crate::error::Result;
use rand::Rng;

/// Tolerance for the value identities.
pub const IDENTITY_TOL: f64 = 1e-6;

/// Gap between the certain-outcome cluster (`Q = ∓1`) and the nearest other
/// value, with the midpoint threshold. `None` when either side is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Separation {
    pub threshold: Option<f64>,
    pub margin: Option<f64>,
}

impl Separation {
    pub fn holds(&self) -> bool {
        self.margin.is_none_or(|m| m > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TheoremReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub dead_ends: usize,
    pub rescues: usize,
    /// Pairs where `P_D + F_D = 1` and `Q_D = −1` disagree.
    pub t1_mismatches: Vec<(usize, usize)>,
    pub t2_mismatches: Vec<(usize, usize)>,
    /// `max |−Q_D − (P_D + F_D + M_D)|`.
    pub lemma2_err_d: f64,
    /// `max |Q_R − (P_R + F_R + M_R)|`.
    pub lemma2_err_r: f64,
    pub t3: Separation,
    pub t4: Separation,
    pub t5_violations: usize,
    pub t5_pairs_checked: usize,
    /// States where the secured policy does not exist.
    pub t5_infeasible_states: Vec<usize>,
    pub sets_disjoint: bool,
    pub greedy_ties_d: usize,
    pub greedy_ties_r: usize,
    /// Solver failure, if any; all other fields are then defaults.
    pub error: Option<String>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.t1_mismatches.is_empty()
            && self.t2_mismatches.is_empty()
            && self.lemma2_err_d < IDENTITY_TOL
            && self.lemma2_err_r < IDENTITY_TOL
            && self.t3.holds()
            && self.t4.holds()
            && self.t5_violations == 0
            && self.sets_disjoint
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ok = |b: bool| if b { "pass" } else { "FAIL" };
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "states {} actions {}", self.n_states, self.n_actions);
        if let Some(e) = &self.error {
            let _ = writeln!(s, "solver error: {e}");
            return s;
        }
        let _ = writeln!(s, "dead-ends {} rescues {} disjoint {}", self.dead_ends, self.rescues, ok(self.sets_disjoint));
        let _ = writeln!(s, "T1 {} ({} mismatches)", ok(self.t1_mismatches.is_empty()), self.t1_mismatches.len());
        let _ = writeln!(s, "T2 {} ({} mismatches)", ok(self.t2_mismatches.is_empty()), self.t2_mismatches.len());
        let _ = writeln!(s, "L2 D {} (max err {:.3e})", ok(self.lemma2_err_d < IDENTITY_TOL), self.lemma2_err_d);
        let _ = writeln!(s, "L2 R {} (max err {:.3e})", ok(self.lemma2_err_r < IDENTITY_TOL), self.lemma2_err_r);
        let _ = writeln!(s, "T3 {} threshold {} margin {}", ok(self.t3.holds()), opt(self.t3.threshold), opt(self.t3.margin));
        let _ = writeln!(s, "T4 {} threshold {} margin {}", ok(self.t4.holds()), opt(self.t4.threshold), opt(self.t4.margin));
        let _ = writeln!(
            s,
            "T5 {} ({} violations over {} pairs, {} infeasible states)",
            ok(self.t5_violations == 0),
            self.t5_violations,
            self.t5_pairs_checked,
            self.t5_infeasible_states.len()
        );
        let _ = writeln!(s, "greedy ties (lowest index) D {} R {}", self.greedy_ties_d, self.greedy_ties_r);
        let _ = writeln!(s, "overall {}", ok(self.passed()));
        s
    }
}

/// Generator settings for case `index` of the random cross-check suite:
/// at most 48 non-terminal states (50 with the two terminals) and at most
/// 5 actions, with the structural rates drawn per case.
pub fn suite_spec(seed: u64, index: u64) -> CohortSpec {
    let mut rng = child_rng(seed, index);
    CohortSpec {
        n_states: rng.random_range(2..=48),
        n_actions: rng.random_range(1..=5),
        dead_end_fraction: rng.random_range(0.0..0.45),
        branching: rng.random_range(1..=4),
        seed: rng.random(),
        terminal_rate: rng.random_range(0.02..0.4),
        pos_leak_prob: rng.random_range(0.2..=1.0),
        death_rate: rng.random_range(0.05..0.7),
        harm_prob: rng.random_range(0.0..=0.6),
        neg_leak_prob: rng.random_range(0.0..=0.3),
        ..CohortSpec::default()
    }
}

/// Generates suite case `index` and verifies it.
pub fn verify_suite_case(seed: u64, index: u64) -> Result<TheoremReport> {
    let generated = generate_mdp(&suite_spec(seed, index))?;
    Ok(verify_theorem1(&generated.mdp, None))
}

/// Solves `mdp` exactly and checks every identity. `policy` defaults to
/// uniform and is secured with the exact `Q_D` before the T5 check.
pub fn verify_theorem1(mdp: &TabularMdp, policy: Option<&PolicyMatrix>) -> TheoremReport {
    let mut report = TheoremReport {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        ..Default::default()
    };
    match solve_exact(mdp, SolveOptions::default()) {
        Ok(sol) => {
            if let Err(e) = check_solution(mdp, &sol, policy, &mut report) {
                report.error = Some(format!("{e}"));
            }
        }
        Err(e) => report.error = Some(format!("{e}")),
    }
    report
}

fn check_solution(
    mdp: &TabularMdp,
    sol: &ExactSolution,
    policy: Option<&PolicyMatrix>,
    report: &mut TheoremReport,
) -> crate::Result<()> {
    let ExactSolution { q_d, q_r, sets, probs } = sol;
    report.dead_ends = sets.dead_ends.len();
    report.rescues = sets.rescues.len();
    report.sets_disjoint = sets.dead_ends.iter().all(|s| !sets.is_rescue(*s));
    report.greedy_ties_d = probs.tied_d.len();
    report.greedy_ties_r = probs.tied_r.len();

    let mut d_cluster = false;
    let mut d_other = f64::INFINITY;
    let mut r_cluster = false;
    let mut r_other = f64::NEG_INFINITY;
    for s in mdp.non_terminal_states() {
        for a in 0..mdp.n_actions() {
            let qd = q_d.get(s, a);
            let qr = q_r.get(s, a);
            let dead_sure = (probs.dead_certainty(s, a) - 1.0).abs() < IDENTITY_TOL;
            let rescue_sure = (probs.rescue_certainty(s, a) - 1.0).abs() < IDENTITY_TOL;
            if dead_sure != ((qd + 1.0).abs() < IDENTITY_TOL) {
                report.t1_mismatches.push((s, a));
            }
            if rescue_sure != ((qr - 1.0).abs() < IDENTITY_TOL) {
                report.t2_mismatches.push((s, a));
            }
            report.lemma2_err_d = report.lemma2_err_d.max((-qd - probs.negative_total(s, a)).abs());
            report.lemma2_err_r = report.lemma2_err_r.max((qr - probs.positive_total(s, a)).abs());
            if dead_sure {
                d_cluster = true;
            } else {
                d_other = d_other.min(qd);
            }
            if rescue_sure {
                r_cluster = true;
            } else {
                r_other = r_other.max(qr);
            }
        }
    }
    if d_cluster && d_other.is_finite() {
        report.t3 = Separation {
            threshold: Some((-1.0 + d_other) / 2.0),
            margin: Some(d_other + 1.0),
        };
    }
    if r_cluster && r_other.is_finite() {
        report.t4 = Separation {
            threshold: Some((1.0 + r_other) / 2.0),
            margin: Some(1.0 - r_other),
        };
    }

    let uniform;
    let pi = match policy {
        Some(p) => p,
        None => {
            uniform = PolicyMatrix::uniform(mdp.n_states(), mdp.n_actions());
            &uniform
        }
    };
    let secured = secure_policy_matrix(mdp, pi, q_d)?;
    let sec = certify_security(mdp, &secured, probs, &CertifyOptions::default())?;
    report.t5_violations = sec.violations.len();
    report.t5_pairs_checked = sec.checked_pairs;
    report.t5_infeasible_states = secured.infeasible;
    Ok(())
}

/// Whether the state-level rule "flag iff `V_D < δ_D` and `V_R < δ_R`"
/// picks out exactly the dead-ends on exact values.
pub fn state_thresholds_separate(mdp: &TabularMdp, sol: &ExactSolution, delta_d: f64, delta_r: f64) -> Vec<usize> {
    mdp.non_terminal_states()
        .filter(|&s| {
            let flagged = sol.q_d.state_value(s) < delta_d && sol.q_r.state_value(s) < delta_r;
            flagged != sol.sets.is_dead_end(s)
        })
        .collect()
}
