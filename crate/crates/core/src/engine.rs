//! Flagging and treatment security.
//!
//! States are flagged from the median of their D- and R-values over actions,
//! treatments from their own pair of values. A flag needs both value
//! functions to cross their thresholds at the same time. Policies are
//! secured by capping each action at `1 + Q_D(s, a)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DualKind, TabularMdp};
use crate::policy::PolicyMatrix;
use crate::solver::{OutcomeProbs, QTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPair {
    /// D-value threshold, in (−1, 0).
    pub d: f64,
    /// R-value threshold, in (0, 1).
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub red: ThresholdPair,
    pub yellow: ThresholdPair,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            red: ThresholdPair { d: -0.25, r: 0.75 },
            yellow: ThresholdPair { d: -0.15, r: 0.85 },
        }
    }
}

impl Thresholds {
    /// Checks `−1 < red.d ≤ yellow.d < 0` and `0 < red.r ≤ yellow.r < 1`,
    /// which makes every red flag a yellow one too.
    pub fn validate(&self) -> Result<()> {
        let ok_d = -1.0 < self.red.d && self.red.d <= self.yellow.d && self.yellow.d < 0.0;
        let ok_r = 0.0 < self.red.r && self.red.r <= self.yellow.r && self.yellow.r < 1.0;
        if ok_d && ok_r {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("inconsistent thresholds {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagLevel {
    None,
    Yellow,
    Red,
}

impl FlagLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagLevel::None => "none",
            FlagLevel::Yellow => "yellow",
            FlagLevel::Red => "red",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(FlagLevel::None),
            "yellow" => Some(FlagLevel::Yellow),
            "red" => Some(FlagLevel::Red),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagBasis {
    StateMedian,
    Treatment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flag {
    pub level: FlagLevel,
    pub basis: FlagBasis,
}

/// Which value functions must cross their thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    DOnly,
    ROnly,
    /// Both at once.
    Full,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::DOnly, Criterion::ROnly, Criterion::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::DOnly => "D",
            Criterion::ROnly => "R",
            Criterion::Full => "Full",
        }
    }

    pub fn violated(self, qd: f64, qr: f64, th: ThresholdPair) -> bool {
        match self {
            Criterion::DOnly => qd < th.d,
            Criterion::ROnly => qr < th.r,
            Criterion::Full => qd < th.d && qr < th.r,
        }
    }
}

/// Flag level of a `(D, R)` value pair under `criterion`.
pub fn flag_level(qd: f64, qr: f64, th: &Thresholds, criterion: Criterion) -> FlagLevel {
    if criterion.violated(qd, qr, th.red) {
        FlagLevel::Red
    } else if criterion.violated(qd, qr, th.yellow) {
        FlagLevel::Yellow
    } else {
        FlagLevel::None
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn flag_state(qd_row: &[f64], qr_row: &[f64], th: &Thresholds) -> Result<Flag> {
    if qd_row.len() != qr_row.len() {
        return Err(Error::ShapeMismatch(format!(
            "D row has {} actions, R row has {}",
            qd_row.len(),
            qr_row.len()
        )));
    }
    let (Some(qd), Some(qr)) = (median(qd_row), median(qr_row)) else {
        return Err(Error::EmptyRow);
    };
    Ok(Flag {
        level: flag_level(qd, qr, th, Criterion::Full),
        basis: FlagBasis::StateMedian,
    })
}

pub fn flag_treatment(qd: f64, qr: f64, th: &Thresholds) -> Result<Flag> {
    for (v, kind) in [(qd, DualKind::D), (qr, DualKind::R)] {
        let (lo, hi) = kind.range();
        if !(lo..=hi).contains(&v) {
            return Err(Error::OutOfRange { value: v, lo, hi });
        }
    }
    Ok(Flag {
        level: flag_level(qd, qr, th, Criterion::Full),
        basis: FlagBasis::Treatment,
    })
}

/// Caps every action at `1 + qd(a)` and hands the clipped mass to the
/// uncapped actions in proportion to their probability, until nothing
/// exceeds its cap.
pub fn secure_policy(pi_row: &[f64], qd_row: &[f64]) -> Result<Vec<f64>> {
    if pi_row.len() != qd_row.len() || pi_row.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "policy row has {} actions, D row has {}",
            pi_row.len(),
            qd_row.len()
        )));
    }
    let sum: f64 = pi_row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || pi_row.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidParameter(format!("policy row sums to {sum}")));
    }
    for &q in qd_row {
        if !(-1.0..=0.0).contains(&q) {
            return Err(Error::OutOfRange { value: q, lo: -1.0, hi: 0.0 });
        }
    }
    let caps: Vec<f64> = qd_row.iter().map(|q| 1.0 + q).collect();
    let cap_sum: f64 = caps.iter().sum();
    if cap_sum < 1.0 - 1e-12 {
        return Err(Error::DeadEndState { cap_sum });
    }

    let n = pi_row.len();
    let mut out = pi_row.to_vec();
    let mut saturated = vec![false; n];
    for _ in 0..=n {
        let mut excess = 0.0;
        for a in 0..n {
            if !saturated[a] && out[a] > caps[a] {
                excess += out[a] - caps[a];
                out[a] = caps[a];
                saturated[a] = true;
            }
        }
        if excess <= 0.0 {
            break;
        }
        let weight: f64 = (0..n).filter(|&a| !saturated[a]).map(|a| out[a]).sum();
        if weight > 0.0 {
            for a in (0..n).filter(|&a| !saturated[a]) {
                out[a] += excess * out[a] / weight;
            }
        } else {
            // every free action has zero mass: fill by remaining headroom
            let room: f64 = (0..n).filter(|&a| !saturated[a]).map(|a| caps[a] - out[a]).sum();
            if room <= 0.0 {
                break;
            }
            for a in (0..n).filter(|&a| !saturated[a]) {
                out[a] += excess * (caps[a] - out[a]) / room;
            }
        }
    }
    Ok(out)
}

/// A policy after [`secure_policy`] has been applied to every non-terminal
/// state. States whose caps sum below one keep their original row and are
/// listed in `infeasible`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecuredPolicy {
    pub policy: PolicyMatrix,
    pub infeasible: Vec<usize>,
}

pub fn secure_policy_matrix(mdp: &TabularMdp, pi: &PolicyMatrix, q_d: &QTable) -> Result<SecuredPolicy> {
    if q_d.kind() != DualKind::D {
        return Err(Error::InvalidParameter("securing needs a D table".into()));
    }
    let mut policy = pi.clone();
    let mut infeasible = Vec::new();
    for s in mdp.non_terminal_states() {
        match secure_policy(pi.row(s), q_d.row(s)) {
            Ok(row) => policy.set_row(s, &row),
            Err(Error::DeadEndState { .. }) => infeasible.push(s),
            Err(e) => return Err(e),
        }
    }
    Ok(SecuredPolicy { policy, infeasible })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub state: usize,
    pub action: usize,
    pub prob: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CertifyOptions<'a> {
    /// Shortfall of dead-end values from −1; the bound relaxes to
    /// `1 − (1 − ε)λ`.
    pub epsilon: f64,
    /// Checks `π ≥ P_R + F_R` wherever `π ≥ Q_R` holds.
    pub rescue_floor: Option<&'a QTable>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub checked_pairs: usize,
    pub skipped_states: Vec<usize>,
    pub violations: Vec<Violation>,
    pub rescue_floor_pairs: Option<usize>,
    pub rescue_floor_violations: Vec<Violation>,
}

impl SecurityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.rescue_floor_violations.is_empty()
    }
}

/// Checks `π(s,a) ≤ 1 − (1 − ε)(P_D + F_D)` for every pair of every
/// non-terminal state the secured policy covers.
pub fn certify_security(
    mdp: &TabularMdp,
    secured: &SecuredPolicy,
    probs: &OutcomeProbs,
    opts: &CertifyOptions<'_>,
) -> Result<SecurityReport> {
    let pi = &secured.policy;
    if pi.n_states() != mdp.n_states()
        || pi.n_actions() != mdp.n_actions()
        || probs.n_states != mdp.n_states()
        || probs.n_actions != mdp.n_actions()
    {
        return Err(Error::ShapeMismatch("policy, oracle and MDP sizes differ".into()));
    }
    let mut report = SecurityReport {
        skipped_states: secured.infeasible.clone(),
        rescue_floor_pairs: opts.rescue_floor.map(|_| 0),
        ..Default::default()
    };
    for s in mdp.non_terminal_states() {
        if secured.infeasible.binary_search(&s).is_ok() {
            continue;
        }
        for a in 0..mdp.n_actions() {
            let prob = pi.row(s)[a];
            let lambda = probs.dead_certainty(s, a);
            let bound = 1.0 - (1.0 - opts.epsilon) * lambda;
            report.checked_pairs += 1;
            if prob > bound + 1e-9 {
                report.violations.push(Violation { state: s, action: a, prob, bound });
            }
            if let Some(q_r) = opts.rescue_floor {
                if prob >= q_r.get(s, a) - 1e-12 {
                    *report.rescue_floor_pairs.as_mut().unwrap() += 1;
                    let floor = probs.rescue_certainty(s, a);
                    if prob < floor - 1e-9 {
                        report.rescue_floor_violations.push(Violation {
                            state: s,
                            action: a,
                            prob,
                            bound: floor,
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn th() -> Thresholds {
        Thresholds::default()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn state_flags_from_medians() {
        let f = |d: f64, r: f64| flag_state(&[d], &[r], &th()).unwrap().level;
        assert_eq!(f(-0.30, 0.70), FlagLevel::Red);
        assert_eq!(f(-0.20, 0.80), FlagLevel::Yellow);
        assert_eq!(f(-0.30, 0.90), FlagLevel::None);
        // even count: median of [-0.4, -0.3, -0.2, 0.0] is -0.25, not below -0.25
        let lvl = flag_state(&[-0.4, 0.0, -0.3, -0.2], &[0.1, 0.1, 0.1, 0.1], &th()).unwrap();
        assert_eq!(lvl.level, FlagLevel::Yellow);
        assert_eq!(lvl.basis, FlagBasis::StateMedian);
    }

    #[test]
    fn state_flag_errors() {
        assert_eq!(flag_state(&[], &[], &th()), Err(Error::EmptyRow));
        assert!(matches!(flag_state(&[0.0], &[0.0, 1.0], &th()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn treatment_flags() {
        let f = |d: f64, r: f64| flag_treatment(d, r, &th()).unwrap().level;
        assert_eq!(f(-1.0, 0.0), FlagLevel::Red);
        assert_eq!(f(0.0, 1.0), FlagLevel::None);
        assert_eq!(f(-0.18, 0.82), FlagLevel::Yellow);
        assert!(matches!(flag_treatment(0.3, 0.5, &th()), Err(Error::OutOfRange { .. })));
        assert!(matches!(flag_treatment(-0.3, 1.5, &th()), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn single_action_median() {
        assert_eq!(median(&[-0.4]), Some(-0.4));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    }

    #[test]
    fn water_filling_examples() {
        let pi = [0.3, 0.3, 0.4];
        assert_eq!(secure_policy(&pi, &[0.0, 0.0, 0.0]).unwrap(), pi.to_vec());
        assert!(close(
            &secure_policy(&[0.5, 0.25, 0.25], &[-1.0, 0.0, 0.0]).unwrap(),
            &[0.0, 0.5, 0.5]
        ));
        assert!(close(
            &secure_policy(&[0.8, 0.1, 0.1], &[-0.9, -0.2, -0.2]).unwrap(),
            &[0.1, 0.45, 0.45]
        ));
    }

    #[test]
    fn water_filling_cascades() {
        // second round: action 1 overflows after receiving mass from action 0
        let out = secure_policy(&[0.6, 0.3, 0.1], &[-0.8, -0.5, 0.0]).unwrap();
        assert!(close(&out, &[0.2, 0.5, 0.3]), "{out:?}");
    }

    #[test]
    fn zero_mass_free_actions_use_headroom() {
        let out = secure_policy(&[1.0, 0.0, 0.0], &[-1.0, -0.5, 0.0]).unwrap();
        assert!(close(&out, &[0.0, 1.0 / 3.0, 2.0 / 3.0]), "{out:?}");
    }

    #[test]
    fn certified_dead_end_has_no_secure_policy() {
        assert!(matches!(
            secure_policy(&[0.5, 0.5], &[-1.0, -1.0]),
            Err(Error::DeadEndState { .. })
        ));
        assert!(matches!(
            secure_policy(&[0.5, 0.5], &[-0.9, -0.6]),
            Err(Error::DeadEndState { .. })
        ));
    }

    #[test]
    fn threshold_validation() {
        assert!(th().validate().is_ok());
        let bad = Thresholds {
            red: ThresholdPair { d: -0.1, r: 0.75 },
            ..th()
        };
        assert!(bad.validate().is_err());
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            let mut v: Vec<f64> = v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect();
            let rest = 1.0 - v.iter().sum::<f64>();
            v[0] += rest;
            v
        })
    }

    proptest! {
        #[test]
        fn secured_rows_respect_caps(
            (pi, qd) in (2usize..8).prop_flat_map(|n| (dist(n), prop::collection::vec(-1.0f64..=0.0, n)))
        ) {
            match secure_policy(&pi, &qd) {
                Ok(out) => {
                    let sum: f64 = out.iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-12, "sum {}", sum);
                    for (p, q) in out.iter().zip(&qd) {
                        prop_assert!(*p <= 1.0 + q + 1e-12);
                        prop_assert!(*p >= -1e-12);
                    }
                }
                Err(Error::DeadEndState { cap_sum }) => prop_assert!(cap_sum < 1.0),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn flags_monotone_in_thresholds(
            qd in -1.0f64..=0.0, qr in 0.0f64..=1.0,
            d1 in -0.99f64..-0.01, r1 in 0.01f64..0.99, dd in 0.0f64..0.3, dr in 0.0f64..0.3,
        ) {
            // lowering either threshold can only remove flags
            let base = Thresholds {
                red: ThresholdPair { d: d1, r: r1 },
                yellow: ThresholdPair { d: d1, r: r1 },
            };
            let tight = Thresholds {
                red: ThresholdPair { d: (d1 - dd).max(-0.999), r: (r1 - dr).max(0.001) },
                ..base
            };
            for c in Criterion::ALL {
                let a = flag_level(qd, qr, &base, c);
                let b = flag_level(qd, qr, &tight, c);
                prop_assert!(b <= a);
            }
        }
    }
}
