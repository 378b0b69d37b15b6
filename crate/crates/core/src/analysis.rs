//! Cohort-level statistics over per-step D/R values: flag emergence before
//! the terminal step, flag duration, first-flag alignment and value gaps.
//!
//! Time is measured in steps. Bucket `-k` is the `k`-th step counted back
//! from the end of a trajectory, so bucket `-1` is its final (terminal)
//! transition.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::{flag_level, median, Criterion, FlagBasis, FlagLevel, Thresholds};
use crate::error::{Error, Result};
use crate::mdp::Outcome;

/// Values observed at one step: the per-action D and R rows and the
/// administered action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepValues {
    pub qd: Vec<f64>,
    pub qr: Vec<f64>,
    pub action: usize,
}

impl StepValues {
    pub fn qd_median(&self) -> f64 {
        median(&self.qd).unwrap_or(f64::NAN)
    }

    pub fn qr_median(&self) -> f64 {
        median(&self.qr).unwrap_or(f64::NAN)
    }

    pub fn qd_admin(&self) -> f64 {
        self.qd[self.action]
    }

    pub fn qr_admin(&self) -> f64 {
        self.qr[self.action]
    }

    pub fn flag(&self, th: &Thresholds, criterion: Criterion, basis: FlagBasis) -> FlagLevel {
        match basis {
            FlagBasis::StateMedian => flag_level(self.qd_median(), self.qr_median(), th, criterion),
            FlagBasis::Treatment => flag_level(self.qd_admin(), self.qr_admin(), th, criterion),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuedTrajectory {
    pub id: String,
    pub outcome: Outcome,
    pub steps: Vec<StepValues>,
}

impl ValuedTrajectory {
    pub fn check(&self) -> Result<()> {
        for (k, s) in self.steps.iter().enumerate() {
            if s.qd.is_empty() || s.qd.len() != s.qr.len() {
                return Err(Error::ShapeMismatch(format!("{} step {k}: rows of {} and {}", self.id, s.qd.len(), s.qr.len())));
            }
            if s.action >= s.qd.len() {
                return Err(Error::BadIndex {
                    index: s.action,
                    len: s.qd.len(),
                });
            }
        }
        Ok(())
    }

    pub fn levels(&self, th: &Thresholds, criterion: Criterion, basis: FlagBasis) -> Vec<FlagLevel> {
        self.steps.iter().map(|s| s.flag(th, criterion, basis)).collect()
    }
}

/// One row of the per-step flag report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub traj_id: String,
    pub step: usize,
    pub flag_state: FlagLevel,
    pub flag_treatment: FlagLevel,
    pub qd_median: f64,
    pub qr_median: f64,
    pub qd_admin: f64,
    pub qr_admin: f64,
}

/// Concurrent (`Full`) flags on both bases for every step.
pub fn flag_report(cohort: &[ValuedTrajectory], th: &Thresholds) -> Vec<FlagRecord> {
    let mut out = Vec::new();
    for t in cohort {
        for (k, s) in t.steps.iter().enumerate() {
            out.push(FlagRecord {
                traj_id: t.id.clone(),
                step: k,
                flag_state: s.flag(th, Criterion::Full, FlagBasis::StateMedian),
                flag_treatment: s.flag(th, Criterion::Full, FlagBasis::Treatment),
                qd_median: s.qd_median(),
                qr_median: s.qr_median(),
                qd_admin: s.qd_admin(),
                qr_admin: s.qr_admin(),
            });
        }
    }
    out
}

pub const OUTCOMES: [Outcome; 2] = [Outcome::Negative, Outcome::Positive];
pub const BASES: [FlagBasis; 2] = [FlagBasis::StateMedian, FlagBasis::Treatment];

pub fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Positive => "positive",
        Outcome::Negative => "negative",
    }
}

pub fn basis_name(b: FlagBasis) -> &'static str {
    match b {
        FlagBasis::StateMedian => "V",
        FlagBasis::Treatment => "Q",
    }
}

/// Share of trajectories at each flag level in one bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmergenceRow {
    /// Steps before the end, negative.
    pub bucket: i64,
    pub outcome: Outcome,
    pub criterion: Criterion,
    pub basis: FlagBasis,
    /// Trajectories long enough to have this bucket.
    pub n: usize,
    pub pct_none: f64,
    pub pct_yellow: f64,
    pub pct_red: f64,
}

/// Percentages per bucket `-horizon..=-1`, outcome, criterion and basis.
/// A trajectory contributes to bucket `-k` only if it has at least `k`
/// steps. Buckets with no eligible trajectory report `n = 0` and zeros.
pub fn flag_emergence(cohort: &[ValuedTrajectory], th: &Thresholds, horizon: usize) -> Vec<EmergenceRow> {
    let mut rows = Vec::new();
    for outcome in OUTCOMES {
        let group: Vec<&ValuedTrajectory> = cohort.iter().filter(|t| t.outcome == outcome).collect();
        for criterion in Criterion::ALL {
            for basis in BASES {
                let levels: Vec<Vec<FlagLevel>> = group.iter().map(|t| t.levels(th, criterion, basis)).collect();
                for k in (1..=horizon).rev() {
                    let mut counts = [0usize; 3];
                    for lv in levels.iter().filter(|lv| lv.len() >= k) {
                        counts[lv[lv.len() - k] as usize] += 1;
                    }
                    let n: usize = counts.iter().sum();
                    let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
                    rows.push(EmergenceRow {
                        bucket: -(k as i64),
                        outcome,
                        criterion,
                        basis,
                        n,
                        pct_none: pct(counts[0]),
                        pct_yellow: pct(counts[1]),
                        pct_red: pct(counts[2]),
                    });
                }
            }
        }
    }
    rows
}

/// Red percentages of one emergence series, ordered from `-horizon` to `-1`.
pub fn red_series(rows: &[EmergenceRow], outcome: Outcome, criterion: Criterion, basis: FlagBasis) -> Vec<(i64, f64)> {
    rows.iter()
        .filter(|r| r.outcome == outcome && r.criterion == criterion && r.basis == basis)
        .map(|r| (r.bucket, r.pct_red))
        .collect()
}

/// Longest run of consecutive red steps.
pub fn max_red_run(levels: &[FlagLevel]) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for l in levels {
        if *l == FlagLevel::Red {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

/// Flag-duration statistics of one outcome group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub outcome: Outcome,
    pub n: usize,
    /// `exact_run[k]`: (eligible trajectories with at least `k` steps,
    /// percentage of them whose longest red run is exactly `k`).
    pub exact_run: Vec<(usize, f64)>,
    /// `ends_red[k-1]`: percentage (among trajectories with at least `k`
    /// steps) whose last `k` steps are all red.
    pub ends_red: Vec<f64>,
    /// Same with "yellow or red".
    pub ends_yellow: Vec<f64>,
    /// Percentage whose first `k` steps carry no flag.
    pub starts_no_flag: Vec<f64>,
    /// Percentage whose longest red run is at least `k`.
    pub run_tail: Vec<f64>,
}

/// Duration statistics for runs up to `max_k` steps.
pub fn flag_duration(cohort: &[ValuedTrajectory], th: &Thresholds, basis: FlagBasis, max_k: usize) -> Vec<DurationStats> {
    let mut out = Vec::new();
    for outcome in OUTCOMES {
        let levels: Vec<Vec<FlagLevel>> = cohort
            .iter()
            .filter(|t| t.outcome == outcome)
            .map(|t| t.levels(th, Criterion::Full, basis))
            .collect();
        let runs: Vec<usize> = levels.iter().map(|l| max_red_run(l)).collect();
        let share = |pred: &dyn Fn(&Vec<FlagLevel>, usize) -> bool, k: usize| -> (usize, f64) {
            let eligible: Vec<(usize, &Vec<FlagLevel>)> =
                levels.iter().enumerate().filter(|(_, l)| l.len() >= k).collect();
            let hits = eligible.iter().filter(|(i, l)| pred(l, *i)).count();
            let pct = if eligible.is_empty() { 0.0 } else { 100.0 * hits as f64 / eligible.len() as f64 };
            (eligible.len(), pct)
        };
        let mut stats = DurationStats {
            outcome,
            n: levels.len(),
            exact_run: vec![share(&|_, i| runs[i] == 0, 0)],
            ends_red: Vec::new(),
            ends_yellow: Vec::new(),
            starts_no_flag: Vec::new(),
            run_tail: Vec::new(),
        };
        for k in 1..=max_k {
            stats.exact_run.push(share(&|_, i| runs[i] == k, k));
            stats.ends_red.push(share(&|l, _| l[l.len() - k..].iter().all(|x| *x == FlagLevel::Red), k).1);
            stats.ends_yellow.push(share(&|l, _| l[l.len() - k..].iter().all(|x| *x >= FlagLevel::Yellow), k).1);
            stats.starts_no_flag.push(share(&|l, _| l[..k].iter().all(|x| *x == FlagLevel::None), k).1);
            stats.run_tail.push(share(&|_, i| runs[i] >= k, 0).1);
        }
        out.push(stats);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentWindow {
    pub pre_steps: usize,
    pub post_steps: usize,
}

impl Default for AlignmentWindow {
    fn default() -> Self {
        Self {
            pre_steps: 6,
            post_steps: 4,
        }
    }
}

impl AlignmentWindow {
    pub fn len(&self) -> usize {
        self.pre_steps + self.post_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// First step at or above `min_level`, or `None`.
pub fn first_flag(levels: &[FlagLevel], min_level: FlagLevel) -> Option<usize> {
    levels.iter().position(|l| *l >= min_level)
}

/// Per-offset mean and sample standard deviation of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPoint {
    pub series: String,
    pub outcome: Outcome,
    /// Steps relative to the first flag.
    pub offset: i64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub points: Vec<AlignedPoint>,
    /// Indices of the trajectories that entered the average.
    pub included: Vec<usize>,
}

/// Named per-step feature series supplied next to the values, one vector
/// per step of each trajectory (for example raw observations).
#[derive(Debug, Clone, Copy)]
pub struct FeatureSet<'a> {
    pub names: &'a [String],
    pub values: &'a [Vec<Vec<f64>>],
}

pub const VALUE_SERIES: [&str; 4] = ["v_d", "v_r", "q_d", "q_r"];

/// Averages series around each trajectory's first flag. Trajectories with
/// fewer than `pre_steps` steps before it or `post_steps` after it are left
/// out. State values use the median over actions, treatment values the
/// administered action.
pub fn first_flag_alignment(
    cohort: &[ValuedTrajectory],
    th: &Thresholds,
    features: Option<FeatureSet<'_>>,
    window: AlignmentWindow,
    min_level: FlagLevel,
) -> Result<Alignment> {
    let mut included = Vec::new();
    let mut anchors = Vec::new();
    for (i, t) in cohort.iter().enumerate() {
        let levels = t.levels(th, Criterion::Full, FlagBasis::StateMedian);
        if let Some(f) = first_flag(&levels, min_level) {
            if f >= window.pre_steps && f + window.post_steps < t.steps.len() {
                included.push(i);
                anchors.push(f);
            }
        }
    }
    if included.is_empty() {
        return Err(Error::NoEligibleTrajectories);
    }
    if let Some(fs) = features {
        if fs.values.len() != cohort.len() {
            return Err(Error::DimensionMismatch {
                expected: cohort.len(),
                got: fs.values.len(),
            });
        }
    }
    let mut names: Vec<String> = VALUE_SERIES.iter().map(|s| String::from(*s)).collect();
    if let Some(fs) = features {
        names.extend(fs.names.iter().cloned());
    }
    let value_at = |ti: usize, step: usize, series: usize| -> Result<f64> {
        let s = &cohort[ti].steps[step];
        Ok(match series {
            0 => s.qd_median(),
            1 => s.qr_median(),
            2 => s.qd_admin(),
            3 => s.qr_admin(),
            j => {
                let fs = features.expect("feature series only exist with features");
                let row = fs.values[ti].get(step).ok_or(Error::BadIndex {
                    index: step,
                    len: fs.values[ti].len(),
                })?;
                *row.get(j - 4).ok_or(Error::BadIndex { index: j - 4, len: row.len() })?
            }
        })
    };
    let mut points = Vec::new();
    for outcome in OUTCOMES {
        let members: Vec<(usize, usize)> = included
            .iter()
            .zip(&anchors)
            .filter(|(i, _)| cohort[**i].outcome == outcome)
            .map(|(i, f)| (*i, *f))
            .collect();
        for (j, name) in names.iter().enumerate() {
            for off in -(window.pre_steps as i64)..=(window.post_steps as i64) {
                let mut xs = Vec::with_capacity(members.len());
                for &(ti, f) in &members {
                    xs.push(value_at(ti, (f as i64 + off) as usize, j)?);
                }
                let (mean, sd) = mean_sd(&xs);
                points.push(AlignedPoint {
                    series: name.clone(),
                    outcome,
                    offset: off,
                    n: xs.len(),
                    mean,
                    sd,
                });
            }
        }
    }
    Ok(Alignment { points, included })
}

/// Mean and sample standard deviation; `sd = 0` below two samples and both
/// are NaN for an empty slice.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueGap {
    pub max: f64,
    pub kth_best: f64,
    pub administered: f64,
}

/// Maximum, `⌈k_frac·n⌉`-th largest and administered value of a row.
pub fn value_gap(q_row: &[f64], administered: usize, k_frac: f64) -> Result<ValueGap> {
    if q_row.is_empty() {
        return Err(Error::EmptyRow);
    }
    if administered >= q_row.len() {
        return Err(Error::BadIndex {
            index: administered,
            len: q_row.len(),
        });
    }
    let mut sorted = q_row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // guard against k_frac·n landing a hair above an integer
    let k = (libm::ceil(k_frac * q_row.len() as f64 - 1e-9) as usize).clamp(1, q_row.len());
    Ok(ValueGap {
        max: sorted[0],
        kth_best: sorted[k - 1],
        administered: q_row[administered],
    })
}

/// Counts over `bins` equal-width bins spanning `[lo, hi]`; the top edge is
/// inclusive and out-of-range values are dropped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 || !(hi > lo) {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn step(qd: f64, qr: f64) -> StepValues {
        StepValues {
            qd: vec![qd; 3],
            qr: vec![qr; 3],
            action: 0,
        }
    }

    const SAFE: (f64, f64) = (0.0, 1.0);
    const RED: (f64, f64) = (-0.9, 0.1);
    const YELLOW: (f64, f64) = (-0.2, 0.8);

    fn traj(id: usize, outcome: Outcome, vals: &[(f64, f64)]) -> ValuedTrajectory {
        ValuedTrajectory {
            id: id.to_string(),
            outcome,
            steps: vals.iter().map(|&(d, r)| step(d, r)).collect(),
        }
    }

    #[test]
    fn unflagged_cohort_is_all_none() {
        let cohort: Vec<_> = (0..5).map(|i| traj(i, OUTCOMES[i % 2], &[SAFE; 4])).collect();
        let rows = flag_emergence(&cohort, &Thresholds::default(), 18);
        assert_eq!(rows.len(), 2 * 3 * 2 * 18);
        for r in &rows {
            if r.n > 0 {
                assert_eq!((r.pct_none, r.pct_yellow, r.pct_red), (100.0, 0.0, 0.0));
            } else {
                assert!(r.bucket < -4);
            }
        }
    }

    #[test]
    fn emergence_rows_sum_to_100_and_respect_length() {
        let cohort = vec![
            traj(0, Outcome::Negative, &[SAFE, YELLOW, RED]),
            traj(1, Outcome::Negative, &[RED]),
            traj(2, Outcome::Positive, &[SAFE, SAFE]),
        ];
        let rows = flag_emergence(&cohort, &Thresholds::default(), 3);
        for r in rows.iter().filter(|r| r.n > 0) {
            assert!((r.pct_none + r.pct_yellow + r.pct_red - 100.0).abs() < 0.1);
        }
        let full_v = red_series(&rows, Outcome::Negative, Criterion::Full, FlagBasis::StateMedian);
        assert_eq!(full_v, vec![(-3, 0.0), (-2, 0.0), (-1, 100.0)]);
        let n_at = |b: i64| {
            rows.iter()
                .find(|r| r.bucket == b && r.outcome == Outcome::Negative && r.criterion == Criterion::Full)
                .unwrap()
                .n
        };
        assert_eq!((n_at(-1), n_at(-2), n_at(-3)), (2, 1, 1));
    }

    #[test]
    fn criteria_differ_on_one_sided_violations() {
        // D violated alone
        let t = traj(0, Outcome::Negative, &[(-0.9, 0.95)]);
        let th = Thresholds::default();
        assert_eq!(t.levels(&th, Criterion::DOnly, FlagBasis::StateMedian), vec![FlagLevel::Red]);
        assert_eq!(t.levels(&th, Criterion::ROnly, FlagBasis::StateMedian), vec![FlagLevel::None]);
        assert_eq!(t.levels(&th, Criterion::Full, FlagBasis::StateMedian), vec![FlagLevel::None]);
    }

    #[test]
    fn treatment_basis_reads_the_administered_action() {
        let s = StepValues {
            qd: vec![0.0, -0.9, 0.0],
            qr: vec![1.0, 0.1, 1.0],
            action: 1,
        };
        let th = Thresholds::default();
        assert_eq!(s.flag(&th, Criterion::Full, FlagBasis::StateMedian), FlagLevel::None);
        assert_eq!(s.flag(&th, Criterion::Full, FlagBasis::Treatment), FlagLevel::Red);
    }

    #[test]
    fn last_step_red_only() {
        let cohort = vec![traj(0, Outcome::Negative, &[SAFE, SAFE, RED])];
        let d = flag_duration(&cohort, &Thresholds::default(), FlagBasis::StateMedian, 3);
        let neg = &d[0];
        assert_eq!(neg.exact_run[1], (1, 100.0));
        assert_eq!(neg.ends_red, vec![100.0, 0.0, 0.0]);
        assert_eq!(neg.starts_no_flag, vec![100.0, 100.0, 0.0]);
    }

    #[test]
    fn never_flagged_starts_clean() {
        let cohort: Vec<_> = (0..4).map(|i| traj(i, Outcome::Positive, &[SAFE; 5])).collect();
        let d = flag_duration(&cohort, &Thresholds::default(), FlagBasis::StateMedian, 5);
        assert_eq!(d[1].starts_no_flag, vec![100.0; 5]);
        assert_eq!(d[1].exact_run[0], (4, 100.0));
        assert_eq!(d[0].n, 0);
    }

    #[test]
    fn runs() {
        use FlagLevel::*;
        assert_eq!(max_red_run(&[Red, Red, None, Red, Red, Red, Yellow]), 3);
        assert_eq!(max_red_run(&[]), 0);
    }

    #[test]
    fn alignment_window_and_exclusion() {
        let mut vals = vec![SAFE; 6];
        vals.extend([YELLOW, RED, RED, RED, RED]);
        let ok = traj(0, Outcome::Negative, &vals);
        let early = traj(1, Outcome::Negative, &[YELLOW; 11]);
        let late = traj(2, Outcome::Positive, &[SAFE, SAFE, SAFE, SAFE, SAFE, SAFE, SAFE, YELLOW]);
        let never = traj(3, Outcome::Positive, &[SAFE; 12]);
        let cohort = vec![ok, early, late, never];
        let a = first_flag_alignment(&cohort, &Thresholds::default(), None, AlignmentWindow::default(), FlagLevel::Yellow).unwrap();
        assert_eq!(a.included, vec![0]);
        let vd: Vec<&AlignedPoint> = a.points.iter().filter(|p| p.series == "v_d" && p.outcome == Outcome::Negative).collect();
        assert_eq!(vd.len(), 11);
        assert_eq!(vd[6].offset, 0);
        assert_eq!(vd[6].mean, -0.2);
        assert_eq!(vd[0].mean, 0.0);
        let pos: Vec<&AlignedPoint> = a.points.iter().filter(|p| p.outcome == Outcome::Positive).collect();
        assert!(pos.iter().all(|p| p.n == 0));
    }

    #[test]
    fn alignment_without_flags_fails() {
        let cohort = vec![traj(0, Outcome::Negative, &[SAFE; 12])];
        assert!(matches!(
            first_flag_alignment(&cohort, &Thresholds::default(), None, AlignmentWindow::default(), FlagLevel::Yellow),
            Err(Error::NoEligibleTrajectories)
        ));
    }

    #[test]
    fn alignment_carries_features() {
        let mut vals = vec![SAFE; 6];
        vals.extend([RED; 5]);
        let cohort = vec![traj(0, Outcome::Negative, &vals), traj(1, Outcome::Negative, &vals)];
        let names = vec!["hr".to_string()];
        let feats: Vec<Vec<Vec<f64>>> = vec![(0..11).map(|k| vec![k as f64]).collect(), (0..11).map(|k| vec![k as f64 + 2.0]).collect()];
        let fs = FeatureSet {
            names: &names,
            values: &feats,
        };
        let a = first_flag_alignment(&cohort, &Thresholds::default(), Some(fs), AlignmentWindow::default(), FlagLevel::Red).unwrap();
        let hr: Vec<&AlignedPoint> = a.points.iter().filter(|p| p.series == "hr" && p.outcome == Outcome::Negative).collect();
        assert_eq!(hr.len(), 11);
        assert_eq!(hr[0].mean, 1.0);
        assert!((hr[0].sd - libm::sqrt(2.0)).abs() < 1e-12);
    }

    #[test]
    fn value_gap_examples() {
        let row: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        let g = value_gap(&row, 3, 0.2).unwrap();
        assert_eq!(g.max, 1.0);
        assert_eq!(g.kth_best, 20.0 / 24.0);
        assert_eq!(g.administered, 3.0 / 24.0);
        let g = value_gap(&row, 24, 0.2).unwrap();
        assert_eq!(g.max - g.administered, 0.0);
        let flat = value_gap(&[0.3; 4], 2, 0.2).unwrap();
        assert_eq!((flat.max, flat.kth_best, flat.administered), (0.3, 0.3, 0.3));
        assert!(matches!(value_gap(&[0.1], 1, 0.2), Err(Error::BadIndex { .. })));
        assert!(matches!(value_gap(&[], 0, 0.2), Err(Error::EmptyRow)));
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(histogram(&[-1.0, -0.5, 0.0, 0.2], -1.0, 0.0, 4), vec![1, 0, 1, 1]);
    }
}
