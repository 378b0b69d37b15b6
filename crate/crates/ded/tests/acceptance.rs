//! Acceptance suite. Runs every criterion in sequence (so timings are not
//! skewed by concurrent tests) and writes one `[PASS]`/`[FAIL]` line each to
//! stderr, then fails if any criterion failed.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ded::config::RunConfig;
use ded::pipeline::{lifegate_env, rollout_transitions, value_cohort, ValueModel};
use ded::stages::build_cohort;
use ded_core::analysis::{flag_emergence, red_series};
use ded_core::dataset::split;
use ded_core::engine::{
    certify_security, flag_state, flag_treatment, secure_policy, secure_policy_matrix, CertifyOptions, Criterion,
    FlagBasis, FlagLevel, Thresholds,
};
use ded_core::learner::{fit_double_q, tabular_q_learning, visit_counts, LrSchedule, QBatch, QNetwork, TabularConfig};
use ded_core::lifegate::{build_lifegate, CellKind, LifeGateLayout};
use ded_core::mdp::{DualKind, Outcome};
use ded_core::nn::{gradient_check, Mlp, MseProbe};
use ded_core::policy::PolicyMatrix;
use ded_core::sc::{make_batch, prediction_pairs, train_sc, EncoderConfig, ScModel};
use ded_core::solver::{solve_exact, value_iteration, SolveOptions};
use ded_core::synth::{child_rng, uniform_policy};
use ded_core::theorem::{state_thresholds_separate, verify_suite_case};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn report(name: &str, elapsed: Duration, o: &Verdict) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] {name} ({:.2} s): {}\n", elapsed.as_secs_f64(), o.detail);
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn lifegate_exact() -> Verdict {
    let t0 = Instant::now();
    let layout = LifeGateLayout::default();
    let mdp = build_lifegate(&layout).unwrap();
    let sol = solve_exact(&mdp, SolveOptions::default()).unwrap();
    let yellow = layout.states_of_kind(CellKind::Yellow);
    let worst = yellow
        .iter()
        .map(|&s| (sol.q_d.state_value(s) + 1.0).abs().max(sol.q_r.state_value(s).abs()))
        .fold(0.0, f64::max);
    let sets_match = sol.sets.dead_ends == yellow;
    let misclassified = state_thresholds_separate(&mdp, &sol, -0.7, 0.7);
    let secs = t0.elapsed().as_secs_f64();
    check(
        !yellow.is_empty() && worst <= 1e-6 && sets_match && misclassified.is_empty() && secs < 5.0,
        format!(
            "{} yellow cells, max deviation {worst:.1e} (tol 1e-6), dead-ends == yellow: {sets_match}, \
             misclassified at (-0.7, 0.7): {}, runtime {secs:.2} s (< 5)",
            yellow.len(),
            misclassified.len()
        ),
    )
}

fn theorem_suite() -> Verdict {
    let t0 = Instant::now();
    let (mut failed, mut t12, mut t5, mut margins) = (0, 0, 0, 0);
    let mut lemma2: f64 = 0.0;
    let mut too_big = 0;
    for i in 0..100 {
        let r = verify_suite_case(2024, i).unwrap();
        if r.n_states > 50 || r.n_actions > 5 {
            too_big += 1;
        }
        t12 += r.t1_mismatches.len() + r.t2_mismatches.len();
        t5 += r.t5_violations;
        lemma2 = lemma2.max(r.lemma2_err_d).max(r.lemma2_err_r);
        margins += usize::from(!(r.t3.holds() && r.t4.holds()));
        failed += usize::from(!r.passed());
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        failed == 0 && too_big == 0 && t12 == 0 && t5 == 0 && margins == 0 && lemma2 < 1e-6 && secs < 60.0,
        format!(
            "100 MDPs, {failed} failed, T1/T2 mismatches {t12}, max value-decomposition error {lemma2:.1e} (< 1e-6), \
             non-positive margins {margins}, T5 violations {t5}, oversized {too_big}, runtime {secs:.2} s (< 60)"
        ),
    )
}

fn secured_checkpoints() -> Verdict {
    let env = lifegate_env(&LifeGateLayout::default(), 2000).unwrap();
    let data = rollout_transitions(&env, &uniform_policy(&env.mdp), 200_000, 11).unwrap().trajectories;
    let (n, m) = (env.mdp.n_states(), env.mdp.n_actions());
    let exact = solve_exact(&env.mdp, SolveOptions::default()).unwrap();
    let pi = PolicyMatrix::uniform(n, m);
    let cfg = TabularConfig {
        lr: LrSchedule::Constant { lr: 0.1 },
        sweeps: 30,
        init: 0.0,
        ..Default::default()
    };
    let (mut checkpoints, mut bad, mut violations, mut out_of_range) = (0, 0, 0, 0);
    tabular_q_learning(&data, n, m, DualKind::D, &cfg, |_, q| {
        checkpoints += 1;
        out_of_range += q.values().iter().filter(|v| !(-1.0..=0.0).contains(*v)).count();
        let sec = secure_policy_matrix(&env.mdp, &pi, q).unwrap();
        let rep = certify_security(&env.mdp, &sec, &exact.probs, &CertifyOptions::default()).unwrap();
        violations += rep.violations.len();
        bad += usize::from(!rep.passed());
    })
    .unwrap();
    check(
        checkpoints == 30 && bad == 0 && out_of_range == 0,
        format!("{checkpoints} sweep checkpoints, {violations} violations, {out_of_range} entries outside [-1, 0]"),
    )
}

fn tabular_convergence() -> Verdict {
    let t0 = Instant::now();
    let env = lifegate_env(&LifeGateLayout::default(), 2000).unwrap();
    let data = rollout_transitions(&env, &uniform_policy(&env.mdp), 200_000, 11).unwrap().trajectories;
    let (n, m) = (env.mdp.n_states(), env.mdp.n_actions());
    let visits = visit_counts(&data, n, m).unwrap();
    let cfg = TabularConfig {
        lr: LrSchedule::VisitDecay { base: 1.0, power: 0.6 },
        sweeps: 50,
        ..Default::default()
    };
    let mut errs = Vec::new();
    let mut pairs = 0;
    for kind in [DualKind::D, DualKind::R] {
        let q = tabular_q_learning(&data, n, m, kind, &cfg, |_, _| {}).unwrap();
        let star = value_iteration(&env.mdp, kind, 1e-12, 1_000_000).unwrap();
        let mut worst: f64 = 0.0;
        pairs = 0;
        for s in env.mdp.non_terminal_states() {
            for a in 0..m {
                if visits[s * m + a] >= 50 {
                    pairs += 1;
                    worst = worst.max((q.get(s, a) - star.get(s, a)).abs());
                }
            }
        }
        errs.push(worst);
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        errs.iter().all(|e| *e <= 0.05) && pairs > 0 && secs < 120.0,
        format!(
            "{} trajectories, {pairs} pairs visited >= 50, max |Q - Q*| D {:.4} R {:.4} (<= 0.05), runtime {secs:.2} s (< 120)",
            data.len(),
            errs[0],
            errs[1]
        ),
    )
}

fn learned_separation() -> Verdict {
    let mut cfg = RunConfig::default();
    cfg.encoder = EncoderConfig {
        embed_dim: 16,
        window: 4,
        hidden: vec![32],
        lr: 1e-3,
        epochs: 15,
        ..cfg.encoder
    };
    cfg.dqn.lr = 1e-3;
    cfg.dqn.updates = 20_000;
    let cohort = build_cohort(&cfg).unwrap();
    let parts = split(&cohort.observed, &cfg.split).unwrap();
    let (obs_dim, n_actions) = (cfg.cohort.obs_dim, cfg.cohort.n_actions);
    let sc = train_sc(&parts.train, &parts.val, obs_dim, n_actions, &cfg.encoder).unwrap();
    let encoder = sc.model.encoder();
    let (d, r) = rayon::join(
        || fit_double_q(&parts.train, &encoder, n_actions, DualKind::D, &cfg.dqn).unwrap(),
        || fit_double_q(&parts.train, &encoder, n_actions, DualKind::R, &cfg.dqn).unwrap(),
    );
    let d = ValueModel::Network { encoder: encoder.clone(), q: d.q };
    let r = ValueModel::Network { encoder, q: r.q };
    let valued = value_cohort(&parts.test, &d, &r).unwrap();
    let rows = flag_emergence(&valued, &cfg.thresholds, 18);
    let series = |o| {
        let mut s = red_series(&rows, o, Criterion::Full, FlagBasis::StateMedian);
        s.sort_by_key(|p| p.0);
        s.into_iter().rev().take(6).rev().map(|p| p.1).collect::<Vec<_>>()
    };
    let neg = series(Outcome::Negative);
    let pos = series(Outcome::Positive);
    let monotone = neg.len() == 6 && neg.windows(2).all(|w| w[1] >= w[0]);
    let (n_last, p_last) = (*neg.last().unwrap_or(&0.0), *pos.last().unwrap_or(&0.0));
    let gap = n_last - p_last;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(", ");
    check(
        monotone && n_last > 0.0 && gap >= 10.0 * p_last,
        format!(
            "{} test trajectories, red % buckets -6..-1: negative [{}], positive [{}]; gap at -1 {gap:.1} vs 10x positive {:.1}",
            parts.test.len(),
            fmt(&neg),
            fmt(&pos),
            10.0 * p_last
        ),
    )
}

fn run_pipeline(bin: &str, dir: &Path) -> Result<(), String> {
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        "[encoder]\nembed_dim = 6\nwindow = 2\nhidden = [8]\nepochs = 2\n[dqn]\nhidden = 8\nupdates = 300\nlog_every = 100\n[cohort]\nn_states = 24\n",
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-synthetic", "--out", &p("gen"), "--trajectories", "300"],
        vec!["split", "--out", &p("split"), "--data", &p("gen/trajectories.jsonl")],
        vec!["train-sc", "--out", &p("sc"), "--data", &p("split")],
        vec!["train-d", "--out", &p("d"), "--data", &p("split"), "--encoder", &p("sc/encoder.json")],
        vec!["train-r", "--out", &p("r"), "--data", &p("split"), "--encoder", &p("sc/encoder.json")],
        vec![
            "flag", "--out", &p("flag"), "--data", &p("split/test.jsonl"), "--d", &p("d/q_d.json"), "--r",
            &p("r/q_r.json"), "--encoder", &p("sc/encoder.json"),
        ],
        vec!["analyze", "--out", &p("analysis"), "--values", &p("flag/values.jsonl"), "--data", &p("split/test.jsonl")],
        vec!["report", "--out", &p("report"), "--dir", &p("analysis")],
        vec!["solve-exact", "--out", &p("exact"), "--layout", "default"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in steps {
        let out = Command::new(bin).args(&args).args(["--config", c, "--seed", "5"]).output().unwrap();
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn hygiene() -> Verdict {
    let mut rng = child_rng(77, 0);
    let mut worst: f64 = 0.0;

    let mut mlp = Mlp::new(&[5, 16, 3], &mut rng);
    let x: Vec<f64> = (0..8 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..8 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    worst = worst.max(gradient_check(&mut mlp, &MseProbe { x: &x, y: &y, batch: 8 }, 64, &mut rng));

    let mut q = QNetwork::new(DualKind::R, 6, 32, 4, 1);
    let batch = QBatch {
        x: (0..32 * 6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        actions: (0..32).map(|i| i % 4).collect(),
        targets: (0..32).map(|i| (i % 5) as f64 / 5.0).collect(),
    };
    worst = worst.max(gradient_check(&mut q, &batch, 64, &mut rng));

    let mut cfg = RunConfig::default();
    cfg.cohort.n_states = 16;
    cfg.behavior.n_trajectories = 40;
    cfg.encoder = EncoderConfig {
        embed_dim: 6,
        window: 3,
        hidden: vec![10],
        epochs: 3,
        ..cfg.encoder
    };
    let cohort = build_cohort(&cfg).unwrap();
    let (obs_dim, n_actions) = (cfg.cohort.obs_dim, cfg.cohort.n_actions);
    let mut sc = ScModel::new(obs_dim, n_actions, &cfg.encoder).unwrap();
    let pairs = prediction_pairs(&cohort.observed);
    let mut identity: f64 = 0.0;
    for chunk in pairs.chunks(64) {
        let b = make_batch(&sc, &cohort.observed, chunk).unwrap();
        worst = worst.max(gradient_check(&mut sc, &b, 64, &mut rng));
        identity = identity.max(sc.batch_loss(&b).unwrap().identity_residual(b.y.len()).abs());
    }
    let trained = train_sc(&cohort.observed, &[], obs_dim, n_actions, &cfg.encoder).unwrap();
    identity = trained.curve.iter().map(|e| e.identity_residual).fold(identity, f64::max);

    let bin = env!("CARGO_BIN_EXE_ded");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let runs = run_pipeline(bin, a.path()).and_then(|_| run_pipeline(bin, b.path()));
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let differing: Vec<&str> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let identical = runs.is_ok() && ta.len() == tb.len() && differing.is_empty();
    check(
        worst < 1e-4 && identity <= 1e-9 && identical,
        format!(
            "max gradient relative error {worst:.1e} (< 1e-4), max NLL identity residual {identity:.1e} (<= 1e-9), \
             {} artifacts byte-identical across runs: {identical}{}",
            ta.len(),
            match &runs {
                Err(e) => format!(" ({e})"),
                Ok(()) if !differing.is_empty() => format!(" (differ: {differing:?})"),
                Ok(()) => String::new(),
            }
        ),
    )
}

fn flagging_contract() -> Verdict {
    let th = Thresholds::default();
    let state = |d: f64, r: f64| flag_state(&[d], &[r], &th).unwrap().level;
    let treat = |d: f64, r: f64| flag_treatment(d, r, &th).unwrap().level;
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    expect("state (-0.30, 0.70) red", state(-0.30, 0.70) == FlagLevel::Red);
    expect("state (-0.20, 0.80) yellow", state(-0.20, 0.80) == FlagLevel::Yellow);
    expect("state (-0.30, 0.90) none", state(-0.30, 0.90) == FlagLevel::None);
    expect("treatment (-1, 0) red", treat(-1.0, 0.0) == FlagLevel::Red);
    expect("treatment (0, 1) none", treat(0.0, 1.0) == FlagLevel::None);
    expect("treatment (-0.18, 0.82) yellow", treat(-0.18, 0.82) == FlagLevel::Yellow);
    expect("treatment out of range", flag_treatment(0.3, 0.5, &th).is_err());
    let pi = [0.3, 0.3, 0.4];
    expect("zero Q_D keeps pi", secure_policy(&pi, &[0.0; 3]).unwrap() == pi);
    expect(
        "[-1, 0, 0] water-filling",
        close(&secure_policy(&[0.5, 0.25, 0.25], &[-1.0, 0.0, 0.0]).unwrap(), &[0.0, 0.5, 0.5]),
    );
    expect(
        "[-0.9, -0.2, -0.2] water-filling",
        close(&secure_policy(&[0.8, 0.1, 0.1], &[-0.9, -0.2, -0.2]).unwrap(), &[0.1, 0.45, 0.45]),
    );
    expect("caps below one", secure_policy(&[0.5, 0.5], &[-1.0, -1.0]).is_err());
    check(
        failures.is_empty(),
        if failures.is_empty() { "11 worked examples hold".to_string() } else { format!("failed: {failures:?}") },
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 7] = [
        ("Life-Gate exact solve", lifegate_exact),
        ("Theorem suite", theorem_suite),
        ("Secured checkpoints during tabular learning", secured_checkpoints),
        ("Offline tabular convergence", tabular_convergence),
        ("Learned-model separation", learned_separation),
        ("Numerical hygiene", hygiene),
        ("Flagging unit contract", flagging_contract),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let t0 = Instant::now();
        let o = run();
        report(name, t0.elapsed(), &o);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
