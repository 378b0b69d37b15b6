//! One function per subcommand. Stages read and write files only; every
//! stage leaves `config.toml` (fully resolved) and `manifest.json` next to
//! its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ded_core::analysis::{
    first_flag_alignment, flag_duration, flag_emergence, flag_report, histogram, value_gap, FeatureSet, ValuedTrajectory, BASES,
};
use ded_core::dataset::split;
use ded_core::learner::{fit_double_q, tabular_q_learning, DqnConfig, QNetwork};
use ded_core::lifegate::{build_lifegate, render_value_grid, LifeGateLayout};
use ded_core::mdp::{DualKind, Outcome, TabularMdp, Trajectory};
use ded_core::nn::Mlp;
use ded_core::sc::{train_sc, Encoder, EncoderConfig};
use ded_core::solver::{classify_special_states, solve_exact, QTable, SolveOptions, SpecialStateSets};
use ded_core::synth::{emit_observations, generate_mdp, Env};
use ded_core::theorem::{suite_spec, verify_suite_case, verify_theorem1, TheoremReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::io::{read_json, read_mdp, read_trajectories, write_csv, write_json, write_mdp, write_trajectories, Checkpoint};
use crate::pipeline::{
    behavior_policy, infer_n_actions, infer_n_states, infer_obs_dim, lifegate_env, load_layout, rollout_parallel, rollout_transitions,
    value_cohort, ValueModel,
};
use crate::ValidationError;

/// Output directory, resolved configuration and provenance bookkeeping for
/// one stage run.
pub struct Stage {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = Sha256::digest(&bytes);
    Ok(InputDigest {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

impl Stage {
    pub fn new(command: &'static str, cfg: RunConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            cfg,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    /// Path of a new output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn finish(mut self) -> Result<()> {
        fs::write(self.out.join("config.toml"), self.cfg.to_toml()?)?;
        self.outputs.push("config.toml".into());
        let manifest = Manifest {
            command: self.command.into(),
            seed: self.cfg.seed,
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: self.outputs,
        };
        write_json(&self.out.join("manifest.json"), &manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub dead_ends: Vec<usize>,
    pub rescues: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_rounds: Option<usize>,
}

impl Truth {
    fn new(sets: SpecialStateSets) -> Self {
        Self {
            dead_ends: sets.dead_ends,
            rescues: sets.rescues,
            planted: None,
            leak_rounds: None,
        }
    }
}

pub fn gen_lifegate(mut st: Stage) -> Result<()> {
    let layout = load_layout(&st.cfg.lifegate)?;
    if let Some(p) = st.cfg.lifegate.layout.clone() {
        st.input(&p);
    }
    let env = lifegate_env(&layout, st.cfg.lifegate.max_len)?;
    let sets = classify_special_states(&env.mdp)?;
    let pi = ded_core::synth::uniform_policy(&env.mdp);
    let roll = rollout_transitions(&env, &pi, st.cfg.lifegate.n_transitions, st.cfg.seed)?;
    fs::write(st.output("layout.txt"), layout.to_text())?;
    write_mdp(&st.output("mdp.json"), &env.mdp)?;
    write_json(&st.output("truth.json"), &Truth::new(sets))?;
    write_trajectories(&st.output("trajectories.jsonl"), &roll.trajectories)?;
    log::info!("{} trajectories, {} discarded", roll.trajectories.len(), roll.discarded);
    st.finish()
}

/// Generated synthetic cohort held in memory.
pub struct Cohort {
    pub mdp: TabularMdp,
    pub truth: Truth,
    pub emitter: ded_core::synth::Emitter,
    pub latent: Vec<Trajectory>,
    pub observed: Vec<Trajectory>,
}

pub fn build_cohort(cfg: &RunConfig) -> Result<Cohort> {
    let spec = &cfg.cohort;
    let generated = generate_mdp(spec)?;
    let exact = solve_exact(&generated.mdp, SolveOptions::default())?;
    let starts: Vec<usize> = generated
        .mdp
        .non_terminal_states()
        .filter(|s| !exact.sets.is_dead_end(*s))
        .collect();
    if starts.is_empty() {
        bail!(ValidationError("every state is a dead-end; no start state left".into()));
    }
    let env = Env::new(generated.mdp.clone(), &starts, spec.max_len)?;
    let pi = behavior_policy(&cfg.behavior, &generated.mdp, &exact);
    let roll = rollout_parallel(&env, &pi, cfg.behavior.n_trajectories, spec.seed)?;
    let emitter = emit_observations(&generated.mdp, spec);
    let observed = roll
        .trajectories
        .par_iter()
        .enumerate()
        .map(|(i, t)| emitter.emit_trajectory(t, spec.seed, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let mut truth = Truth::new(exact.sets);
    truth.planted = Some(generated.planted);
    truth.leak_rounds = Some(generated.leak_rounds);
    Ok(Cohort {
        mdp: generated.mdp,
        truth,
        emitter,
        latent: roll.trajectories,
        observed,
    })
}

pub fn gen_synthetic(mut st: Stage) -> Result<()> {
    let c = build_cohort(&st.cfg)?;
    write_mdp(&st.output("mdp.json"), &c.mdp)?;
    write_json(&st.output("emissions.json"), &c.emitter)?;
    write_json(&st.output("truth.json"), &c.truth)?;
    write_trajectories(&st.output("trajectories.jsonl"), &c.observed)?;
    write_trajectories(&st.output("latent.jsonl"), &c.latent)?;
    st.finish()
}

pub fn split_stage(mut st: Stage, data: &Path) -> Result<()> {
    let trajs = read_trajectories(&st.input(data))?;
    let s = split(&trajs, &st.cfg.split)?;
    write_trajectories(&st.output("train.jsonl"), &s.train)?;
    write_trajectories(&st.output("val.jsonl"), &s.val)?;
    write_trajectories(&st.output("test.jsonl"), &s.test)?;
    st.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderCheckpointConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub training: EncoderConfig,
}

pub fn encoder_checkpoint(encoder: &Encoder, training: &EncoderConfig) -> Result<Checkpoint<EncoderCheckpointConfig>> {
    let Encoder::Window { obs_dim, n_actions, net, .. } = encoder else {
        bail!("only window encoders have checkpoints");
    };
    Ok(Checkpoint::new(
        EncoderCheckpointConfig {
            obs_dim: *obs_dim,
            n_actions: *n_actions,
            training: training.clone(),
        },
        net,
    ))
}

pub fn load_encoder(path: &Path) -> Result<Encoder> {
    let ck: Checkpoint<EncoderCheckpointConfig> = read_json(path)?;
    let net = ck.mlp()?;
    let c = &ck.config;
    let expected = c.training.window * (c.obs_dim + c.n_actions + 1);
    if net.input_dim() != expected {
        bail!(ValidationError(format!(
            "shape mismatch: encoder input {} but window {} of {} + {} + 1",
            net.input_dim(),
            c.training.window,
            c.obs_dim,
            c.n_actions
        )));
    }
    Ok(Encoder::Window {
        obs_dim: c.obs_dim,
        n_actions: c.n_actions,
        window: c.training.window,
        net,
    })
}

#[derive(Debug, Serialize)]
struct ScCurveRow {
    epoch: usize,
    train_nll: f64,
    train_mse: f64,
    val_mse: Option<f64>,
    identity_residual: f64,
}

pub fn train_sc_stage(mut st: Stage, data: &Path, n_actions: Option<usize>) -> Result<()> {
    let train = read_trajectories(&st.input(&data.join("train.jsonl")))?;
    let val_path = data.join("val.jsonl");
    let val = if val_path.exists() { read_trajectories(&st.input(&val_path))? } else { Vec::new() };
    let obs_dim = infer_obs_dim(&train)?;
    let n_actions = n_actions.unwrap_or_else(|| infer_n_actions(&train));
    let fit = train_sc(&train, &val, obs_dim, n_actions, &st.cfg.encoder)?;
    let ck = encoder_checkpoint(&fit.model.encoder(), &st.cfg.encoder)?;
    write_json(&st.output("encoder.json"), &ck)?;
    let rows: Vec<ScCurveRow> = fit
        .curve
        .iter()
        .map(|e| ScCurveRow {
            epoch: e.epoch,
            train_nll: e.train_nll,
            train_mse: e.train_mse,
            val_mse: e.val_mse,
            identity_residual: e.identity_residual,
        })
        .collect();
    write_csv(&st.output("sc_curve.csv"), &rows)?;
    st.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QCheckpointConfig {
    pub kind: DualKind,
    pub input_dim: usize,
    pub n_actions: usize,
    pub training: DqnConfig,
}

pub fn q_checkpoint(q: &QNetwork, training: &DqnConfig) -> Checkpoint<QCheckpointConfig> {
    Checkpoint::new(
        QCheckpointConfig {
            kind: q.kind,
            input_dim: q.input_dim(),
            n_actions: q.n_actions(),
            training: *training,
        },
        &q.net,
    )
}

/// Loads either a Q-table or a network checkpoint (which needs `encoder`).
pub fn load_value_model(path: &Path, encoder: Option<&Encoder>) -> Result<ValueModel> {
    let doc: serde_json::Value = read_json(path)?;
    if doc.get("layers").is_some() {
        let ck: Checkpoint<QCheckpointConfig> =
            serde_json::from_value(doc).map_err(|e| ValidationError(format!("{}: {e}", path.display())))?;
        let net: Mlp = ck.mlp()?;
        if net.input_dim() != ck.config.input_dim || net.output_dim() != ck.config.n_actions {
            bail!(ValidationError(format!("shape mismatch: {} layers disagree with its config", path.display())));
        }
        let encoder = encoder
            .cloned()
            .ok_or_else(|| ValidationError(format!("{} is a network checkpoint; pass --encoder", path.display())))?;
        Ok(ValueModel::Network {
            encoder,
            q: QNetwork { kind: ck.config.kind, net },
        })
    } else {
        let table: QTable = serde_json::from_value(doc).map_err(|e| ValidationError(format!("{}: {e}", path.display())))?;
        Ok(ValueModel::Table(table))
    }
}

#[derive(Debug, Serialize)]
struct CurveRow {
    step: usize,
    value: f64,
}

pub fn train_dual_stage(mut st: Stage, kind: DualKind, data: &Path, encoder: Option<&Path>, n_actions: Option<usize>) -> Result<()> {
    let train_path = if data.is_dir() { data.join("train.jsonl") } else { data.to_path_buf() };
    let train = read_trajectories(&st.input(&train_path))?;
    let n_actions = n_actions.unwrap_or_else(|| infer_n_actions(&train));
    let name = kind.name().to_lowercase();
    match encoder {
        Some(enc_path) => {
            let enc = load_encoder(&st.input(enc_path))?;
            let fit = fit_double_q(&train, &enc, n_actions, kind, &st.cfg.dqn)?;
            write_json(&st.output(&format!("q_{name}.json")), &q_checkpoint(&fit.q, &st.cfg.dqn))?;
            let rows: Vec<CurveRow> = fit
                .curve
                .iter()
                .enumerate()
                .map(|(i, v)| CurveRow {
                    step: (i + 1) * st.cfg.dqn.log_every,
                    value: *v,
                })
                .collect();
            write_csv(&st.output(&format!("curve_{name}.csv")), &rows)?;
        }
        None => {
            let n_states = infer_n_states(&train)
                .ok_or_else(|| ValidationError("observation vectors need --encoder".into()))?;
            let mut rows = Vec::new();
            let mut prev: Option<Vec<f64>> = None;
            let q = tabular_q_learning(&train, n_states, n_actions, kind, &st.cfg.tabular, |sweep, q| {
                let change = prev
                    .as_ref()
                    .map_or(f64::NAN, |p| p.iter().zip(q.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                rows.push(CurveRow { step: sweep, value: change });
                prev = Some(q.values().to_vec());
            })?;
            write_json(&st.output(&format!("q_{name}.json")), &q)?;
            write_csv(&st.output(&format!("curve_{name}.csv")), &rows)?;
        }
    }
    st.finish()
}

#[derive(Debug, Serialize)]
struct StateValueRow {
    state: usize,
    v_d: f64,
    v_r: f64,
    dead_end: bool,
    rescue: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SetsDoc {
    dead_ends: Vec<usize>,
    rescues: Vec<usize>,
}

/// Exact solve of a Life-Gate layout (default) or of an MDP file.
pub fn solve_exact_stage(mut st: Stage, mdp_path: Option<&Path>) -> Result<TheoremReport> {
    let (mdp, layout): (TabularMdp, Option<LifeGateLayout>) = match mdp_path {
        Some(p) => (read_mdp(&st.input(p))?, None),
        None => {
            if let Some(p) = st.cfg.lifegate.layout.clone() {
                st.input(&p);
            }
            let layout = load_layout(&st.cfg.lifegate)?;
            (build_lifegate(&layout)?, Some(layout))
        }
    };
    let sol = solve_exact(&mdp, SolveOptions::default())?;
    write_json(&st.output("q_d.json"), &sol.q_d)?;
    write_json(&st.output("q_r.json"), &sol.q_r)?;
    write_json(
        &st.output("sets.json"),
        &SetsDoc {
            dead_ends: sol.sets.dead_ends.clone(),
            rescues: sol.sets.rescues.clone(),
        },
    )?;
    write_json(&st.output("outcome_probs.json"), &sol.probs)?;
    let (vd, vr) = (sol.q_d.state_values(), sol.q_r.state_values());
    let rows: Vec<StateValueRow> = mdp
        .non_terminal_states()
        .map(|s| StateValueRow {
            state: s,
            v_d: vd[s],
            v_r: vr[s],
            dead_end: sol.sets.is_dead_end(s),
            rescue: sol.sets.is_rescue(s),
        })
        .collect();
    write_csv(&st.output("state_values.csv"), &rows)?;
    if let Some(layout) = &layout {
        fs::write(st.output("value_grid_d.csv"), render_value_grid(layout, &vd)?)?;
        fs::write(st.output("value_grid_r.csv"), render_value_grid(layout, &vr)?)?;
    }
    let report = verify_theorem1(&mdp, None);
    fs::write(st.output("theorem.txt"), report.to_text())?;
    write_json(&st.output("theorem.json"), &report)?;
    st.finish()?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct SuiteRow {
    case: u64,
    n_states: usize,
    n_actions: usize,
    dead_ends: usize,
    rescues: usize,
    t1: bool,
    t2: bool,
    lemma2_err_d: f64,
    lemma2_err_r: f64,
    t3_margin: Option<f64>,
    t4_margin: Option<f64>,
    t5_violations: usize,
    passed: bool,
}

/// Runs the random suite; returns the number of failing cases.
pub fn verify_theorems_stage(mut st: Stage, cases: u64) -> Result<usize> {
    let seed = st.cfg.seed;
    let reports: Vec<TheoremReport> = (0..cases)
        .into_par_iter()
        .map(|i| verify_suite_case(seed, i))
        .collect::<Result<_, _>>()?;
    let rows: Vec<SuiteRow> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| SuiteRow {
            case: i as u64,
            n_states: r.n_states,
            n_actions: r.n_actions,
            dead_ends: r.dead_ends,
            rescues: r.rescues,
            t1: r.t1_mismatches.is_empty(),
            t2: r.t2_mismatches.is_empty(),
            lemma2_err_d: r.lemma2_err_d,
            lemma2_err_r: r.lemma2_err_r,
            t3_margin: r.t3.margin,
            t4_margin: r.t4.margin,
            t5_violations: r.t5_violations,
            passed: r.passed(),
        })
        .collect();
    write_csv(&st.output("suite.csv"), &rows)?;
    let specs: Vec<_> = (0..cases).map(|i| suite_spec(seed, i)).collect();
    write_json(&st.output("suite_specs.json"), &specs)?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    let mut text = format!("{} cases, {} failed\n", rows.len(), failed);
    for (i, r) in reports.iter().enumerate().filter(|(_, r)| !r.passed()) {
        text.push_str(&format!("\ncase {i}\n{}", r.to_text()));
    }
    fs::write(st.output("summary.txt"), text)?;
    st.finish()?;
    Ok(failed)
}

pub fn flag_stage(mut st: Stage, data: &Path, d: &Path, r: &Path, encoder: Option<&Path>) -> Result<()> {
    let trajs = read_trajectories(&st.input(data))?;
    let enc = encoder.map(|p| load_encoder(&st.input(p))).transpose()?;
    let dm = load_value_model(&st.input(d), enc.as_ref())?;
    let rm = load_value_model(&st.input(r), enc.as_ref())?;
    let valued = value_cohort(&trajs, &dm, &rm)?;
    write_csv(&st.output("flags.csv"), &flag_report(&valued, &st.cfg.thresholds))?;
    write_jsonl(&st.output("values.jsonl"), &valued)?;
    st.finish()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_values(path: &Path) -> Result<Vec<ValuedTrajectory>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: ValuedTrajectory = serde_json::from_str(line).map_err(|e| crate::io::ParseError {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        v.check().map_err(|e| ValidationError(e.to_string()))?;
        out.push(v);
    }
    Ok(out)
}

fn outcome_name(o: Outcome) -> &'static str {
    ded_core::analysis::outcome_name(o)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmergenceCsvRow {
    pub bucket: i64,
    pub hours: f64,
    pub outcome: String,
    pub criterion: String,
    pub basis: String,
    pub n: usize,
    pub pct_none: f64,
    pub pct_yellow: f64,
    pub pct_red: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DurationCsvRow {
    pub basis: String,
    pub outcome: String,
    pub k: usize,
    pub n_exact: usize,
    pub pct_exact_run: f64,
    pub pct_run_at_least: Option<f64>,
    pub pct_ends_red: Option<f64>,
    pub pct_ends_yellow: Option<f64>,
    pub pct_starts_no_flag: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentCsvRow {
    pub series: String,
    pub outcome: String,
    pub offset: i64,
    pub hours: f64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueGapCsvRow {
    pub traj_id: String,
    pub outcome: String,
    pub step: usize,
    pub value: String,
    pub max: f64,
    pub kth_best: f64,
    pub administered: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramCsvRow {
    pub value: String,
    pub outcome: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

pub struct Analysis {
    pub emergence: Vec<EmergenceCsvRow>,
    pub duration: Vec<DurationCsvRow>,
    pub alignment: Vec<AlignmentCsvRow>,
    pub value_gap: Vec<ValueGapCsvRow>,
    pub histograms: Vec<HistogramCsvRow>,
}

/// Every analysis table for a valued cohort. `features` holds one
/// observation vector per step of each trajectory, if available.
pub fn analyze(cfg: &RunConfig, valued: &[ValuedTrajectory], features: Option<&[Vec<Vec<f64>>]>) -> Result<Analysis> {
    let a = &cfg.analysis;
    let th = &cfg.thresholds;
    let hours = |steps: i64| steps as f64 * a.step_hours;
    let emergence = flag_emergence(valued, th, a.horizon)
        .into_iter()
        .map(|r| EmergenceCsvRow {
            bucket: r.bucket,
            hours: hours(r.bucket),
            outcome: outcome_name(r.outcome).into(),
            criterion: r.criterion.as_str().into(),
            basis: ded_core::analysis::basis_name(r.basis).into(),
            n: r.n,
            pct_none: r.pct_none,
            pct_yellow: r.pct_yellow,
            pct_red: r.pct_red,
        })
        .collect();

    let mut duration = Vec::new();
    for basis in BASES {
        for d in flag_duration(valued, th, basis, a.max_duration) {
            for (k, (n_exact, pct)) in d.exact_run.iter().enumerate() {
                let at = |v: &Vec<f64>| if k == 0 { None } else { Some(v[k - 1]) };
                duration.push(DurationCsvRow {
                    basis: ded_core::analysis::basis_name(basis).into(),
                    outcome: outcome_name(d.outcome).into(),
                    k,
                    n_exact: *n_exact,
                    pct_exact_run: *pct,
                    pct_run_at_least: at(&d.run_tail),
                    pct_ends_red: at(&d.ends_red),
                    pct_ends_yellow: at(&d.ends_yellow),
                    pct_starts_no_flag: at(&d.starts_no_flag),
                });
            }
        }
    }

    let names: Vec<String> = features
        .and_then(|f| f.iter().flatten().next())
        .map(|row| (0..row.len()).map(|j| format!("obs_{j}")).collect())
        .unwrap_or_default();
    let fs_set = features.map(|values| FeatureSet { names: &names, values });
    let alignment = match first_flag_alignment(valued, th, fs_set, a.window, a.first_flag) {
        Ok(al) => al
            .points
            .into_iter()
            .map(|p| AlignmentCsvRow {
                series: p.series,
                outcome: outcome_name(p.outcome).into(),
                offset: p.offset,
                hours: hours(p.offset),
                n: p.n,
                mean: p.mean,
                sd: p.sd,
            })
            .collect(),
        Err(ded_core::Error::NoEligibleTrajectories) => {
            log::warn!("no trajectory satisfies the alignment window; alignment table is empty");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };

    let mut value_gap_rows = Vec::new();
    for t in valued {
        for (k, s) in t.steps.iter().enumerate() {
            for (name, row) in [("q_d", &s.qd), ("q_r", &s.qr)] {
                let g = value_gap(row, s.action, a.k_frac)?;
                value_gap_rows.push(ValueGapCsvRow {
                    traj_id: t.id.clone(),
                    outcome: outcome_name(t.outcome).into(),
                    step: k,
                    value: name.into(),
                    max: g.max,
                    kth_best: g.kth_best,
                    administered: g.administered,
                });
            }
        }
    }

    let mut histograms = Vec::new();
    for outcome in ded_core::analysis::OUTCOMES {
        let group = valued.iter().filter(|t| t.outcome == outcome);
        let steps: Vec<_> = group.flat_map(|t| t.steps.iter()).collect();
        let series: [(&str, Vec<f64>, f64, f64); 4] = [
            ("v_d", steps.iter().map(|s| s.qd_median()).collect(), -1.0, 0.0),
            ("v_r", steps.iter().map(|s| s.qr_median()).collect(), 0.0, 1.0),
            ("q_d", steps.iter().map(|s| s.qd_admin()).collect(), -1.0, 0.0),
            ("q_r", steps.iter().map(|s| s.qr_admin()).collect(), 0.0, 1.0),
        ];
        for (name, vals, lo, hi) in series {
            let width = (hi - lo) / a.hist_bins as f64;
            for (b, count) in histogram(&vals, lo, hi, a.hist_bins).into_iter().enumerate() {
                histograms.push(HistogramCsvRow {
                    value: name.into(),
                    outcome: outcome_name(outcome).into(),
                    bin_lo: lo + b as f64 * width,
                    bin_hi: lo + (b + 1) as f64 * width,
                    count,
                });
            }
        }
    }

    Ok(Analysis {
        emergence,
        duration,
        alignment,
        value_gap: value_gap_rows,
        histograms,
    })
}

pub fn analyze_stage(mut st: Stage, values: &Path, data: Option<&Path>) -> Result<()> {
    let valued = read_values(&st.input(values))?;
    let features = match data {
        Some(p) => {
            let trajs = read_trajectories(&st.input(p))?;
            if trajs.len() != valued.len() || trajs.iter().zip(&valued).any(|(t, v)| t.id != v.id || t.len() != v.steps.len()) {
                bail!(ValidationError("shape mismatch: data and values describe different trajectories".into()));
            }
            let f: Option<Vec<Vec<Vec<f64>>>> = trajs
                .iter()
                .map(|t| t.steps.iter().map(|s| s.obs.vector().map(<[f64]>::to_vec)).collect())
                .collect();
            if f.is_none() {
                log::warn!("tabular data carries no observation features");
            }
            f
        }
        None => None,
    };
    let a = analyze(&st.cfg, &valued, features.as_deref())?;
    write_csv(&st.output("emergence.csv"), &a.emergence)?;
    write_csv(&st.output("duration.csv"), &a.duration)?;
    write_csv(&st.output("alignment.csv"), &a.alignment)?;
    write_csv(&st.output("value_gap.csv"), &a.value_gap)?;
    write_csv(&st.output("histograms.csv"), &a.histograms)?;
    st.finish()
}

/// Markdown summary of an analysis directory.
pub fn report_stage(mut st: Stage, dir: &Path) -> Result<String> {
    let emergence: Vec<EmergenceCsvRow> = crate::io::read_csv(&st.input(&dir.join("emergence.csv")))?;
    let duration: Vec<DurationCsvRow> = crate::io::read_csv(&st.input(&dir.join("duration.csv")))?;
    let mut md = String::from("# Flag report\n\n## Red flags before the end (Full criterion)\n\n");
    md.push_str("| bucket | hours | basis | negative n | negative red % | positive n | positive red % |\n|---|---|---|---|---|---|---|\n");
    let show = st.cfg.analysis.horizon.min(6) as i64;
    for basis in BASES.map(ded_core::analysis::basis_name) {
        for b in -show..=-1 {
            let find = |o: &str| {
                emergence
                    .iter()
                    .find(|r| r.bucket == b && r.basis == basis && r.criterion == "Full" && r.outcome == o)
            };
            if let (Some(n), Some(p)) = (find("negative"), find("positive")) {
                md.push_str(&format!(
                    "| {b} | {} | {basis} | {} | {:.2} | {} | {:.2} |\n",
                    n.hours, n.n, n.pct_red, p.n, p.pct_red
                ));
            }
        }
    }
    md.push_str("\n## Longest red run (V basis)\n\n| k | negative % exactly k | positive % exactly k |\n|---|---|---|\n");
    for k in 0..=st.cfg.analysis.max_duration.min(8) {
        let find = |o: &str| duration.iter().find(|r| r.k == k && r.basis == "V" && r.outcome == o);
        if let (Some(n), Some(p)) = (find("negative"), find("positive")) {
            md.push_str(&format!("| {k} | {:.2} | {:.2} |\n", n.pct_exact_run, p.pct_exact_run));
        }
    }
    fs::write(st.output("report.md"), &md)?;
    st.finish()?;
    Ok(md)
}
