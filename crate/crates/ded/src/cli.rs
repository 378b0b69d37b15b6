//! Command-line interface.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use ded_core::mdp::DualKind;

use crate::config::RunConfig;
use crate::stages::{self, Stage};

#[derive(Debug, Parser)]
#[command(name = "ded", version, about = "Dead-end discovery on offline decision data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; re-derives every component seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the Life-Gate MDP and an offline dataset under uniform behavior.
    GenLifegate {
        #[command(flatten)]
        common: Common,
        /// Layout file (`#` wall, `.` black, `y` yellow, `L` life gate, `D` death gate).
        #[arg(long)]
        layout: Option<PathBuf>,
        /// Override the number of transitions.
        #[arg(long)]
        transitions: Option<usize>,
    },
    /// Generate a synthetic cohort bundle (MDP, emissions, truth, trajectories).
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        /// Override the number of trajectories.
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Split trajectories into train/val/test, stratified by outcome.
    Split {
        #[command(flatten)]
        common: Common,
        /// trajectories.jsonl
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the history encoder on a split directory.
    TrainSc {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.jsonl and val.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_actions: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Learn the D values (tabular without --encoder, double-Q with it).
    TrainD {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Learn the R values (tabular without --encoder, double-Q with it).
    TrainR {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Solve an MDP exactly and check the dual-value identities.
    SolveExact {
        #[command(flatten)]
        common: Common,
        /// Life-Gate layout file, or `default` for the shipped one.
        #[arg(long, conflicts_with = "mdp")]
        layout: Option<String>,
        /// MDP JSON document instead of a Life-Gate layout.
        #[arg(long)]
        mdp: Option<PathBuf>,
    },
    /// Run the identity checks over seeded random MDPs.
    VerifyTheorems {
        #[command(flatten)]
        common: Common,
        /// Number of random MDPs.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Compute per-step values and flags for a cohort.
    Flag {
        #[command(flatten)]
        common: Common,
        /// trajectories.jsonl to flag.
        #[arg(long)]
        data: PathBuf,
        /// D model: Q-table or network checkpoint.
        #[arg(long)]
        d: PathBuf,
        /// R model: Q-table or network checkpoint.
        #[arg(long)]
        r: PathBuf,
        /// Encoder checkpoint, needed for network models.
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Emergence, duration, alignment, value-gap and histogram tables.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// values.jsonl written by `flag`.
        #[arg(long)]
        values: PathBuf,
        /// The flagged trajectories, to add observation features to the alignment.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Summarize an analysis directory as markdown.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory written by `analyze`.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Split directory (train.jsonl) or a trajectories file.
    #[arg(long)]
    pub data: PathBuf,
    /// Frozen encoder checkpoint; selects the network learner.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub n_actions: Option<usize>,
    /// Override the number of network updates.
    #[arg(long)]
    pub updates: Option<usize>,
    /// Override the number of tabular sweeps.
    #[arg(long)]
    pub sweeps: Option<usize>,
}

fn stage(name: &'static str, common: &Common, edit: impl FnOnce(&mut RunConfig)) -> Result<Stage> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.reseed(seed);
    }
    edit(&mut cfg);
    Stage::new(name, cfg, &common.out)
}

fn train(name: &'static str, kind: DualKind, a: &TrainArgs) -> Result<()> {
    let st = stage(name, &a.common, |c| {
        if let Some(u) = a.updates {
            c.dqn.updates = u;
        }
        if let Some(s) = a.sweeps {
            c.tabular.sweeps = s;
        }
    })?;
    stages::train_dual_stage(st, kind, &a.data, a.encoder.as_deref(), a.n_actions)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenLifegate { common, layout, transitions } => stages::gen_lifegate(stage("gen-lifegate", common, |c| {
            if layout.is_some() {
                c.lifegate.layout = layout.clone();
            }
            if let Some(n) = transitions {
                c.lifegate.n_transitions = *n;
            }
        })?),
        Command::GenSynthetic { common, trajectories } => stages::gen_synthetic(stage("gen-synthetic", common, |c| {
            if let Some(n) = trajectories {
                c.behavior.n_trajectories = *n;
            }
        })?),
        Command::Split { common, data } => stages::split_stage(stage("split", common, |_| {})?, data),
        Command::TrainSc { common, data, n_actions, epochs } => {
            let st = stage("train-sc", common, |c| {
                if let Some(e) = epochs {
                    c.encoder.epochs = *e;
                }
            })?;
            stages::train_sc_stage(st, data, *n_actions)
        }
        Command::TrainD { train: a } => train("train-d", DualKind::D, a),
        Command::TrainR { train: a } => train("train-r", DualKind::R, a),
        Command::SolveExact { common, layout, mdp } => {
            let st = stage("solve-exact", common, |c| match layout.as_deref() {
                Some("default") | None => {}
                Some(p) => c.lifegate.layout = Some(PathBuf::from(p)),
            })?;
            let report = stages::solve_exact_stage(st, mdp.as_deref())?;
            print!("{}", report.to_text());
            if !report.passed() {
                bail!("identity checks failed");
            }
            Ok(())
        }
        Command::VerifyTheorems { common, seeds } => {
            let st = stage("verify-theorems", common, |c| {
                if let Some(n) = seeds {
                    c.suite.cases = *n;
                }
            })?;
            let cases = st.cfg.suite.cases;
            let failed = stages::verify_theorems_stage(st, cases)?;
            println!("{cases} cases, {failed} failed");
            if failed > 0 {
                bail!("{failed} of {cases} random MDPs failed the identity checks");
            }
            Ok(())
        }
        Command::Flag { common, data, d, r, encoder } => {
            stages::flag_stage(stage("flag", common, |_| {})?, data, d, r, encoder.as_deref())
        }
        Command::Analyze { common, values, data } => stages::analyze_stage(stage("analyze", common, |_| {})?, values, data.as_deref()),
        Command::Report { common, dir } => {
            let md = stages::report_stage(stage("report", common, |_| {})?, dir)?;
            print!("{md}");
            Ok(())
        }
    }
}
