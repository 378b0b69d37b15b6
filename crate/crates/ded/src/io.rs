//! File formats: JSON documents, the trajectory JSONL schema, network
//! checkpoints and CSV tables.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use ded_core::mdp::{MdpDocument, Observation, Outcome, Step, TabularMdp, TerminalKind, Trajectory};
use ded_core::nn::{Dense, Mlp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ValidationError;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ValidationError(format!("{}: {e}", path.display())).into())
}

pub fn write_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    write_json(path, &MdpDocument::from(mdp.clone()))
}

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    let doc: MdpDocument = read_json(path)?;
    TabularMdp::try_from(doc).map_err(|e| ValidationError(format!("{}: {e}", path.display())).into())
}

/// One line of `trajectories.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub id: String,
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
}

/// A step carries either `obs` (feature vector) or `state` (index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    pub action: usize,
    pub reward: f64,
    pub terminal: TerminalKind,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        let steps = t
            .steps
            .iter()
            .map(|s| {
                let (obs, state) = match &s.obs {
                    Observation::State(i) => (None, Some(*i)),
                    Observation::Vector(v) => (Some(v.clone()), None),
                };
                StepRecord {
                    obs,
                    state,
                    action: s.action,
                    reward: s.reward,
                    terminal: s.terminal,
                }
            })
            .collect();
        Self {
            id: t.id.clone(),
            outcome: t.outcome,
            steps,
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = String;

    fn try_from(r: TrajectoryRecord) -> std::result::Result<Self, String> {
        let mut steps = Vec::with_capacity(r.steps.len());
        for (k, s) in r.steps.into_iter().enumerate() {
            let obs = match (s.obs, s.state) {
                (Some(v), None) => Observation::Vector(v),
                (None, Some(i)) => Observation::State(i),
                _ => return Err(format!("step {k} needs exactly one of `obs` and `state`")),
            };
            steps.push(Step {
                obs,
                action: s.action,
                reward: s.reward,
                terminal: s.terminal,
            });
        }
        Trajectory::new(r.id, r.outcome, steps).map_err(|e| e.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{path}: line {line}: {message}")]
pub struct ParseError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for t in trajectories {
        serde_json::to_writer(&mut w, &TrajectoryRecord::from(t))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one trajectory per non-blank line; errors name the 1-based line.
pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| ParseError {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        out.push(Trajectory::try_from(record).map_err(fail)?);
    }
    Ok(out)
}

/// Checkpoint document shared by every network: the configuration that
/// produced it and the layers in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<C> {
    pub config: C,
    pub layers: Vec<Dense>,
}

impl<C> Checkpoint<C> {
    pub fn new(config: C, net: &Mlp) -> Self {
        Self {
            config,
            layers: net.layers.clone(),
        }
    }

    pub fn mlp(&self) -> Result<Mlp> {
        Mlp::from_layers(self.layers.clone()).map_err(|e| ValidationError(e.to_string()).into())
    }
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row.map_err(|e| ValidationError(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Trajectory> {
        let step = |obs, terminal| Step {
            obs,
            action: 1,
            reward: 0.0,
            terminal,
        };
        vec![
            Trajectory::new(
                "a",
                Outcome::Negative,
                vec![
                    step(Observation::Vector(vec![0.5, -1.25]), TerminalKind::None),
                    step(Observation::Vector(vec![0.1, 3.0]), TerminalKind::Negative),
                ],
            )
            .unwrap(),
            Trajectory::new("b", Outcome::Positive, vec![step(Observation::State(4), TerminalKind::Positive)]).unwrap(),
        ]
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_trajectories(&p, &sample()).unwrap();
        assert_eq!(read_trajectories(&p).unwrap(), sample());
    }

    #[test]
    fn malformed_line_is_reported_by_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_trajectories(&p, &sample()).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"id\": 3,\n");
        fs::write(&p, text).unwrap();
        let err = read_trajectories(&p).unwrap_err();
        assert_eq!(err.downcast_ref::<ParseError>().unwrap().line, 3);
    }

    #[test]
    fn empty_file_is_an_empty_cohort() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        fs::write(&p, "").unwrap();
        assert!(read_trajectories(&p).unwrap().is_empty());
    }

    #[test]
    fn step_needs_one_observation_kind() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        fs::write(
            &p,
            r#"{"id":"x","outcome":"positive","steps":[{"obs":[1.0],"state":0,"action":0,"reward":1.0,"terminal":"positive"}]}"#,
        )
        .unwrap();
        let err = read_trajectories(&p).unwrap_err();
        assert_eq!(err.downcast_ref::<ParseError>().unwrap().line, 1);
    }

    #[test]
    fn record_schema() {
        let line = serde_json::to_string(&TrajectoryRecord::from(&sample()[1])).unwrap();
        assert_eq!(line, r#"{"id":"b","outcome":"positive","steps":[{"state":4,"action":1,"reward":0.0,"terminal":"positive"}]}"#);
    }
}
