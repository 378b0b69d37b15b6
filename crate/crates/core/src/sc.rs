//! History encoders trained by next-observation prediction.
//!
//! The windowed encoder reads the last `window` pairs `(O_k, A_{k-1})`,
//! oldest first. Each pair is the observation followed by a one-hot over
//! `n_actions + 1` slots, the extra slot meaning "no previous action". Steps
//! before the episode start are zero observations with that null action.
//! A decoder maps `(embedding, one-hot A_t)` to the mean of a unit-variance
//! Gaussian over `O_{t+1}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Observation, Trajectory};
use crate::nn::{Adam, Differentiable, Mlp};
use crate::synth::child_rng;

/// `0.5·ln(2π)`, the per-coordinate constant of a unit-variance Gaussian NLL.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Allowed gap between the summed NLL and its squared-error form per batch.
pub const NLL_IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub window: usize,
    /// Hidden widths of the encoder; the decoder mirrors them reversed.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            window: 8,
            hidden: vec![128],
            lr: 5e-4,
            epochs: 600,
            batch: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.window == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter("embed_dim, window and batch must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Encoder {
    /// One-hot of the current state, for tabular cohorts.
    Identity { n_states: usize },
    Window {
        obs_dim: usize,
        n_actions: usize,
        window: usize,
        net: Mlp,
    },
}

impl Encoder {
    pub fn embed_dim(&self) -> usize {
        match self {
            Encoder::Identity { n_states } => *n_states,
            Encoder::Window { net, .. } => net.output_dim(),
        }
    }

    /// Embedding of step `t` of `traj`.
    pub fn encode_step(&self, traj: &Trajectory, t: usize) -> Result<Vec<f64>> {
        match self {
            Encoder::Identity { n_states } => {
                let s = traj.steps[t]
                    .obs
                    .state()
                    .ok_or_else(|| Error::NonTabularData(traj.id.clone()))?;
                if s >= *n_states {
                    return Err(Error::ShapeMismatch(format!("state {s} outside one-hot of width {n_states}")));
                }
                let mut e = vec![0.0; *n_states];
                e[s] = 1.0;
                Ok(e)
            }
            Encoder::Window {
                obs_dim,
                n_actions,
                window,
                net,
            } => {
                let x = window_input(traj, t, *window, *obs_dim, *n_actions)?;
                net.forward(&x, 1)
            }
        }
    }

    /// Embeddings of every step of `traj`.
    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
        (0..traj.len()).map(|t| self.encode_step(traj, t)).collect()
    }

    /// Embedding of an explicit window of `(observation, previous action)`
    /// pairs, oldest first; `None` is the null action. Shorter windows are
    /// padded at the front.
    pub fn encode_history(&self, history: &[(&[f64], Option<usize>)]) -> Result<Vec<f64>> {
        let Encoder::Window {
            obs_dim,
            n_actions,
            window,
            net,
        } = self
        else {
            return Err(Error::ShapeMismatch("identity encoder takes states, not histories".into()));
        };
        if history.len() > *window {
            return Err(Error::ShapeMismatch(format!("history of {} exceeds window {window}", history.len())));
        }
        let slot = obs_dim + n_actions + 1;
        let mut x = vec![0.0; window * slot];
        let pad = window - history.len();
        for k in 0..pad {
            x[k * slot + obs_dim + n_actions] = 1.0;
        }
        for (k, (obs, prev)) in history.iter().enumerate() {
            if obs.len() != *obs_dim {
                return Err(Error::ShapeMismatch(format!("observation of length {} expected {obs_dim}", obs.len())));
            }
            let base = (pad + k) * slot;
            x[base..base + obs_dim].copy_from_slice(obs);
            let a = prev.unwrap_or(*n_actions);
            if a > *n_actions {
                return Err(Error::ShapeMismatch(format!("action {a} outside {n_actions}")));
            }
            x[base + obs_dim + a] = 1.0;
        }
        net.forward(&x, 1)
    }
}

/// Encoder input for step `t`.
pub fn window_input(traj: &Trajectory, t: usize, window: usize, obs_dim: usize, n_actions: usize) -> Result<Vec<f64>> {
    let slot = obs_dim + n_actions + 1;
    let mut x = vec![0.0; window * slot];
    for k in 0..window {
        let base = k * slot;
        // position k holds step t - (window - 1 - k)
        let back = window - 1 - k;
        if back > t {
            x[base + obs_dim + n_actions] = 1.0;
            continue;
        }
        let step = t - back;
        let obs = obs_vector(&traj.steps[step].obs, obs_dim, &traj.id)?;
        x[base..base + obs_dim].copy_from_slice(obs);
        let prev = if step == 0 { n_actions } else { traj.steps[step - 1].action };
        if prev > n_actions {
            return Err(Error::ShapeMismatch(format!("action {prev} outside {n_actions} in {}", traj.id)));
        }
        x[base + obs_dim + prev] = 1.0;
    }
    Ok(x)
}

fn obs_vector<'a>(obs: &'a Observation, obs_dim: usize, id: &str) -> Result<&'a [f64]> {
    let v = obs
        .vector()
        .ok_or_else(|| Error::ShapeMismatch(format!("trajectory {id} has state observations")))?;
    if v.len() != obs_dim {
        return Err(Error::ShapeMismatch(format!("observation of length {} in {id}, expected {obs_dim}", v.len())));
    }
    Ok(v)
}

/// Encoder and decoder trained jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScModel {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub window: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Flat training batch: encoder inputs, action one-hots and targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScBatch {
    pub x: Vec<f64>,
    pub actions: Vec<usize>,
    pub y: Vec<f64>,
}

impl ScBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Batch losses: summed Gaussian NLL and summed squared error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub nll: f64,
    pub sq_err: f64,
}

impl BatchLoss {
    /// `nll − 0.5·n·d·ln(2π) − 0.5·Σ sq`, which is zero for unit variance.
    pub fn identity_residual(&self, n_coords: usize) -> f64 {
        self.nll - HALF_LN_2PI * n_coords as f64 - 0.5 * self.sq_err
    }
}

impl ScModel {
    pub fn new(obs_dim: usize, n_actions: usize, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = child_rng(config.seed, 0);
        let din = config.window * (obs_dim + n_actions + 1);
        let mut enc_sizes = vec![din];
        enc_sizes.extend(&config.hidden);
        enc_sizes.push(config.embed_dim);
        let mut dec_sizes = vec![config.embed_dim + n_actions];
        dec_sizes.extend(config.hidden.iter().rev());
        dec_sizes.push(obs_dim);
        Ok(Self {
            obs_dim,
            n_actions,
            window: config.window,
            encoder: Mlp::new(&enc_sizes, &mut rng),
            decoder: Mlp::new(&dec_sizes, &mut rng),
        })
    }

    pub fn encoder(&self) -> Encoder {
        Encoder::Window {
            obs_dim: self.obs_dim,
            n_actions: self.n_actions,
            window: self.window,
            net: self.encoder.clone(),
        }
    }

    /// Mean prediction of `O_{t+1}` for every row of the batch.
    pub fn predict(&self, batch: &ScBatch) -> Result<Vec<f64>> {
        Ok(self.forward(batch)?.2)
    }

    fn decoder_input(&self, emb: &[f64], actions: &[usize]) -> Vec<f64> {
        let e = self.encoder.output_dim();
        let w = e + self.n_actions;
        let mut z = vec![0.0; actions.len() * w];
        for (b, &a) in actions.iter().enumerate() {
            z[b * w..b * w + e].copy_from_slice(&emb[b * e..(b + 1) * e]);
            z[b * w + e + a] = 1.0;
        }
        z
    }

    #[allow(clippy::type_complexity)]
    fn forward(&self, batch: &ScBatch) -> Result<(crate::nn::Cache, crate::nn::Cache, Vec<f64>)> {
        let n = batch.len();
        let enc = self.encoder.forward_cached(&batch.x, n)?;
        let z = self.decoder_input(enc.output(), &batch.actions);
        let dec = self.decoder.forward_cached(&z, n)?;
        let pred = dec.output().to_vec();
        Ok((enc, dec, pred))
    }

    pub fn batch_loss(&self, batch: &ScBatch) -> Result<BatchLoss> {
        let pred = self.predict(batch)?;
        Ok(losses(&pred, &batch.y))
    }

    /// Loss and the gradient of the summed NLL, encoder parameters first.
    pub fn loss_and_grad(&self, batch: &ScBatch) -> Result<(BatchLoss, Vec<f64>)> {
        let n = batch.len();
        let (enc, dec, pred) = self.forward(batch)?;
        let loss = losses(&pred, &batch.y);
        let d: Vec<f64> = pred.iter().zip(&batch.y).map(|(p, y)| p - y).collect();
        let (g_dec, d_z) = self.decoder.backward(&dec, &d);
        let e = self.encoder.output_dim();
        let w = e + self.n_actions;
        let mut d_emb = vec![0.0; n * e];
        for b in 0..n {
            d_emb[b * e..(b + 1) * e].copy_from_slice(&d_z[b * w..b * w + e]);
        }
        let (mut grads, _) = self.encoder.backward(&enc, &d_emb);
        grads.extend(g_dec);
        Ok((loss, grads))
    }

    fn param_mut_flat(&mut self, i: usize) -> &mut f64 {
        let ne = self.encoder.n_params();
        if i < ne {
            self.encoder.param_mut(i)
        } else {
            self.decoder.param_mut(i - ne)
        }
    }
}

/// Summed NLL computed coordinate by coordinate from the Gaussian log
/// density, and the summed squared error.
fn losses(pred: &[f64], y: &[f64]) -> BatchLoss {
    let mut nll = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(y) {
        let r = t - p;
        nll += -(-HALF_LN_2PI - 0.5 * r * r);
        sq += r * r;
    }
    BatchLoss { nll, sq_err: sq }
}

impl Differentiable<ScBatch> for ScModel {
    fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }

    fn param_mut(&mut self, i: usize) -> &mut f64 {
        self.param_mut_flat(i)
    }

    fn loss(&self, batch: &ScBatch) -> f64 {
        self.batch_loss(batch).expect("probe shape").nll
    }

    fn loss_and_grad(&self, batch: &ScBatch) -> (f64, Vec<f64>) {
        let (l, g) = ScModel::loss_and_grad(self, batch).expect("probe shape");
        (l.nll, g)
    }
}

/// Every `(trajectory, step)` that has a successor observation.
pub fn prediction_pairs(cohort: &[Trajectory]) -> Vec<(usize, usize)> {
    cohort
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len().saturating_sub(1)).map(move |k| (i, k)))
        .collect()
}

pub fn make_batch(model: &ScModel, cohort: &[Trajectory], pairs: &[(usize, usize)]) -> Result<ScBatch> {
    let mut b = ScBatch::default();
    for &(i, k) in pairs {
        let t = &cohort[i];
        b.x.extend(window_input(t, k, model.window, model.obs_dim, model.n_actions)?);
        let a = t.steps[k].action;
        if a >= model.n_actions {
            return Err(Error::ShapeMismatch(format!("action {a} outside {}", model.n_actions)));
        }
        b.actions.push(a);
        b.y.extend_from_slice(obs_vector(&t.steps[k + 1].obs, model.obs_dim, &t.id)?);
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean NLL per predicted coordinate.
    pub train_nll: f64,
    /// Mean squared error per predicted coordinate.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Largest NLL identity residual over the epoch's batches.
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScTraining {
    pub model: ScModel,
    pub curve: Vec<EpochLoss>,
}

/// Mean squared error per coordinate over every prediction pair.
pub fn evaluate_mse(model: &ScModel, cohort: &[Trajectory]) -> Result<Option<f64>> {
    let pairs = prediction_pairs(cohort);
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut sq = 0.0;
    for chunk in pairs.chunks(512) {
        sq += model.batch_loss(&make_batch(model, cohort, chunk)?)?.sq_err;
    }
    Ok(Some(sq / (pairs.len() * model.obs_dim) as f64))
}

/// Minimizes the unit-variance Gaussian NLL of the next observation with
/// Adam over shuffled minibatches.
pub fn train_sc(train: &[Trajectory], val: &[Trajectory], obs_dim: usize, n_actions: usize, config: &EncoderConfig) -> Result<ScTraining> {
    let mut model = ScModel::new(obs_dim, n_actions, config)?;
    let mut pairs = prediction_pairs(train);
    if pairs.is_empty() {
        return Err(Error::EmptyBuffer("prediction pairs"));
    }
    let mut opt_enc = Adam::new(config.lr, model.encoder.n_params());
    let mut opt_dec = Adam::new(config.lr, model.decoder.n_params());
    let mut rng = child_rng(config.seed, 1);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        pairs.shuffle(&mut rng);
        let (mut nll, mut sq, mut worst) = (0.0, 0.0, 0.0f64);
        for chunk in pairs.chunks(config.batch) {
            let batch = make_batch(&model, train, chunk)?;
            let (loss, grads) = model.loss_and_grad(&batch)?;
            if !loss.nll.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(epoch));
            }
            let residual = loss.identity_residual(batch.y.len()).abs();
            debug_assert!(residual <= NLL_IDENTITY_TOL, "NLL identity off by {residual}");
            worst = worst.max(residual);
            nll += loss.nll;
            sq += loss.sq_err;
            let (g_enc, g_dec) = grads.split_at(model.encoder.n_params());
            opt_enc.step(&mut model.encoder, g_enc);
            opt_dec.step(&mut model.decoder, g_dec);
        }
        let coords = (pairs.len() * obs_dim) as f64;
        let entry = EpochLoss {
            epoch,
            train_nll: nll / coords,
            train_mse: sq / coords,
            val_mse: evaluate_mse(&model, val)?,
            identity_residual: worst,
        };
        log::debug!("sc epoch {epoch}: nll {:.6} val {:?}", entry.train_nll, entry.val_mse);
        curve.push(entry);
    }
    Ok(ScTraining { model, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{Outcome, Step, TerminalKind};
    use crate::nn::gradient_check;
    use alloc::string::ToString;

    /// Deterministic cycle 0 -> 1 -> 2 -> 0 with action-dependent jumps and
    /// one-hot observations.
    fn cycle_cohort(n: usize, len: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|i| {
                let mut s = i % 3;
                let steps: Vec<Step> = (0..len)
                    .map(|k| {
                        let a = (i + k) % 2;
                        let mut o = vec![0.0; 3];
                        o[s] = 1.0;
                        let step = Step {
                            obs: Observation::Vector(o),
                            action: a,
                            reward: 0.0,
                            terminal: if k + 1 == len { TerminalKind::Positive } else { TerminalKind::None },
                        };
                        s = (s + 1 + a) % 3;
                        step
                    })
                    .collect();
                Trajectory::new(i.to_string(), Outcome::Positive, steps).unwrap()
            })
            .collect()
    }

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 8,
            window: 2,
            hidden: vec![16],
            lr: 1e-2,
            epochs: 60,
            batch: 16,
            seed: 3,
        }
    }

    #[test]
    fn learns_deterministic_dynamics() {
        let cohort = cycle_cohort(30, 6);
        let out = train_sc(&cohort[..24], &cohort[24..], 3, 2, &small_config()).unwrap();
        let last = out.curve.last().unwrap();
        assert!(last.val_mse.unwrap() < 1e-3, "{last:?}");
        assert!(out.curve.iter().all(|e| e.identity_residual <= NLL_IDENTITY_TOL));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cohort = cycle_cohort(4, 5);
        let mut model = ScModel::new(3, 2, &small_config()).unwrap();
        let pairs = prediction_pairs(&cohort);
        let batch = make_batch(&model, &cohort, &pairs).unwrap();
        let err = gradient_check(&mut model, &batch, 64, &mut child_rng(0, 9));
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn window_padding_uses_null_action() {
        let cohort = cycle_cohort(1, 3);
        let x = window_input(&cohort[0], 0, 3, 3, 2).unwrap();
        // slots: [obs 3 | actions 2 | null 1] x 3, two padded slots first
        assert_eq!(&x[..6], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&x[6..12], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&x[12..18], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let x1 = window_input(&cohort[0], 1, 3, 3, 2).unwrap();
        // step 1 follows action 0 from state 0 into state 1
        assert_eq!(&x1[12..18], &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn history_encoding_matches_trajectory_encoding() {
        let cohort = cycle_cohort(1, 4);
        let model = ScModel::new(3, 2, &small_config()).unwrap();
        let enc = model.encoder();
        let t = &cohort[0];
        let o = |k: usize| t.steps[k].obs.vector().unwrap();
        let hist = [(o(1), Some(t.steps[0].action)), (o(2), Some(t.steps[1].action))];
        assert_eq!(enc.encode_history(&hist).unwrap(), enc.encode_step(t, 2).unwrap());
        let short = [(o(0), None)];
        assert_eq!(enc.encode_history(&short).unwrap(), enc.encode_step(t, 0).unwrap());
        assert_eq!(enc.encode_step(t, 2).unwrap(), enc.encode_step(t, 2).unwrap());
    }

    #[test]
    fn identity_encoder_is_one_hot() {
        let steps = vec![Step {
            obs: Observation::State(2),
            action: 0,
            reward: 1.0,
            terminal: TerminalKind::Positive,
        }];
        let t = Trajectory::new("a", Outcome::Positive, steps).unwrap();
        let e = Encoder::Identity { n_states: 4 };
        assert_eq!(e.encode_step(&t, 0).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(Encoder::Identity { n_states: 2 }.encode_step(&t, 0).is_err());
    }

    #[test]
    fn nll_identity_holds_per_batch() {
        let cohort = cycle_cohort(5, 6);
        let model = ScModel::new(3, 2, &small_config()).unwrap();
        let batch = make_batch(&model, &cohort, &prediction_pairs(&cohort)).unwrap();
        let l = model.batch_loss(&batch).unwrap();
        assert!(l.identity_residual(batch.y.len()).abs() < NLL_IDENTITY_TOL);
    }

    #[test]
    fn constant_observations_reach_the_floor() {
        let mut cohort = cycle_cohort(10, 5);
        for t in &mut cohort {
            for s in &mut t.steps {
                s.obs = Observation::Vector(vec![0.5, -0.5, 0.25]);
            }
        }
        let cfg = EncoderConfig { epochs: 100, ..small_config() };
        let out = train_sc(&cohort, &[], 3, 2, &cfg).unwrap();
        let last = out.curve.last().unwrap();
        assert!(last.train_mse < 1e-4);
        assert!((last.train_nll - HALF_LN_2PI).abs() < 1e-4);
    }

    #[test]
    fn shape_errors() {
        let cohort = cycle_cohort(2, 3);
        let model = ScModel::new(4, 2, &small_config()).unwrap();
        assert!(matches!(make_batch(&model, &cohort, &[(0, 0)]), Err(Error::ShapeMismatch(_))));
        assert!(EncoderConfig { window: 0, ..small_config() }.validate().is_err());
    }
}
