//! Losses, Adam, the windowed training loop and the scaling study.
//!
//! Training only ever reads the observation frames of a dataset (frames
//! before `n_obs`); the held-out horizon is touched exclusively by
//! [`predict_test`].

mod adam;
mod loss;
mod scaling;

pub use adam::Adam;
pub use loss::{mae_loss, mse_loss, Loss};
pub use scaling::{run_scaling_study, scaling_csv, scaling_lr, ScalingRow};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::VectorField;
use crate::error::{Error, Result};
use crate::simulators::{Dataset, System};
use crate::solvers::{integrate, SolverConfig};
use crate::tensor::{Tape, Var};

/// Windows per independently recorded tape; gradients of the chunks of one
/// batch are summed in order, so results do not depend on thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub solver: SolverConfig,
    pub seed: u64,
    pub loss: Loss,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Fraction of windows per simulation held out for validation.
    pub val_fraction: f64,
    /// Model time between consecutive frames.
    pub frame_dt: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 1e-3,
            batch_size: 64,
            solver: SolverConfig::euler(1.0),
            seed: 0,
            loss: Loss::Mse,
            grad_clip: None,
            val_fraction: 0.1,
            frame_dt: 1.0,
        }
    }
}

/// Model time between frames for a dataset: the physical sample interval
/// for the spiral (sampled on a fixed time span); otherwise one training
/// window spans unit time.
pub fn default_frame_dt(ds: &Dataset) -> f64 {
    match ds.manifest.system {
        System::Spiral => ds.manifest.sample_interval,
        _ => 1.0 / (ds.manifest.windows.window.max(2) - 1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// `epoch,train_loss,val_loss` rows; an empty field marks a missing
/// validation loss.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map_or(String::new(), |v| format!("{v:.16e}"));
        out.push_str(&format!("{},{:.16e},{}\n", r.epoch, r.train_loss, val));
    }
    out
}

/// One training window: frames `start..start + len` of simulation `sim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSample {
    pub sim: usize,
    pub start: usize,
}

/// Normalised observation frames of a dataset, the only data training sees.
#[derive(Debug, Clone)]
pub struct ObservedData {
    pub frames: Vec<Vec<Vec<f64>>>,
    pub window: usize,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
}

impl ObservedData {
    pub fn from_dataset(ds: &Dataset, val_fraction: f64) -> Result<Self> {
        let w = ds.manifest.windows;
        w.validate(ds.manifest.n_frames)?;
        let frames = (0..ds.n_sims())
            .map(|s| ds.normalized(s).into_iter().take(w.n_obs).collect())
            .collect();
        let starts = w.starts();
        let n_val = if starts.len() >= 2 && val_fraction > 0.0 {
            ((starts.len() as f64 * val_fraction).ceil() as usize).min(starts.len() - 1)
        } else {
            0
        };
        let mut train = Vec::new();
        let mut val = Vec::new();
        for sim in 0..ds.n_sims() {
            for (i, &start) in starts.iter().enumerate() {
                let sample = WindowSample { sim, start };
                if i + n_val >= starts.len() {
                    val.push(sample);
                } else {
                    train.push(sample);
                }
            }
        }
        Ok(ObservedData {
            frames,
            window: w.window,
            train,
            val,
        })
    }
}

fn rows(data: &ObservedData, samples: &[WindowSample], offset: usize) -> Vec<f64> {
    samples
        .iter()
        .flat_map(|s| data.frames[s.sim][s.start + offset].iter().copied())
        .collect()
}

/// Mean loss over every predicted frame of the given windows.
pub fn window_loss<'t>(
    field: &VectorField,
    tape: &'t Tape,
    params: &[Var<'t>],
    data: &ObservedData,
    samples: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<Var<'t>> {
    let n = field.n();
    let b = samples.len();
    let x0 = tape.constant(vec![b, n], rows(data, samples, 0))?;
    let s0 = field.initial_state(params, x0)?;
    let times: Vec<f64> = (0..data.window).map(|k| k as f64 * cfg.frame_dt).collect();
    let traj = integrate(|_, s: &Var<'t>| field.rhs(params, *s), s0, &times, &cfg.solver)?;
    let mut terms = Vec::with_capacity(data.window - 1);
    for k in 1..data.window {
        let pred = field.observe(traj.states[k])?;
        let target = tape.constant(vec![b, n], rows(data, samples, k))?;
        terms.push(cfg.loss.apply(pred, target)?);
    }
    let rest: Vec<(f64, Var<'t>)> = terms[1..].iter().map(|v| (1.0, *v)).collect();
    Ok(terms[0].lincomb(&rest)?.scale(1.0 / terms.len() as f64))
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFiniteState { .. } | Error::StepLimitExceeded { .. })
}

/// Loss and summed parameter gradients over `samples`.
fn batch_gradient(
    field: &VectorField,
    data: &ObservedData,
    samples: &[WindowSample],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let total = samples.len() as f64;
    let parts: Vec<Result<(f64, Vec<Vec<f64>>)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let tape = Tape::new();
            let params = field.params().record(&tape);
            let loss = window_loss(field, &tape, &params, data, chunk, cfg)?;
            let weight = chunk.len() as f64 / total;
            let grads = tape.backward(loss.scale(weight))?;
            Ok((loss.item() * weight, params.iter().map(|p| grads.wrt(*p)).collect()))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Vec<f64>>> = None;
    for part in parts {
        let (l, g) = part.map_err(|e| if is_numeric_failure(&e) { Error::NonFiniteLoss { epoch } } else { e })?;
        loss += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((loss, grads.unwrap_or_default()))
}

/// Mean loss over `samples` without recording gradients.
pub fn evaluate_loss(field: &VectorField, data: &ObservedData, samples: &[WindowSample], cfg: &TrainConfig) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let total = samples.len() as f64;
    let parts: Vec<Result<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let tape = Tape::new();
            let params = field.params().record_constant(&tape);
            let loss = window_loss(field, &tape, &params, data, chunk, cfg)?;
            Ok(loss.item() * chunk.len() as f64 / total)
        })
        .collect();
    parts.into_iter().sum()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: VectorField,
    pub history: Vec<EpochRecord>,
    pub wall_time_s: f64,
}

/// Trains `field` on the observation windows of `ds`.
pub fn train(field: VectorField, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(field, ds, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    mut field: VectorField,
    ds: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.frame_dt > 0.0) {
        return Err(Error::InvalidConfig(
            "batch size, learning rate and frame dt must be positive".into(),
        ));
    }
    if ds.manifest.state_dim != field.n() {
        return Err(Error::LayoutMismatch(format!(
            "dataset state has {} entries, model expects {}",
            ds.manifest.state_dim,
            field.n()
        )));
    }
    let start = Instant::now();
    let data = ObservedData::from_dataset(ds, cfg.val_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = data.train.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradient(&field, &data, batch, cfg, epoch)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            let scale = match cfg.grad_clip {
                Some(max) => {
                    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                    if norm > max {
                        max / norm
                    } else {
                        1.0
                    }
                }
                None => 1.0,
            };
            let store = field.params_mut();
            store.zero_grad();
            for (t, g) in store.tensors_mut().iter_mut().zip(&grads) {
                let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.accumulate_grad(&g)?;
            }
            adam.step(store);
        }
        let train_loss = epoch_loss / order.len().max(1) as f64;
        let val_loss = if data.val.is_empty() {
            None
        } else {
            let v = evaluate_loss(&field, &data, &data.val, cfg)
                .map_err(|e| if is_numeric_failure(&e) { Error::NonFiniteLoss { epoch } } else { e })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            Some(v)
        };
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome {
        field,
        history,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Normalised predictions and ground truth on the held-out horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPrediction {
    /// `pred[sim][k]` is the predicted state at frame `n_obs + k`.
    pub pred: Vec<Vec<Vec<f64>>>,
    pub truth: Vec<Vec<Vec<f64>>>,
}

/// Rolls the model out from each simulation's test start frame and collects
/// the horizon frames.
pub fn predict_test(field: &VectorField, ds: &Dataset, solver: &SolverConfig, frame_dt: f64) -> Result<HorizonPrediction> {
    let w = ds.manifest.windows;
    w.validate(ds.manifest.n_frames)?;
    if ds.manifest.state_dim != field.n() {
        return Err(Error::LayoutMismatch(format!(
            "dataset state has {} entries, model expects {}",
            ds.manifest.state_dim,
            field.n()
        )));
    }
    let n = field.n();
    let norm: Vec<Vec<Vec<f64>>> = (0..ds.n_sims()).map(|s| ds.normalized(s)).collect();
    let x0: Vec<f64> = norm.iter().flat_map(|f| f[w.test_start].iter().copied()).collect();
    let last = w.n_obs + w.horizon - 1;
    let times: Vec<f64> = (0..=(last - w.test_start)).map(|k| k as f64 * frame_dt).collect();
    let states = field.rollout(&x0, &times, solver)?;
    let offset = w.n_obs - w.test_start;
    let pred = (0..ds.n_sims())
        .map(|s| {
            (0..w.horizon)
                .map(|k| states[offset + k][s * n..(s + 1) * n].to_vec())
                .collect()
        })
        .collect();
    let truth = norm
        .iter()
        .map(|f| w.test_frames().map(|k| f[k].clone()).collect())
        .collect();
    Ok(HorizonPrediction { pred, truth })
}

/// The ground truth used as its own prediction.
pub fn ground_truth_prediction(ds: &Dataset) -> HorizonPrediction {
    let w = ds.manifest.windows;
    let truth: Vec<Vec<Vec<f64>>> = (0..ds.n_sims())
        .map(|s| {
            let f = ds.normalized(s);
            w.test_frames().map(|k| f[k].clone()).collect()
        })
        .collect();
    HorizonPrediction {
        pred: truth.clone(),
        truth,
    }
}
