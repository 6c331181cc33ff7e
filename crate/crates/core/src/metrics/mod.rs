//! Evaluation metrics on predicted vs ground-truth sequences and fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::HorizonPrediction;

fn check_pair(op: &'static str, pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::shape(op, &[pred.len()], &[target.len()]));
    }
    if pred.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("mse", pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("mae", pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Coefficient of determination over all elements.
pub fn r2_score(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair("r2", pred, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn check_points(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = a[0].len();
    if let Some(p) = a.iter().chain(b).find(|p| p.len() != d) {
        return Err(Error::DimMismatch(format!("points of dimension {d} and {}", p.len())));
    }
    Ok(d)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn directed_mean(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let mins: Vec<f64> = from
        .par_iter()
        .map(|a| to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min))
        .collect();
    mins.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric chamfer distance: the mean Euclidean nearest-neighbour distance
/// from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_points(a, b)?;
    Ok(directed_mean(a, b) + directed_mean(b, a))
}

/// Maps a sequence of grid frames to points `(x, y, t, v_1..v_C)` with every
/// coordinate scaled to `[0, 1]`. The value scaling is fitted once (usually
/// on the ground truth) and reused for predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLifting {
    /// `[channels, height, width]`.
    pub grid: [usize; 3],
    pub value_min: Vec<f64>,
    pub value_max: Vec<f64>,
}

fn unit(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

impl FieldLifting {
    pub fn fit(frames: &[Vec<f64>], grid: [usize; 3]) -> Result<Self> {
        let [c, h, w] = grid;
        let mut value_min = vec![f64::INFINITY; c];
        let mut value_max = vec![f64::NEG_INFINITY; c];
        for f in frames {
            if f.len() != c * h * w {
                return Err(Error::DimMismatch(format!("frame of {} values for grid {grid:?}", f.len())));
            }
            for ch in 0..c {
                for v in &f[ch * h * w..(ch + 1) * h * w] {
                    value_min[ch] = value_min[ch].min(*v);
                    value_max[ch] = value_max[ch].max(*v);
                }
            }
        }
        Ok(FieldLifting {
            grid,
            value_min,
            value_max,
        })
    }

    pub fn lift(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let [c, h, w] = self.grid;
        let t_len = frames.len();
        let mut points = Vec::with_capacity(t_len * h * w);
        for (k, f) in frames.iter().enumerate() {
            if f.len() != c * h * w {
                return Err(Error::DimMismatch(format!("frame of {} values for grid {:?}", f.len(), self.grid)));
            }
            for i in 0..h {
                for j in 0..w {
                    let mut p = vec![unit(j, w), unit(i, h), unit(k, t_len)];
                    for ch in 0..c {
                        let span = self.value_max[ch] - self.value_min[ch];
                        let v = f[ch * h * w + i * w + j];
                        p.push(if span > 0.0 { (v - self.value_min[ch]) / span } else { 0.0 });
                    }
                    points.push(p);
                }
            }
        }
        Ok(points)
    }
}

/// Lifts a grid-field sequence with scaling fitted on the same sequence.
pub fn field_to_points(frames: &[Vec<f64>], grid: [usize; 3]) -> Result<Vec<Vec<f64>>> {
    FieldLifting::fit(frames, grid)?.lift(frames)
}

/// Points `(t, x_1..x_n)` of a state sequence, `t` scaled to `[0, 1]`.
pub fn trajectory_to_points(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = frames.len();
    frames
        .iter()
        .enumerate()
        .map(|(k, f)| std::iter::once(unit(k, n)).chain(f.iter().copied()).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Mae,
    R2,
    Chamfer,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::Mae, Metric::R2, Metric::Chamfer];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Mae => "mae",
            Metric::R2 => "r2",
            Metric::Chamfer => "chamfer",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s}; valid metrics: mse, mae, r2, chamfer")))
    }
}

/// Error at one horizon step, averaged over simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetric {
    pub step: usize,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub task: String,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub r2: Option<f64>,
    pub chamfer: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub per_horizon: Vec<HorizonMetric>,
}

/// Scores a held-out prediction. Chamfer is the mean over simulations of the
/// distance between lifted predicted and true horizon sequences; grid data
/// is lifted with [`FieldLifting`] fitted on the truth, other data with
/// [`trajectory_to_points`].
pub fn evaluate(
    hp: &HorizonPrediction,
    grid: Option<[usize; 3]>,
    metrics: &[Metric],
    model: &str,
    task: &str,
    seed: u64,
) -> Result<MetricReport> {
    if hp.pred.len() != hp.truth.len() || hp.pred.is_empty() {
        return Err(Error::DimMismatch(format!(
            "{} predicted vs {} true sequences",
            hp.pred.len(),
            hp.truth.len()
        )));
    }
    let flat = |seqs: &[Vec<Vec<f64>>]| -> Vec<f64> { seqs.iter().flatten().flatten().copied().collect() };
    let (p, t) = (flat(&hp.pred), flat(&hp.truth));
    let want = |m: Metric| metrics.contains(&m);
    let mut report = MetricReport {
        model: model.to_string(),
        task: task.to_string(),
        mse: if want(Metric::Mse) { Some(mse(&p, &t)?) } else { None },
        mae: if want(Metric::Mae) { Some(mae(&p, &t)?) } else { None },
        r2: if want(Metric::R2) { Some(r2_score(&p, &t)?) } else { None },
        chamfer: None,
        seed,
        per_horizon: Vec::new(),
    };
    if want(Metric::Chamfer) {
        let mut total = 0.0;
        for (ps, ts) in hp.pred.iter().zip(&hp.truth) {
            let (a, b) = match grid {
                Some(g) => {
                    let lifting = FieldLifting::fit(ts, g)?;
                    (lifting.lift(ps)?, lifting.lift(ts)?)
                }
                None => (trajectory_to_points(ps), trajectory_to_points(ts)),
            };
            total += chamfer_distance(&a, &b)?;
        }
        report.chamfer = Some(total / hp.pred.len() as f64);
    }
    let horizon = hp.truth[0].len();
    for step in 0..horizon {
        let pick = |seqs: &[Vec<Vec<f64>>]| -> Vec<f64> { seqs.iter().flat_map(|s| s[step].iter().copied()).collect() };
        let (ps, ts) = (pick(&hp.pred), pick(&hp.truth));
        report.per_horizon.push(HorizonMetric {
            step,
            mse: mse(&ps, &ts)?,
            mae: mae(&ps, &ts)?,
        });
    }
    Ok(report)
}
