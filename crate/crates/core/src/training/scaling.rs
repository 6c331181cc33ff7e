use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, EpochRecord, TrainConfig};
use crate::dynamics::{ArchSpec, VectorField};
use crate::error::{Error, Result};
use crate::simulators::Dataset;

/// `k / (W sqrt(N))`.
pub fn scaling_lr(k: f64, width: usize, subnets: usize) -> f64 {
    k / (width as f64 * (subnets as f64).sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub width: usize,
    pub subnets: usize,
    pub lr: f64,
    pub final_train: f64,
    pub final_val: Option<f64>,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

/// Trains one csode per `(W, N)` cell, with `N` subnets of width `W`, a
/// control MLP with one hidden layer of width `W`, and learning rate
/// [`scaling_lr`]. Rows are sorted by `(W, N)`.
pub fn run_scaling_study(
    ds: &Dataset,
    widths: &[usize],
    subnet_counts: &[usize],
    k: f64,
    base: &TrainConfig,
) -> Result<Vec<ScalingRow>> {
    if widths.contains(&0) || subnet_counts.contains(&0) {
        return Err(Error::InvalidConfig("widths and subnet counts must be at least 1".into()));
    }
    let mut cells: Vec<(usize, usize)> = widths
        .iter()
        .flat_map(|&w| subnet_counts.iter().map(move |&n| (w, n)))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let n = ds.manifest.state_dim;
    cells
        .par_iter()
        .map(|&(w, m)| {
            let lr = scaling_lr(k, w, m);
            let spec = ArchSpec::csode(n, vec![w; m], vec![w]).with_seed(base.seed);
            let cfg = TrainConfig { lr, ..base.clone() };
            let out = train(VectorField::new(spec)?, ds, &cfg)?;
            let last = out.history.last();
            Ok(ScalingRow {
                width: w,
                subnets: m,
                lr,
                final_train: last.map_or(f64::NAN, |r| r.train_loss),
                final_val: last.and_then(|r| r.val_loss),
                history: out.history,
            })
        })
        .collect()
}

/// `width,subnets,lr,final_train_loss,final_val_loss`, one row per run.
pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("width,subnets,lr,final_train_loss,final_val_loss\n");
    for r in rows {
        let val = r.final_val.map_or(String::new(), |v| format!("{v:.16e}"));
        out.push_str(&format!("{},{},{:.16e},{:.16e},{}\n", r.width, r.subnets, r.lr, r.final_train, val));
    }
    out
}
