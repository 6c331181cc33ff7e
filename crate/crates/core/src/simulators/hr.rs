use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::solvers::{integrate, SolverConfig, Trajectory};

/// Hindmarsh-Rose neuron parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r: f64,
    pub s: f64,
    pub x0_ref: f64,
    #[serde(rename = "I")]
    pub i: f64,
}

impl Default for HrParams {
    fn default() -> Self {
        HrParams {
            a: 1.0,
            b: 3.0,
            c: 1.0,
            d: 5.0,
            r: 0.5,
            s: 1.0,
            x0_ref: -0.5,
            i: 3.0,
        }
    }
}

impl HrParams {
    pub fn rhs(&self, state: &[f64]) -> [f64; 3] {
        let (x, y, z) = (state[0], state[1], state[2]);
        [
            y - self.a * x.powi(3) + self.b * x * x - z + self.i,
            self.c - self.d * x * x - y,
            self.r * (self.s * (x - self.x0_ref) - z),
        ]
    }
}

/// Sampling protocol for [`simulate_hr`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrConfig {
    /// Exported samples, spaced `sample_interval` apart from t = 0.
    pub n_points: usize,
    pub sample_interval: f64,
    /// Largest internal RK4 step.
    pub dt_max: f64,
}

impl Default for HrConfig {
    fn default() -> Self {
        HrConfig {
            n_points: 3000,
            sample_interval: 1.0 / 150.0,
            dt_max: 1e-3,
        }
    }
}

pub fn simulate_hr(params: &HrParams, x_init: [f64; 3], cfg: &HrConfig) -> Result<Trajectory> {
    let grid: Vec<f64> = (0..cfg.n_points).map(|k| k as f64 * cfg.sample_interval).collect();
    let solver = SolverConfig {
        max_steps: usize::MAX,
        ..SolverConfig::rk4(cfg.dt_max)
    };
    let mut traj = integrate(|_, s: &Vec<f64>| Ok(params.rhs(s).to_vec()), x_init.to_vec(), &grid, &solver)?;
    traj.layout = vec!["x".into(), "y".into(), "z".into()];
    Ok(traj)
}
