use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShallowWaterParams {
    /// Gravitational acceleration in m/s^2.
    pub g: f64,
    pub mean_depth: f64,
    pub domain_len: f64,
    pub grid: (usize, usize),
}

impl Default for ShallowWaterParams {
    fn default() -> Self {
        ShallowWaterParams {
            g: 9.8,
            mean_depth: 1.0,
            domain_len: 10.0,
            grid: (50, 50),
        }
    }
}

impl ShallowWaterParams {
    pub fn dx(&self) -> f64 {
        self.domain_len / self.grid.1 as f64
    }

    pub fn dy(&self) -> f64 {
        self.domain_len / self.grid.0 as f64
    }
}

/// Conserved variables `(h, hu, hv)` on the periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SwState {
    pub h: Vec<f64>,
    pub hu: Vec<f64>,
    pub hv: Vec<f64>,
}

impl SwState {
    pub fn at_rest(params: &ShallowWaterParams) -> Self {
        let n = params.grid.0 * params.grid.1;
        SwState {
            h: vec![params.mean_depth; n],
            hu: vec![0.0; n],
            hv: vec![0.0; n],
        }
    }

    /// `sum(h) * dx * dy`.
    pub fn mass(&self, params: &ShallowWaterParams) -> f64 {
        self.h.iter().sum::<f64>() * params.dx() * params.dy()
    }

    fn max_speed(&self, g: f64) -> f64 {
        let mut s: f64 = 0.0;
        for i in 0..self.h.len() {
            let h = self.h[i];
            let c = (g * h.max(0.0)).sqrt();
            let (u, v) = (self.hu[i] / h, self.hv[i] / h);
            s = s.max(u.abs() + c).max(v.abs() + c);
        }
        s
    }

    fn axpby(&self, a: f64, other: &SwState, b: f64, k: &SwState, c: f64) -> SwState {
        let comb = |x: &[f64], y: &[f64], z: &[f64]| -> Vec<f64> {
            (0..x.len()).map(|i| a * x[i] + b * y[i] + c * z[i]).collect()
        };
        SwState {
            h: comb(&self.h, &other.h, &k.h),
            hu: comb(&self.hu, &other.hu, &k.hu),
            hv: comb(&self.hv, &other.hv, &k.hv),
        }
    }
}

/// Gaussian bump `h = mean_depth + amplitude * exp(-r^2 / (2 width^2))`,
/// with `r` the periodic distance to `center`; velocities zero.
pub fn gaussian_bump(params: &ShallowWaterParams, amplitude: f64, width: f64, center: (f64, f64)) -> SwState {
    let (ny, nx) = params.grid;
    let (dx, dy, len) = (params.dx(), params.dy(), params.domain_len);
    let wrap = |d: f64| {
        let d = d.rem_euclid(len);
        d.min(len - d)
    };
    let mut state = SwState::at_rest(params);
    for i in 0..ny {
        for j in 0..nx {
            let (x, y) = ((j as f64 + 0.5) * dx, (i as f64 + 0.5) * dy);
            let r2 = wrap(x - center.0).powi(2) + wrap(y - center.1).powi(2);
            state.h[i * nx + j] += amplitude * (-r2 / (2.0 * width * width)).exp();
        }
    }
    state
}

/// Seeded bump: amplitude in `[0.1, 0.3]`, width in `[0.5, 1.0]` m,
/// uniformly placed centre.
pub fn random_bump(params: &ShallowWaterParams, seed: u64) -> (SwState, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amplitude = rng.random_range(0.1..=0.3);
    let width = rng.random_range(0.5..=1.0);
    let center = (
        rng.random_range(0.0..params.domain_len),
        rng.random_range(0.0..params.domain_len),
    );
    (gaussian_bump(params, amplitude, width, center), amplitude, width)
}

fn flux_x(g: f64, h: f64, hu: f64, hv: f64) -> [f64; 3] {
    let u = hu / h;
    [hu, hu * u + 0.5 * g * h * h, hv * u]
}

fn flux_y(g: f64, h: f64, hu: f64, hv: f64) -> [f64; 3] {
    let v = hv / h;
    [hv, hu * v, hv * v + 0.5 * g * h * h]
}

/// Semi-discrete time derivative with Rusanov interface fluxes.
fn tendency(params: &ShallowWaterParams, s: &SwState) -> SwState {
    let (ny, nx) = params.grid;
    let g = params.g;
    let (dx, dy) = (params.dx(), params.dy());
    let n = nx * ny;
    let mut out = SwState {
        h: vec![0.0; n],
        hu: vec![0.0; n],
        hv: vec![0.0; n],
    };
    let speed = |h: f64, m: f64| (m / h).abs() + (g * h).sqrt();
    let mut apply = |l: usize, r: usize, f: [f64; 3], inv: f64| {
        out.h[l] -= f[0] * inv;
        out.hu[l] -= f[1] * inv;
        out.hv[l] -= f[2] * inv;
        out.h[r] += f[0] * inv;
        out.hu[r] += f[1] * inv;
        out.hv[r] += f[2] * inv;
    };
    for i in 0..ny {
        for j in 0..nx {
            let l = i * nx + j;
            // east face
            let r = i * nx + (j + 1) % nx;
            let (fl, fr) = (
                flux_x(g, s.h[l], s.hu[l], s.hv[l]),
                flux_x(g, s.h[r], s.hu[r], s.hv[r]),
            );
            let a = speed(s.h[l], s.hu[l]).max(speed(s.h[r], s.hu[r]));
            let q = [
                (s.h[r] - s.h[l], 0),
                (s.hu[r] - s.hu[l], 1),
                (s.hv[r] - s.hv[l], 2),
            ];
            let mut f = [0.0; 3];
            for (d, k) in q {
                f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * a * d;
            }
            apply(l, r, f, 1.0 / dx);
            // north face
            let r = ((i + 1) % ny) * nx + j;
            let (fl, fr) = (
                flux_y(g, s.h[l], s.hu[l], s.hv[l]),
                flux_y(g, s.h[r], s.hu[r], s.hv[r]),
            );
            let a = speed(s.h[l], s.hv[l]).max(speed(s.h[r], s.hv[r]));
            let q = [
                (s.h[r] - s.h[l], 0),
                (s.hu[r] - s.hu[l], 1),
                (s.hv[r] - s.hv[l], 2),
            ];
            let mut f = [0.0; 3];
            for (d, k) in q {
                f[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * a * d;
            }
            apply(l, r, f, 1.0 / dy);
        }
    }
    out
}

/// Largest CFL number tolerated before a step is rejected.
pub const MAX_CFL: f64 = 0.5;

/// One SSP-RK3 step of size `dt`.
pub fn sw_step(params: &ShallowWaterParams, s: &SwState, dt: f64, t: f64) -> Result<SwState> {
    let min_depth = s.h.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_depth > 0.0) {
        return Err(Error::DryState { t, min_depth });
    }
    let cfl = dt * s.max_speed(params.g) / params.dx().min(params.dy());
    if cfl > MAX_CFL {
        return Err(Error::CflViolation(format!(
            "CFL number {cfl:.3} exceeds {MAX_CFL} at t = {t}"
        )));
    }
    let k1 = tendency(params, s);
    let s1 = s.axpby(1.0, &k1, dt, &k1, 0.0);
    let k2 = tendency(params, &s1);
    let s2 = s.axpby(0.75, &s1, 0.25, &k2, 0.25 * dt);
    let k3 = tendency(params, &s2);
    let out = s.axpby(1.0 / 3.0, &s2, 2.0 / 3.0, &k3, 2.0 / 3.0 * dt);
    if out.h.iter().chain(&out.hu).chain(&out.hv).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteState { t: t + dt });
    }
    let min_depth = out.h.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_depth > 0.0) {
        return Err(Error::DryState { t: t + dt, min_depth });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShallowWaterConfig {
    pub sample_interval: f64,
    pub n_frames: usize,
    pub cfl: f64,
    /// Fixed internal step, overriding the CFL-derived one.
    pub dt: Option<f64>,
}

impl Default for ShallowWaterConfig {
    fn default() -> Self {
        ShallowWaterConfig {
            sample_interval: 4.7 / 150.0,
            n_frames: 223,
            cfl: 0.4,
            dt: None,
        }
    }
}

/// Integrates from `init`, exporting the depth field `h` at every frame.
pub fn simulate_shallow_water_from(
    params: &ShallowWaterParams,
    init: SwState,
    cfg: &ShallowWaterConfig,
) -> Result<Trajectory> {
    let (ny, nx) = params.grid;
    if ny < 3 || nx < 3 {
        return Err(Error::InvalidConfig(format!("grid must be at least 3x3, got {ny}x{nx}")));
    }
    let mut s = init;
    let mut states = vec![s.h.clone()];
    let mut total_steps = 0;
    for f in 1..cfg.n_frames {
        let t0 = (f - 1) as f64 * cfg.sample_interval;
        let dt_target = match cfg.dt {
            Some(dt) => dt,
            None => cfg.cfl * params.dx().min(params.dy()) / s.max_speed(params.g),
        };
        let steps = crate::solvers::substeps(cfg.sample_interval, dt_target);
        let dt = cfg.sample_interval / steps as f64;
        for k in 0..steps {
            s = sw_step(params, &s, dt, t0 + k as f64 * dt)?;
        }
        total_steps += steps;
        states.push(s.h.clone());
    }
    Ok(Trajectory {
        times: (0..cfg.n_frames).map(|f| f as f64 * cfg.sample_interval).collect(),
        states,
        layout: (0..nx * ny).map(|i| format!("h[{},{}]", i / nx, i % nx)).collect(),
        accepted_steps: total_steps,
        rejected_steps: 0,
    })
}

pub fn simulate_shallow_water(params: &ShallowWaterParams, seed: u64, cfg: &ShallowWaterConfig) -> Result<Trajectory> {
    let (init, _, _) = random_bump(params, seed);
    simulate_shallow_water_from(params, init, cfg)
}
