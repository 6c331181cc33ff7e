use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{substeps, Trajectory};

/// Gray-Scott reaction-diffusion parameters for one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrayScottParams {
    #[serde(rename = "D_U")]
    pub d_u: f64,
    #[serde(rename = "D_V")]
    pub d_v: f64,
    /// Feed rate.
    pub j: f64,
    /// Kill rate.
    pub k: f64,
    /// Grid `(height, width)`.
    pub grid: (usize, usize),
    /// Side length of the square domain in metres.
    pub domain_len: f64,
}

impl Default for GrayScottParams {
    fn default() -> Self {
        GrayScottParams {
            d_u: 0.16,
            d_v: 0.075,
            j: 0.035,
            k: 0.065,
            grid: (50, 50),
            domain_len: 2.5,
        }
    }
}

pub const D_U_RANGE: (f64, f64) = (0.15, 0.17);
pub const D_V_RANGE: (f64, f64) = (0.05, 0.10);

impl GrayScottParams {
    /// Default rates with `D_U`, `D_V` drawn from their sampling ranges.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, grid: (usize, usize)) -> Self {
        GrayScottParams {
            d_u: rng.random_range(D_U_RANGE.0..=D_U_RANGE.1),
            d_v: rng.random_range(D_V_RANGE.0..=D_V_RANGE.1),
            grid,
            ..Self::default()
        }
    }

    pub fn dx(&self) -> f64 {
        self.domain_len / self.grid.0 as f64
    }

    /// Largest admissible explicit Euler step: `0.9 dx^2 / (4 max(D_U, D_V))`.
    pub fn max_dt(&self) -> f64 {
        let d = self.d_u.max(self.d_v);
        if d == 0.0 {
            f64::INFINITY
        } else {
            0.9 * self.dx().powi(2) / (4.0 * d)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrayScottConfig {
    pub sample_interval: f64,
    pub n_frames: usize,
    /// Internal step; defaults to the largest stable step that divides the
    /// sample interval evenly.
    pub dt: Option<f64>,
}

impl Default for GrayScottConfig {
    fn default() -> Self {
        GrayScottConfig {
            sample_interval: 2.5,
            n_frames: 61,
            dt: None,
        }
    }
}

/// Five-point Laplacian with periodic wrap on an `h x w` field.
pub fn laplacian_periodic(f: &[f64], h: usize, w: usize, dx: f64) -> Vec<f64> {
    let inv = 1.0 / (dx * dx);
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let (up, down) = ((i + h - 1) % h, (i + 1) % h);
        for j in 0..w {
            let (left, right) = ((j + w - 1) % w, (j + 1) % w);
            out[i * w + j] = (f[up * w + j] + f[down * w + j] + f[i * w + left] + f[i * w + right]
                - 4.0 * f[i * w + j])
                * inv;
        }
    }
    out
}

/// Seeded initial condition: `U = 1, V = 0` with a square patch
/// `(U, V) = (0.5, 0.25)` of side `max(1, h/4)` at a random position, plus
/// uniform noise in `[-0.02, 0.02]` on both fields.
pub fn gray_scott_initial(grid: (usize, usize), seed: u64) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = vec![1.0; h * w];
    let mut v = vec![0.0; h * w];
    let side = (h / 4).max(1);
    let (pi, pj) = (rng.random_range(0..h), rng.random_range(0..w));
    for di in 0..side {
        for dj in 0..side.min(w) {
            let idx = ((pi + di) % h) * w + (pj + dj) % w;
            u[idx] = 0.5;
            v[idx] = 0.25;
        }
    }
    for x in u.iter_mut().chain(v.iter_mut()) {
        *x += rng.random_range(-0.02..=0.02);
    }
    (u, v)
}

/// Integrates from the given fields with explicit Euler; frames are
/// `[U | V]`, each row-major `h x w`.
pub fn simulate_gray_scott_from(
    params: &GrayScottParams,
    u0: Vec<f64>,
    v0: Vec<f64>,
    cfg: &GrayScottConfig,
) -> Result<Trajectory> {
    let (h, w) = params.grid;
    if h < 3 || w < 3 {
        return Err(Error::InvalidConfig(format!("grid must be at least 3x3, got {h}x{w}")));
    }
    if u0.len() != h * w || v0.len() != h * w {
        return Err(Error::shape("gray_scott", &[h, w], &[u0.len()]));
    }
    let bound = params.max_dt();
    let steps = match cfg.dt {
        Some(dt) => {
            if dt > bound {
                return Err(Error::CflViolation(format!(
                    "dt = {dt} exceeds the diffusion bound {bound}"
                )));
            }
            substeps(cfg.sample_interval, dt)
        }
        None => substeps(cfg.sample_interval, bound),
    };
    let dt = cfg.sample_interval / steps as f64;
    let dx = params.dx();
    let (mut u, mut v) = (u0, v0);
    let frame = |u: &[f64], v: &[f64]| [u, v].concat();
    let mut states = vec![frame(&u, &v)];
    let mut t = 0.0;
    for f in 1..cfg.n_frames {
        for _ in 0..steps {
            let lu = laplacian_periodic(&u, h, w, dx);
            let lv = laplacian_periodic(&v, h, w, dx);
            for i in 0..h * w {
                let uvv = u[i] * v[i] * v[i];
                let du = params.d_u * lu[i] - uvv + params.j * (1.0 - u[i]);
                let dv = params.d_v * lv[i] + uvv - (params.j + params.k) * v[i];
                u[i] += dt * du;
                v[i] += dt * dv;
            }
            t += dt;
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { t });
        }
        t = f as f64 * cfg.sample_interval;
        states.push(frame(&u, &v));
    }
    let layout = (0..h * w)
        .map(|i| format!("U[{},{}]", i / w, i % w))
        .chain((0..h * w).map(|i| format!("V[{},{}]", i / w, i % w)))
        .collect();
    Ok(Trajectory {
        times: (0..cfg.n_frames).map(|f| f as f64 * cfg.sample_interval).collect(),
        states,
        layout,
        accepted_steps: steps * cfg.n_frames.saturating_sub(1),
        rejected_steps: 0,
    })
}

pub fn simulate_gray_scott(params: &GrayScottParams, seed: u64, cfg: &GrayScottConfig) -> Result<Trajectory> {
    let (u, v) = gray_scott_initial(params.grid, seed);
    simulate_gray_scott_from(params, u, v, cfg)
}
