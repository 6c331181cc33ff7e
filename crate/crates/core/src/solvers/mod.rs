//! Explicit ODE integrators: forward Euler, classical RK4 and adaptive
//! Dormand-Prince 5(4).
//!
//! The integrators are generic over [`OdeState`], so the same code steps
//! plain `Vec<f64>` states and tape-recorded [`Var`]s; in the latter case
//! every step is recorded and gradients flow through the whole unrolled
//! solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
    Dopri5,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            "dopri5" => Ok(Method::Dopri5),
            other => Err(Error::InvalidConfig(format!("unknown solver {other}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
            Method::Dopri5 => "dopri5",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Maximum step for the fixed-step methods.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on steps (accepted plus rejected) over the whole solve.
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Euler,
            dt: 0.01,
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 1_000_000,
        }
    }
}

impl SolverConfig {
    pub fn euler(dt: f64) -> Self {
        SolverConfig {
            method: Method::Euler,
            dt,
            ..Self::default()
        }
    }

    pub fn rk4(dt: f64) -> Self {
        SolverConfig {
            method: Method::Rk4,
            dt,
            ..Self::default()
        }
    }

    pub fn dopri5(rtol: f64, atol: f64) -> Self {
        SolverConfig {
            method: Method::Dopri5,
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidConfig("rtol and atol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// States returned at the requested times.
#[derive(Debug, Clone)]
pub struct Trajectory<S = Vec<f64>> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    /// Component labels; empty when the producer has none.
    pub layout: Vec<String>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Something an explicit integrator can step.
pub trait OdeState: Sized {
    /// `self + sum(c_i * v_i)`.
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Result<Self>;
    fn to_values(&self) -> Vec<f64>;
    fn all_finite(&self) -> bool;
}

impl OdeState for Vec<f64> {
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Result<Self> {
        let mut out = self.clone();
        for (c, v) in terms {
            if v.len() != out.len() {
                return Err(Error::shape("lincomb", &[out.len()], &[v.len()]));
            }
            out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += c * x);
        }
        Ok(out)
    }

    fn to_values(&self) -> Vec<f64> {
        self.clone()
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for Var<'_> {
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Result<Self> {
        let terms: Vec<(f64, Self)> = terms.iter().map(|(c, v)| (*c, **v)).collect();
        Var::lincomb(self, &terms)
    }

    fn to_values(&self) -> Vec<f64> {
        self.to_vec()
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "time grid needs at least 2 points, got {}",
            t_grid.len()
        )));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidConfig("time grid must be strictly ascending".into()));
    }
    Ok(())
}

/// Number of equal substeps of at most `dt` covering `span`.
pub fn substeps(span: f64, dt: f64) -> usize {
    ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

/// Integrates `dx/dt = rhs(t, x)` from `x0` at `t_grid[0]`, returning the
/// state at every grid time.
pub fn integrate<S, F>(mut rhs: F, x0: S, t_grid: &[f64], cfg: &SolverConfig) -> Result<Trajectory<S>>
where
    S: OdeState + Clone,
    F: FnMut(f64, &S) -> Result<S>,
{
    cfg.validate()?;
    check_grid(t_grid)?;
    if !x0.all_finite() {
        return Err(Error::NonFiniteState { t: t_grid[0] });
    }
    let mut traj = Trajectory {
        times: t_grid.to_vec(),
        states: Vec::with_capacity(t_grid.len()),
        layout: Vec::new(),
        accepted_steps: 0,
        rejected_steps: 0,
    };
    traj.states.push(x0.clone());
    match cfg.method {
        Method::Euler | Method::Rk4 => {
            let mut x = x0;
            for w in t_grid.windows(2) {
                let k = substeps(w[1] - w[0], cfg.dt);
                let h = (w[1] - w[0]) / k as f64;
                for i in 0..k {
                    let t = w[0] + i as f64 * h;
                    if traj.accepted_steps >= cfg.max_steps {
                        return Err(Error::StepLimitExceeded {
                            t,
                            max_steps: cfg.max_steps,
                        });
                    }
                    x = if cfg.method == Method::Euler {
                        euler_step(&mut rhs, t, &x, h)?
                    } else {
                        rk4_step(&mut rhs, t, &x, h)?
                    };
                    traj.accepted_steps += 1;
                    if !x.all_finite() {
                        return Err(Error::NonFiniteState { t: t + h });
                    }
                }
                traj.states.push(x.clone());
            }
        }
        Method::Dopri5 => dopri5(&mut rhs, x0, t_grid, cfg, &mut traj)?,
    }
    Ok(traj)
}

pub fn euler_step<S: OdeState, F: FnMut(f64, &S) -> Result<S>>(
    rhs: &mut F,
    t: f64,
    x: &S,
    h: f64,
) -> Result<S> {
    let k1 = rhs(t, x)?;
    x.lincomb(&[(h, &k1)])
}

pub fn rk4_step<S: OdeState, F: FnMut(f64, &S) -> Result<S>>(
    rhs: &mut F,
    t: f64,
    x: &S,
    h: f64,
) -> Result<S> {
    let k1 = rhs(t, x)?;
    let k2 = rhs(t + 0.5 * h, &x.lincomb(&[(0.5 * h, &k1)])?)?;
    let k3 = rhs(t + 0.5 * h, &x.lincomb(&[(0.5 * h, &k2)])?)?;
    let k4 = rhs(t + h, &x.lincomb(&[(h, &k3)])?)?;
    x.lincomb(&[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order weights minus the embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const ALPHA: f64 = 0.17;
const BETA: f64 = 0.04;

fn error_norm(x: &[f64], x_new: &[f64], err: &[f64], cfg: &SolverConfig) -> f64 {
    if err.is_empty() {
        return 0.0;
    }
    let sum: f64 = err
        .iter()
        .zip(x.iter().zip(x_new))
        .map(|(e, (a, b))| {
            let sc = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

fn initial_step<S: OdeState, F: FnMut(f64, &S) -> Result<S>>(
    rhs: &mut F,
    t0: f64,
    x0: &S,
    f0: &S,
    cfg: &SolverConfig,
) -> Result<f64> {
    let x = x0.to_values();
    let f = f0.to_values();
    let scale: Vec<f64> = x.iter().map(|v| cfg.atol + cfg.rtol * v.abs()).collect();
    let d0 = rms(&x.iter().zip(&scale).map(|(v, s)| v / s).collect::<Vec<_>>());
    let d1 = rms(&f.iter().zip(&scale).map(|(v, s)| v / s).collect::<Vec<_>>());
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let x1 = x0.lincomb(&[(h0, f0)])?;
    let f1 = rhs(t0 + h0, &x1)?.to_values();
    let d2 = rms(
        &f1.iter()
            .zip(&f)
            .zip(&scale)
            .map(|((a, b), s)| (a - b) / s)
            .collect::<Vec<_>>(),
    ) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

fn dopri5<S, F>(
    rhs: &mut F,
    x0: S,
    t_grid: &[f64],
    cfg: &SolverConfig,
    traj: &mut Trajectory<S>,
) -> Result<()>
where
    S: OdeState + Clone,
    F: FnMut(f64, &S) -> Result<S>,
{
    let t_end = *t_grid.last().expect("grid checked");
    let mut t = t_grid[0];
    let mut x = x0;
    let mut k1 = rhs(t, &x)?;
    let mut h = initial_step(rhs, t, &x, &k1, cfg)?.min(t_end - t);
    let mut prev_err: f64 = 1e-4;
    let mut next = 1;
    while next < t_grid.len() {
        if traj.accepted_steps + traj.rejected_steps >= cfg.max_steps {
            return Err(Error::StepLimitExceeded {
                t,
                max_steps: cfg.max_steps,
            });
        }
        let target = t_grid[next];
        let mut step = h;
        let lands = t + step >= target - 1e-12 * target.abs().max(1.0);
        if lands {
            step = target - t;
        }
        let k2 = rhs(t + C2 * step, &x.lincomb(&[(step * A21, &k1)])?)?;
        let k3 = rhs(t + C3 * step, &x.lincomb(&[(step * A31, &k1), (step * A32, &k2)])?)?;
        let k4 = rhs(
            t + C4 * step,
            &x.lincomb(&[(step * A41, &k1), (step * A42, &k2), (step * A43, &k3)])?,
        )?;
        let k5 = rhs(
            t + C5 * step,
            &x.lincomb(&[
                (step * A51, &k1),
                (step * A52, &k2),
                (step * A53, &k3),
                (step * A54, &k4),
            ])?,
        )?;
        let k6 = rhs(
            t + step,
            &x.lincomb(&[
                (step * A61, &k1),
                (step * A62, &k2),
                (step * A63, &k3),
                (step * A64, &k4),
                (step * A65, &k5),
            ])?,
        )?;
        let x_new = x.lincomb(&[
            (step * B1, &k1),
            (step * B3, &k3),
            (step * B4, &k4),
            (step * B5, &k5),
            (step * B6, &k6),
        ])?;
        let k7 = rhs(t + step, &x_new)?;
        let (v1, v3, v4, v5, v6, v7) = (
            k1.to_values(),
            k3.to_values(),
            k4.to_values(),
            k5.to_values(),
            k6.to_values(),
            k7.to_values(),
        );
        let err_vec: Vec<f64> = (0..v1.len())
            .map(|i| step * (E1 * v1[i] + E3 * v3[i] + E4 * v4[i] + E5 * v5[i] + E6 * v6[i] + E7 * v7[i]))
            .collect();
        let new_vals = x_new.to_values();
        let finite = new_vals.iter().all(|v| v.is_finite());
        let err = if finite {
            error_norm(&x.to_values(), &new_vals, &err_vec, cfg)
        } else {
            f64::INFINITY
        };
        if err <= 1.0 {
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-ALPHA) * prev_err.powf(BETA)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            prev_err = err.max(1e-4);
            t = if lands { target } else { t + step };
            x = x_new;
            k1 = k7;
            traj.accepted_steps += 1;
            if lands {
                traj.states.push(x.clone());
                next += 1;
            }
            // A step clipped to land on the grid says little about growth;
            // only let it shrink the previous proposal.
            h = if lands && step < h { h.min(h * factor) } else { step * factor };
        } else {
            traj.rejected_steps += 1;
            if !finite && step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::NonFiniteState { t: t + step });
            }
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-ALPHA)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            h = step * factor;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::NonFiniteState { t });
        }
    }
    Ok(())
}

/// Empirical convergence order of a fixed-step method on `dx/dt = x` over
/// `[0, 1]`: `log2(err(h) / err(h/2))`.
pub fn order_check(method: Method, h: f64) -> Result<f64> {
    let err = |dt: f64| -> Result<f64> {
        let cfg = SolverConfig {
            method,
            dt,
            ..SolverConfig::default()
        };
        let traj = integrate(|_, x: &Vec<f64>| Ok(x.clone()), vec![1.0], &[0.0, 1.0], &cfg)?;
        Ok((traj.states[1][0] - std::f64::consts::E).abs())
    };
    Ok((err(h)? / err(h / 2.0)?).log2())
}
