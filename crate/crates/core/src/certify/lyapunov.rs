use serde::{Deserialize, Serialize};

use super::lmi::CertificateCandidate;
use crate::dynamics::{CsodeMatrices, Variant, VectorField};
use crate::error::{Error, Result};
use crate::solvers::{integrate, SolverConfig};
use crate::tensor::Matrix;

/// `x^T P x + 2 sum_j sum_i Lambda^j_i F_j(W_j^i x)` with `F_j` the
/// antiderivative of `f_j` vanishing at 0. Only the diagonals of `lambda`
/// are used; an empty `lambda` means no integral terms.
pub fn lyapunov_value(p: &Matrix, lambda: &[Matrix], model: &CsodeMatrices, x: &[f64]) -> Result<f64> {
    let n = x.len();
    if p.rows() != n || p.cols() != n {
        return Err(Error::DimMismatch(format!("P is {}x{} for a state of length {n}", p.rows(), p.cols())));
    }
    let mut v = 0.0;
    for i in 0..n {
        for j in 0..n {
            v += x[i] * p[(i, j)] * x[j];
        }
    }
    if lambda.is_empty() {
        return Ok(v);
    }
    if lambda.len() != model.subnets.len() {
        return Err(Error::DimMismatch(format!(
            "{} Lambda blocks for {} subnets",
            lambda.len(),
            model.subnets.len()
        )));
    }
    for ((_, w, f), l) in model.subnets.iter().zip(lambda) {
        if w.cols() != n || l.rows() != w.rows() {
            return Err(Error::DimMismatch(format!("Lambda block of size {} for W of {}x{}", l.rows(), w.rows(), w.cols())));
        }
        for i in 0..w.rows() {
            if l[(i, i)] == 0.0 {
                continue;
            }
            let s: f64 = (0..n).map(|c| w[(i, c)] * x[c]).sum();
            v += 2.0 * l[(i, i)] * f.antiderivative(s)?;
        }
    }
    Ok(v)
}

/// The same form with `P~` and `Lambda~`, evaluated at an error `xi`.
pub fn lyapunov_tilde_value(p_tilde: &Matrix, lambda_tilde: &[Matrix], model: &CsodeMatrices, xi: &[f64]) -> Result<f64> {
    lyapunov_value(p_tilde, lambda_tilde, model, xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contraction {
    Contracting,
    NotContracting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub xi_norms: Vec<f64>,
    /// Longest stretch of consecutive growth of `|xi|`, in time units.
    pub longest_growth: f64,
    pub verdict: Contraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_tilde: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_tilde_non_increasing: Option<bool>,
}

/// Integrates two copies of `field` from observed states `x0` and `y0`
/// driven by the same control channel, and tracks `xi = y - x` on `n_points`
/// evenly spaced times in `[0, t_end]`.
///
/// For csode models both copies start their control state at `x0`, so the
/// input is identical; other variants use their usual initial lifting. The
/// verdict is `Contracting` when `|xi(T)| < 1e-3 |xi(0)|` and `|xi|` never
/// grows for longer than `0.1 T` in a row (an identically zero error also
/// counts as contracting). With a candidate, `V~(xi)` is reported and
/// checked for monotone decrease up to `1e-9 V~(xi(0))`.
pub fn empirical_contraction(
    field: &VectorField,
    x0: &[f64],
    y0: &[f64],
    t_end: f64,
    n_points: usize,
    solver: &SolverConfig,
    certificate: Option<&CertificateCandidate>,
) -> Result<ContractionReport> {
    let n = field.n();
    if x0.len() != n || y0.len() != n {
        return Err(Error::DimMismatch(format!("initial states must have length {n}")));
    }
    if !(t_end > 0.0) || n_points < 2 {
        return Err(Error::InvalidConfig("contraction needs t_end > 0 and at least 2 points".into()));
    }
    let s0: Vec<f64> = match field.variant() {
        Variant::Csode | Variant::CsodeAdapt => [x0, x0, y0, x0].concat(),
        _ => field.initial_state_values(&[x0, y0].concat())?,
    };
    let times: Vec<f64> = (0..n_points).map(|k| t_end * k as f64 / (n_points - 1) as f64).collect();
    let traj = integrate(|_, s: &Vec<f64>| field.rhs_values(s), s0, &times, solver)?;
    let xis: Vec<Vec<f64>> = traj
        .states
        .iter()
        .map(|s| {
            let obs = field.observe_values(s);
            (0..n).map(|i| obs[n + i] - obs[i]).collect()
        })
        .collect();
    let norms: Vec<f64> = xis.iter().map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let mut longest: f64 = 0.0;
    let mut run = 0.0;
    for k in 1..norms.len() {
        if norms[k] > norms[k - 1] {
            run += times[k] - times[k - 1];
            longest = longest.max(run);
        } else {
            run = 0.0;
        }
    }
    let (first, last) = (norms[0], norms[norms.len() - 1]);
    let decayed = if first == 0.0 { last == 0.0 } else { last < 1e-3 * first };
    let verdict = if decayed && longest <= 0.1 * t_end && last.is_finite() {
        Contraction::Contracting
    } else {
        Contraction::NotContracting
    };
    let (v_tilde, v_tilde_non_increasing) = match certificate {
        Some(c) => {
            let mats = field
                .csode_matrices()
                .ok_or_else(|| Error::InvalidConfig("a certificate needs a csode model".into()))?;
            let vs = xis
                .iter()
                .map(|xi| lyapunov_tilde_value(&c.p_tilde, &c.lambda_tilde, &mats, xi))
                .collect::<Result<Vec<f64>>>()?;
            let slack = 1e-9 * vs[0].abs();
            let mono = vs.windows(2).all(|w| w[1] <= w[0] + slack);
            (Some(vs), Some(mono))
        }
        None => (None, None),
    };
    Ok(ContractionReport {
        times,
        xi_norms: norms,
        longest_growth: longest,
        verdict,
        v_tilde,
        v_tilde_non_increasing,
    })
}
