use rayon::prelude::*;

use super::assumptions::{ActivationClassification, SectorBounds};
use super::lmi::{first_family, second_family, verify_conditions, CertificateCandidate, PairBlock};
use crate::dynamics::CsodeMatrices;
use crate::error::{Error, Result};
use crate::tensor::{symmetric_eigenvalues, Matrix};

/// Largest state dimension handled by [`search_certificate`].
pub const SEARCH_MAX_DIM: usize = 2;

const GRID: [f64; 8] = [0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];
const PHI: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
const UPSILON_TILDE: [f64; 3] = [0.0, 0.1, 1.0];
const WEIGHTS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];

/// Mixed-radix decoding of `idx` over the given digit sizes.
fn digits(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .map(|&s| {
            let d = idx % s;
            idx /= s;
            d
        })
        .collect()
}

fn eye_blocks(dims: &[usize], c: f64) -> Vec<Matrix> {
    dims.iter().map(|&k| Matrix::scaled_identity(k, c)).collect()
}

/// Brute-force search over scaled-identity candidates for small models.
///
/// The two families of conditions are independent, so each is searched on
/// its own grid; `Xi~0` is set to the smallest multiple of the identity that
/// satisfies its residual condition. Cells are scanned in a fixed order and
/// the first passing cell wins, so the result is deterministic. Returns
/// `None` when a family has no passing cell.
pub fn search_certificate(
    model: &CsodeMatrices,
    bounds: &SectorBounds,
    cls: &ActivationClassification,
    tol: f64,
) -> Result<Option<CertificateCandidate>> {
    let n = model.a0.rows();
    if n > SEARCH_MAX_DIM {
        return Err(Error::InvalidConfig(format!(
            "certificate search handles state dimension up to {SEARCH_MAX_DIM}, model has {n}; supply a candidate"
        )));
    }
    let dims: Vec<usize> = model.subnets.iter().map(|(_, w, _)| w.rows()).collect();
    let m = dims.len();
    bounds.validate(&dims)?;

    let first_sizes = [GRID.len(); 5].into_iter().chain([PHI.len()]).collect::<Vec<_>>();
    let first_cell = |idx: usize| -> CertificateCandidate {
        let d = digits(idx, &first_sizes);
        let mut c = CertificateCandidate::zeros(n);
        c.p = Matrix::scaled_identity(n, GRID[d[0]]);
        c.lambda = eye_blocks(&dims, GRID[d[1]]);
        c.xi = std::iter::once(Matrix::scaled_identity(n, GRID[d[2]]))
            .chain(eye_blocks(&dims, GRID[d[3]]))
            .collect();
        c.upsilon = (1..=m)
            .map(|j| PairBlock {
                s: 0,
                r: j,
                value: Matrix::scaled_identity(dims[j - 1], GRID[d[4]]),
            })
            .collect();
        c.phi = Matrix::scaled_identity(n, PHI[d[5]]);
        c
    };
    let first_total: usize = first_sizes.iter().product();
    let first = (0..first_total).into_par_iter().find_map_first(|idx| {
        let c = first_cell(idx);
        let (_, conds) = first_family(model, &c, cls).ok()?;
        let rep = verify_conditions(&conds, tol).ok()?;
        rep.verdict.certified().then_some(c)
    });
    let Some(first) = first else {
        return Ok(None);
    };

    let second_sizes = [GRID.len(); 4]
        .into_iter()
        .chain([UPSILON_TILDE.len(), WEIGHTS.len(), WEIGHTS.len()])
        .collect::<Vec<_>>();
    let second_cell = |idx: usize| -> Result<CertificateCandidate> {
        let d = digits(idx, &second_sizes);
        let mut c = CertificateCandidate::zeros(n);
        c.p_tilde = Matrix::scaled_identity(n, GRID[d[0]]);
        c.lambda_tilde = eye_blocks(&dims, GRID[d[1]]);
        c.gamma_blocks = eye_blocks(&dims, GRID[d[2]]);
        c.omega_blocks = eye_blocks(&dims, GRID[d[3]]);
        let u = UPSILON_TILDE[d[4]];
        c.upsilon_tilde = (1..=m)
            .flat_map(|j| (1..=m).map(move |r| (j, r)))
            .map(|(j, r)| {
                let k = dims[j - 1].min(dims[r - 1]);
                PairBlock {
                    s: j,
                    r,
                    value: Matrix::rect_diag(dims[j - 1], dims[r - 1], &vec![u; k]),
                }
            })
            .collect();
        c.gamma = WEIGHTS[d[5]];
        c.theta = WEIGHTS[d[6]];
        let mut sector = Matrix::zeros(n, n);
        for (j, (_, w, _)) in model.subnets.iter().enumerate() {
            let b: Vec<f64> = bounds.s0[j]
                .iter()
                .zip(&bounds.h0[j])
                .map(|(s, h)| c.gamma * s + c.theta * h)
                .collect();
            sector = sector.add(&w.transpose().matmul(&Matrix::from_diag(&b))?.matmul(w)?)?;
        }
        let top = if n == 0 {
            0.0
        } else {
            *symmetric_eigenvalues(&sector.sym()?)?.last().expect("n > 0")
        };
        c.xi_tilde0 = Matrix::scaled_identity(n, top.max(0.0));
        Ok(c)
    };
    let second_total: usize = second_sizes.iter().product();
    let second = (0..second_total).into_par_iter().find_map_first(|idx| {
        let c = second_cell(idx).ok()?;
        let (_, conds) = second_family(model, &c, bounds, cls).ok()?;
        let rep = verify_conditions(&conds, tol).ok()?;
        rep.verdict.certified().then_some(c)
    });
    Ok(second.map(|s| CertificateCandidate {
        p_tilde: s.p_tilde,
        lambda_tilde: s.lambda_tilde,
        xi_tilde0: s.xi_tilde0,
        upsilon_tilde: s.upsilon_tilde,
        gamma_blocks: s.gamma_blocks,
        omega_blocks: s.omega_blocks,
        gamma: s.gamma,
        theta: s.theta,
        ..first
    }))
}
