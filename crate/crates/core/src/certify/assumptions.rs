use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::CsodeMatrices;
use crate::error::{Error, Result};
use crate::nets::Activation;
use crate::tensor::Matrix;

/// `±[1e-3, 10]` on a log grid, ascending.
pub fn default_grid() -> Vec<f64> {
    let pos: Vec<f64> = (0..=400).map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / 400.0)).collect();
    pos.iter().rev().map(|v| -v).chain(pos.iter().copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignCheck {
    pub pass: bool,
    pub counterexample: Option<f64>,
}

/// `s f(s) > 0` at every grid point.
pub fn check_assumption1_fn(f: impl Fn(f64) -> f64, grid: &[f64]) -> SignCheck {
    match grid.iter().copied().find(|&s| s != 0.0 && !(s * f(s) > 0.0)) {
        Some(s) => SignCheck {
            pass: false,
            counterexample: Some(s),
        },
        None => SignCheck {
            pass: true,
            counterexample: None,
        },
    }
}

pub fn check_assumption1(f: Activation, grid: &[f64]) -> SignCheck {
    check_assumption1_fn(|s| f.eval(s), grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "level")]
pub enum Monotonicity {
    StrictlyIncreasing,
    /// Holds only in the relaxed, non-decreasing sense.
    NonDecreasing { flat_at: f64 },
    Fails { at: f64 },
}

impl Monotonicity {
    pub fn strict(&self) -> bool {
        matches!(self, Monotonicity::StrictlyIncreasing)
    }
}

/// Monotonicity of `f` across consecutive points of an ascending grid.
pub fn check_assumption2_fn(f: impl Fn(f64) -> f64, grid: &[f64]) -> Monotonicity {
    let mut flat = None;
    for w in grid.windows(2) {
        let (a, b) = (f(w[0]), f(w[1]));
        if b < a || a.is_nan() || b.is_nan() {
            return Monotonicity::Fails { at: w[1] };
        }
        if b == a && flat.is_none() {
            flat = Some(w[1]);
        }
    }
    match flat {
        Some(flat_at) => Monotonicity::NonDecreasing { flat_at },
        None => Monotonicity::StrictlyIncreasing,
    }
}

pub fn check_assumption2(f: Activation, grid: &[f64]) -> Monotonicity {
    check_assumption2_fn(|s| f.eval(s), grid)
}

/// Growth class of one activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationClass {
    /// `f(v) -> ±inf` as `v -> ±inf`.
    pub value_unbounded: bool,
    /// `integral_0^v f -> +inf` as `v -> ±inf`.
    pub integral_divergent: bool,
    /// Only covered by the non-decreasing relaxation (e.g. relu).
    pub relaxed: bool,
}

/// Table lookup for the built-in activations.
pub fn classify_activation(f: Activation) -> ActivationClass {
    let (value_unbounded, integral_divergent) = match f {
        Activation::Tanh | Activation::SoftplusCentered => (false, true),
        Activation::Identity => (true, true),
        Activation::PRelu(a) if a > 0.0 => (true, true),
        Activation::PRelu(_) => (false, false),
        Activation::Relu | Activation::Sigmoid | Activation::Softplus => (false, false),
    };
    ActivationClass {
        value_unbounded,
        integral_divergent,
        relaxed: matches!(f, Activation::Relu | Activation::PRelu(0.0)),
    }
}

/// Whether a quantity saturates or keeps growing between `|v| = 1e2` and
/// `|v| = 1e3` on one side.
fn tail(near: f64, far: f64) -> Option<bool> {
    if (far - near).abs() <= 1e-6 * near.abs().max(1.0) {
        Some(false)
    } else if far > 2.0 * near && near > 0.0 {
        Some(true)
    } else {
        None
    }
}

fn integral(f: &impl Fn(f64) -> f64, to: f64) -> f64 {
    // composite Simpson
    let n = 20_000;
    let h = to / n as f64;
    let mut s = f(0.0) + f(to);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Numerical classification on `[-1e3, 1e3]` for functions outside the
/// built-in table.
pub fn classify_fn(name: &str, f: impl Fn(f64) -> f64) -> Result<ActivationClass> {
    let inconclusive = || Error::UnknownActivation(format!("{name}: growth class is inconclusive on [-1e3, 1e3]"));
    let side = |sign: f64| -> Result<(bool, bool)> {
        let value = tail(sign * f(sign * 1e2), sign * f(sign * 1e3)).ok_or_else(inconclusive)?;
        let int = tail(integral(&f, sign * 1e2), integral(&f, sign * 1e3)).ok_or_else(inconclusive)?;
        Ok((value, int))
    };
    let (vp, ip) = side(1.0)?;
    let (vn, in_) = side(-1.0)?;
    Ok(ActivationClass {
        value_unbounded: vp && vn,
        integral_divergent: ip && in_,
        relaxed: check_assumption2_fn(&f, &default_grid()) != Monotonicity::StrictlyIncreasing,
    })
}

/// Per-subnet classes and the counts `omega` (value-unbounded) and `zeta`
/// (integral-divergent). The sums over "the first omega/zeta subnets" are
/// taken over the flagged subnets, which is the same as reordering them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationClassification {
    pub omega: usize,
    pub zeta: usize,
    pub subnets: Vec<ActivationClass>,
}

impl ActivationClassification {
    pub fn from_classes(subnets: Vec<ActivationClass>) -> Result<Self> {
        if subnets.iter().any(|c| c.value_unbounded && !c.integral_divergent) {
            return Err(Error::InvalidConfig(
                "a value-unbounded activation must have a divergent integral".into(),
            ));
        }
        Ok(ActivationClassification {
            omega: subnets.iter().filter(|c| c.value_unbounded).count(),
            zeta: subnets.iter().filter(|c| c.integral_divergent).count(),
            subnets,
        })
    }

    pub fn of_model(model: &CsodeMatrices) -> Self {
        let classes = model.subnets.iter().map(|(_, _, f)| classify_activation(*f)).collect();
        Self::from_classes(classes).expect("built-in table is consistent")
    }
}

/// Diagonal sector-bound matrices, stored as their diagonals. `s3[j][r]` and
/// `h3[j][r]` are `k_j x k_r` rectangular diagonals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorBounds {
    pub s0: Vec<Vec<f64>>,
    pub s1: Vec<Vec<f64>>,
    pub s2: Vec<Vec<f64>>,
    pub s3: Vec<Vec<Vec<f64>>>,
    pub h0: Vec<Vec<f64>>,
    pub h1: Vec<Vec<f64>>,
    pub h2: Vec<Vec<f64>>,
    pub h3: Vec<Vec<Vec<f64>>>,
}

impl SectorBounds {
    pub fn zeros(dims: &[usize]) -> Self {
        let per = |_: ()| dims.iter().map(|&k| vec![0.0; k]).collect::<Vec<_>>();
        let pairs = |_: ()| {
            dims.iter()
                .map(|&kj| dims.iter().map(|&kr| vec![0.0; kj.min(kr)]).collect())
                .collect::<Vec<_>>()
        };
        SectorBounds {
            s0: per(()),
            s1: per(()),
            s2: per(()),
            s3: pairs(()),
            h0: per(()),
            h1: per(()),
            h2: per(()),
            h3: pairs(()),
        }
    }

    /// `S0 = H0 = L^2 I`, everything else zero: the bounds implied by an
    /// `L`-Lipschitz activation with `f(0) = 0`.
    pub fn lipschitz(dims: &[usize], l: f64) -> Self {
        let mut b = Self::zeros(dims);
        for (s0, h0) in b.s0.iter_mut().zip(&mut b.h0) {
            s0.fill(l * l);
            h0.fill(l * l);
        }
        b
    }

    pub fn dims(&self) -> Vec<usize> {
        self.s0.iter().map(|d| d.len()).collect()
    }

    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        let per = [&self.s0, &self.s1, &self.s2, &self.h0, &self.h1, &self.h2];
        for (name, set) in ["S0", "S1", "S2", "H0", "H1", "H2"].iter().zip(per) {
            if set.len() != dims.len() || set.iter().zip(dims).any(|(d, &k)| d.len() != k) {
                return Err(Error::DimMismatch(format!("sector bound {name} does not match subnet widths {dims:?}")));
            }
            if set.iter().flatten().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidConfig(format!("sector bound {name} has a negative entry")));
            }
        }
        for (name, set) in [("S3", &self.s3), ("H3", &self.h3)] {
            let ok = set.len() == dims.len()
                && set.iter().zip(dims).all(|(row, &kj)| {
                    row.len() == dims.len() && row.iter().zip(dims).all(|(d, &kr)| d.len() == kj.min(kr))
                });
            if !ok {
                return Err(Error::DimMismatch(format!("sector bound {name} does not match subnet widths {dims:?}")));
            }
            if set.iter().flatten().flatten().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidConfig(format!("sector bound {name} has a negative entry")));
            }
        }
        Ok(())
    }
}

/// The bounds proven for tanh: `S0 = H0 = I`, all others zero.
pub fn tanh_sector_bounds(dims: &[usize]) -> SectorBounds {
    SectorBounds::lipschitz(dims, 1.0)
}

/// Lipschitz-derived bounds for activations with `f(0) = 0`.
pub fn sector_bounds_for(f: Activation, dims: &[usize]) -> Option<SectorBounds> {
    let l = match f {
        Activation::Tanh | Activation::Relu | Activation::Identity | Activation::SoftplusCentered => 1.0,
        Activation::PRelu(a) => a.abs().max(1.0),
        Activation::Sigmoid | Activation::Softplus => return None,
    };
    Some(SectorBounds::lipschitz(dims, l))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption3Report {
    pub n_samples: usize,
    pub satisfied: usize,
    pub ratio: f64,
    /// Largest `lhs - rhs` over all samples and inequalities (negative when
    /// every inequality holds with room to spare).
    pub worst_violation: f64,
}

/// Pairs `(x, y)` with independent standard normal entries.
pub fn gaussian_pairs(n: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    (0..count).map(|_| (draw(), draw())).collect()
}

fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(G_j a)^T D (G_r b)` with `G = W W^T` and `D` rectangular diagonal.
fn gram_term(gj: &Matrix, gr: &Matrix, d: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ga = matvec(gj, a);
    let gb = matvec(gr, b);
    d.iter().enumerate().map(|(i, di)| ga[i] * di * gb[i]).sum()
}

/// Evaluates both sector inequalities for every subnet at every sample pair
/// `(x, y)`, with `xi = y - x`. A pair counts as satisfied when all `2M`
/// inequalities hold up to a rounding slack of `1e-12` relative to the
/// magnitude of their terms.
pub fn sample_check_assumption3(
    model: &CsodeMatrices,
    bounds: &SectorBounds,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Assumption3Report> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("at least one sample pair is required".into()));
    }
    let dims: Vec<usize> = model.subnets.iter().map(|(_, w, _)| w.rows()).collect();
    bounds.validate(&dims)?;
    let n = model.a0.rows();
    let grams: Vec<Matrix> = model
        .subnets
        .iter()
        .map(|(_, w, _)| w.matmul(&w.transpose()).expect("W W^T is square"))
        .collect();
    let mut satisfied = 0;
    let mut worst = f64::NEG_INFINITY;
    for (x, y) in pairs {
        if x.len() != n || y.len() != n {
            return Err(Error::DimMismatch(format!("sample of length {} for state dimension {n}", x.len().max(y.len()))));
        }
        let xi: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let mut p = Vec::with_capacity(dims.len());
        let mut fx = Vec::with_capacity(dims.len());
        let mut u = Vec::with_capacity(dims.len());
        for (_, w, f) in &model.subnets {
            let wy = matvec(w, y);
            let wx = matvec(w, x);
            let wxi = matvec(w, &xi);
            p.push(wy.iter().zip(&wx).map(|(a, b)| f.eval(*a) - f.eval(*b)).collect::<Vec<_>>());
            fx.push(wxi.iter().map(|v| f.eval(*v)).collect::<Vec<_>>());
            u.push(wxi);
        }
        let mut ok = true;
        for j in 0..dims.len() {
            for (lhs_vec, b0, b1, b2, b3) in [
                (&p[j], &bounds.s0[j], &bounds.s1[j], &bounds.s2[j], &bounds.s3[j]),
                (&fx[j], &bounds.h0[j], &bounds.h1[j], &bounds.h2[j], &bounds.h3[j]),
            ] {
                let lhs = dot(lhs_vec, lhs_vec);
                let mut terms = vec![
                    u[j].iter().zip(b0).map(|(v, d)| v * d * v).sum::<f64>(),
                    2.0 * u[j].iter().zip(b1).zip(&p[j]).map(|((v, d), q)| v * d * q).sum::<f64>(),
                    2.0 * u[j].iter().zip(b2).zip(&fx[j]).map(|((v, d), q)| v * d * q).sum::<f64>(),
                ];
                for r in 0..dims.len() {
                    terms.push(2.0 * gram_term(&grams[j], &grams[r], &b3[r], &p[j], &fx[r]));
                }
                let rhs: f64 = terms.iter().sum();
                let scale = terms.iter().map(|t| t.abs()).sum::<f64>() + lhs.abs();
                let gap = lhs - rhs;
                worst = worst.max(gap);
                if gap > 1e-12 * scale.max(1e-300) {
                    ok = false;
                }
            }
        }
        if ok {
            satisfied += 1;
        }
    }
    Ok(Assumption3Report {
        n_samples: pairs.len(),
        satisfied,
        ratio: satisfied as f64 / pairs.len() as f64,
        worst_violation: worst,
    })
}
