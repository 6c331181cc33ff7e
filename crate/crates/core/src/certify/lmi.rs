use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::assumptions::{ActivationClassification, SectorBounds};
use crate::dynamics::CsodeMatrices;
use crate::error::{Error, Result};
use crate::tensor::{symmetric_eigenvalues, Matrix};

/// Threshold for strict (`> 0`) conditions. It is fixed so that raising the
/// tolerance of the non-strict conditions can only turn failures into passes.
pub const STRICT_MARGIN: f64 = 1e-9;

/// Off-diagonal pair block `Upsilon_{s,r}` or `Upsilon~_{s,r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBlock {
    pub s: usize,
    pub r: usize,
    pub value: Matrix,
}

/// A candidate certificate. Empty lists and missing pair blocks mean zero
/// blocks. Subnet indices are 1-based; index 0 in `upsilon` is the state.
///
/// Shapes: `P`, `P_tilde`, `Phi`, `Xi_tilde0` and `Xi[0]` are `n x n`;
/// `Lambda[j-1]`, `Lambda_tilde[j-1]`, `Xi[j]`, `Gamma[j-1]`, `Omega[j-1]`
/// and `Upsilon (0, j)` are `k_j x k_j`; `Upsilon (s, r)` and
/// `Upsilon_tilde (s, r)` are `k_s x k_r`. All but `P`, `P_tilde` and `Phi`
/// are (rectangular) diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCandidate {
    #[serde(rename = "P")]
    pub p: Matrix,
    #[serde(rename = "P_tilde")]
    pub p_tilde: Matrix,
    #[serde(rename = "Lambda", default)]
    pub lambda: Vec<Matrix>,
    #[serde(rename = "Lambda_tilde", default)]
    pub lambda_tilde: Vec<Matrix>,
    #[serde(rename = "Xi", default)]
    pub xi: Vec<Matrix>,
    #[serde(rename = "Upsilon", default)]
    pub upsilon: Vec<PairBlock>,
    #[serde(rename = "Xi_tilde0")]
    pub xi_tilde0: Matrix,
    #[serde(rename = "Upsilon_tilde", default)]
    pub upsilon_tilde: Vec<PairBlock>,
    #[serde(rename = "Gamma", default)]
    pub gamma_blocks: Vec<Matrix>,
    #[serde(rename = "Omega", default)]
    pub omega_blocks: Vec<Matrix>,
    #[serde(rename = "Phi")]
    pub phi: Matrix,
    pub gamma: f64,
    pub theta: f64,
}

impl CertificateCandidate {
    /// All-zero candidate for state dimension `n` (with `gamma = theta = 0`).
    pub fn zeros(n: usize) -> Self {
        CertificateCandidate {
            p: Matrix::zeros(n, n),
            p_tilde: Matrix::zeros(n, n),
            lambda: Vec::new(),
            lambda_tilde: Vec::new(),
            xi: Vec::new(),
            upsilon: Vec::new(),
            xi_tilde0: Matrix::zeros(n, n),
            upsilon_tilde: Vec::new(),
            gamma_blocks: Vec::new(),
            omega_blocks: Vec::new(),
            phi: Matrix::zeros(n, n),
            gamma: 0.0,
            theta: 0.0,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    /// `> 0`
    Positive,
    /// `>= 0`
    NonNegative,
    /// `<= 0`
    NonPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub kind: ConditionKind,
    pub matrix: Matrix,
}

/// Every condition of a certificate as a named symmetric matrix, in
/// checking order. `q` and `q_tilde` are also among the conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateMatrices {
    pub q: Matrix,
    pub q_tilde: Matrix,
    pub conditions: Vec<Condition>,
}

struct Dims {
    n: usize,
    k: Vec<usize>,
}

impl Dims {
    fn of(model: &CsodeMatrices) -> Self {
        Dims {
            n: model.a0.rows(),
            k: model.subnets.iter().map(|(_, w, _)| w.rows()).collect(),
        }
    }

    fn total(&self) -> usize {
        self.k.iter().sum()
    }

    /// Offset of subnet `j` (0-based) within a stacked block.
    fn offset(&self, j: usize) -> usize {
        self.k[..j].iter().sum()
    }
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::DimMismatch(format!(
            "block {name} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn require_diagonal(name: &str, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i != j && m[(i, j)] != 0.0 {
                return Err(Error::InvalidConfig(format!("block {name} must be diagonal")));
            }
        }
    }
    Ok(())
}

fn diag_of(m: &Matrix) -> Vec<f64> {
    (0..m.rows().min(m.cols())).map(|i| m[(i, i)]).collect()
}

/// `list[idx]`, or a zero block when `list` is empty.
fn block_or_zero(name: &str, list: &[Matrix], idx: usize, expected: usize, rows: usize, cols: usize) -> Result<Matrix> {
    if list.is_empty() {
        return Ok(Matrix::zeros(rows, cols));
    }
    if list.len() != expected {
        return Err(Error::DimMismatch(format!("{name} has {} blocks, expected {expected}", list.len())));
    }
    let m = list[idx].clone();
    expect_shape(&format!("{name}[{idx}]"), &m, rows, cols)?;
    Ok(m)
}

fn pair_or_zero(name: &str, list: &[PairBlock], s: usize, r: usize, rows: usize, cols: usize) -> Result<Matrix> {
    match list.iter().find(|b| b.s == s && b.r == r) {
        Some(b) => {
            let label = format!("{name}({s},{r})");
            expect_shape(&label, &b.value, rows, cols)?;
            require_diagonal(&label, &b.value)?;
            Ok(b.value.clone())
        }
        None => Ok(Matrix::zeros(rows, cols)),
    }
}

fn symmetric_input(name: &str, m: &Matrix, n: usize) -> Result<Matrix> {
    expect_shape(name, m, n, n)?;
    let scale = m.frobenius().max(1.0);
    let asym = m.max_asymmetry();
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    m.sym()
}

fn mm(a: &Matrix, b: &Matrix) -> Matrix {
    a.matmul(b).expect("block shapes checked")
}

fn plus(a: &Matrix, b: &Matrix) -> Matrix {
    a.add(b).expect("block shapes checked")
}

fn minus(a: &Matrix, b: &Matrix) -> Matrix {
    a.sub(b).expect("block shapes checked")
}

/// `Y + Y^T`.
fn twice_sym(y: &Matrix) -> Matrix {
    plus(y, &y.transpose())
}

/// Writes `block` at `(r, c)` and its transpose at `(c, r)`.
fn place(target: &mut Matrix, r: usize, c: usize, block: &Matrix) {
    target.set_block(r, c, block).expect("block inside target");
    if r != c {
        target.set_block(c, r, &block.transpose()).expect("block inside target");
    }
}

fn cond(name: impl Into<String>, kind: ConditionKind, matrix: Matrix) -> Condition {
    Condition {
        name: name.into(),
        kind,
        matrix,
    }
}

fn scalar_matrix(v: f64) -> Matrix {
    Matrix::from_diag(&[v])
}

/// Blocks of the first family (`P`, `Lambda`, `Xi`, `Upsilon`, `Phi`).
struct First {
    p: Matrix,
    lambda: Vec<Matrix>,
    xi0: Matrix,
    xi: Vec<Matrix>,
    ups0: Vec<Matrix>,
    ups: BTreeMap<(usize, usize), Matrix>,
    phi: Matrix,
}

struct Second {
    p: Matrix,
    lambda: Vec<Matrix>,
    xi0: Matrix,
    gamma: Vec<Matrix>,
    omega: Vec<Matrix>,
    ups: BTreeMap<(usize, usize), Matrix>,
    g: f64,
    t: f64,
}

fn read_first(d: &Dims, c: &CertificateCandidate) -> Result<First> {
    let m = d.k.len();
    let n = d.n;
    let p = symmetric_input("P", &c.p, n)?;
    let phi = symmetric_input("Phi", &c.phi, n)?;
    let mut lambda = Vec::with_capacity(m);
    let mut xi = Vec::with_capacity(m);
    let mut ups0 = Vec::with_capacity(m);
    for j in 0..m {
        let kj = d.k[j];
        let l = block_or_zero("Lambda", &c.lambda, j, m, kj, kj)?;
        require_diagonal(&format!("Lambda[{j}]"), &l)?;
        lambda.push(l);
        let x = block_or_zero("Xi", &c.xi, j + 1, m + 1, kj, kj)?;
        require_diagonal(&format!("Xi[{}]", j + 1), &x)?;
        xi.push(x);
        ups0.push(pair_or_zero("Upsilon", &c.upsilon, 0, j + 1, kj, kj)?);
    }
    let xi0 = block_or_zero("Xi", &c.xi, 0, m + 1, n, n)?;
    require_diagonal("Xi[0]", &xi0)?;
    let mut ups = BTreeMap::new();
    for s in 1..=m {
        for r in (s + 1)..=m {
            ups.insert((s, r), pair_or_zero("Upsilon", &c.upsilon, s, r, d.k[s - 1], d.k[r - 1])?);
        }
    }
    if let Some(b) = c.upsilon.iter().find(|b| b.s >= b.r || b.r > m) {
        return Err(Error::DimMismatch(format!(
            "Upsilon({},{}) is outside 0 <= s < r <= {m}",
            b.s, b.r
        )));
    }
    Ok(First {
        p,
        lambda,
        xi0,
        xi,
        ups0,
        ups,
        phi,
    })
}

fn read_second(d: &Dims, c: &CertificateCandidate) -> Result<Second> {
    let m = d.k.len();
    let n = d.n;
    let p = symmetric_input("P_tilde", &c.p_tilde, n)?;
    expect_shape("Xi_tilde0", &c.xi_tilde0, n, n)?;
    require_diagonal("Xi_tilde0", &c.xi_tilde0)?;
    let mut lambda = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    let mut omega = Vec::with_capacity(m);
    for j in 0..m {
        let kj = d.k[j];
        for (name, list, out) in [
            ("Lambda_tilde", &c.lambda_tilde, &mut lambda),
            ("Gamma", &c.gamma_blocks, &mut gamma),
            ("Omega", &c.omega_blocks, &mut omega),
        ] {
            let b = block_or_zero(name, list, j, m, kj, kj)?;
            require_diagonal(&format!("{name}[{j}]"), &b)?;
            out.push(b);
        }
    }
    let mut ups = BTreeMap::new();
    for s in 1..=m {
        for r in 1..=m {
            ups.insert(
                (s, r),
                pair_or_zero("Upsilon_tilde", &c.upsilon_tilde, s, r, d.k[s - 1], d.k[r - 1])?,
            );
        }
    }
    if let Some(b) = c.upsilon_tilde.iter().find(|b| b.s == 0 || b.r == 0 || b.s > m || b.r > m) {
        return Err(Error::DimMismatch(format!("Upsilon_tilde({},{}) is outside 1..={m}", b.s, b.r)));
    }
    Ok(Second {
        p,
        lambda,
        xi0: c.xi_tilde0.clone(),
        gamma,
        omega,
        ups,
        g: c.gamma,
        t: c.theta,
    })
}

fn check_model(model: &CsodeMatrices) -> Result<Dims> {
    let d = Dims::of(model);
    expect_shape("A0", &model.a0, d.n, d.n)?;
    for (j, (a, w, _)) in model.subnets.iter().enumerate() {
        expect_shape(&format!("A{}", j + 1), a, d.n, d.k[j])?;
        expect_shape(&format!("W{}", j + 1), w, d.k[j], d.n)?;
    }
    Ok(d)
}

fn check_classification(d: &Dims, cls: &ActivationClassification) -> Result<()> {
    if cls.subnets.len() != d.k.len() {
        return Err(Error::DimMismatch(format!(
            "classification covers {} subnets, model has {}",
            cls.subnets.len(),
            d.k.len()
        )));
    }
    Ok(())
}

fn sign_conditions_first(f: &First) -> Vec<Condition> {
    let mut out = vec![cond("P", ConditionKind::NonNegative, f.p.clone())];
    for (j, l) in f.lambda.iter().enumerate() {
        out.push(cond(format!("Lambda[{}]", j + 1), ConditionKind::NonNegative, Matrix::from_diag(&diag_of(l))));
    }
    out.push(cond("Xi[0]", ConditionKind::NonNegative, Matrix::from_diag(&diag_of(&f.xi0))));
    for (j, x) in f.xi.iter().enumerate() {
        out.push(cond(format!("Xi[{}]", j + 1), ConditionKind::NonNegative, Matrix::from_diag(&diag_of(x))));
    }
    for (j, u) in f.ups0.iter().enumerate() {
        out.push(cond(format!("Upsilon(0,{})", j + 1), ConditionKind::NonNegative, Matrix::from_diag(&diag_of(u))));
    }
    for ((s, r), u) in &f.ups {
        out.push(cond(format!("Upsilon({s},{r})"), ConditionKind::NonNegative, Matrix::from_diag(&diag_of(u))));
    }
    out.push(cond("Phi", ConditionKind::Positive, f.phi.clone()));
    out
}

fn sign_conditions_second(s: &Second) -> Vec<Condition> {
    let mut out = vec![cond("P_tilde", ConditionKind::NonNegative, s.p.clone())];
    for (name, list) in [("Lambda_tilde", &s.lambda), ("Gamma", &s.gamma), ("Omega", &s.omega)] {
        for (j, b) in list.iter().enumerate() {
            out.push(cond(format!("{name}[{}]", j + 1), ConditionKind::NonNegative, Matrix::from_diag(&diag_of(b))));
        }
    }
    out.push(cond("Xi_tilde0", ConditionKind::NonNegative, Matrix::from_diag(&diag_of(&s.xi0))));
    for ((a, b), u) in &s.ups {
        out.push(cond(format!("Upsilon_tilde({a},{b})"), ConditionKind::NonNegative, Matrix::from_diag(&diag_of(u))));
    }
    out.push(cond("gamma", ConditionKind::Positive, scalar_matrix(s.g)));
    out.push(cond("theta", ConditionKind::Positive, scalar_matrix(s.t)));
    out
}

/// `W_j^T B W_r`, symmetrised when square.
fn lift(wj: &Matrix, b: &Matrix, wr: &Matrix) -> Matrix {
    mm(&mm(&wj.transpose(), b), wr)
}

/// Conditions involving `P`, `Lambda`, `Xi`, `Upsilon` and `Phi`, including
/// the matrix `Q`.
pub fn first_family(
    model: &CsodeMatrices,
    cand: &CertificateCandidate,
    cls: &ActivationClassification,
) -> Result<(Matrix, Vec<Condition>)> {
    let d = check_model(model)?;
    check_classification(&d, cls)?;
    let f = read_first(&d, cand)?;
    let (n, m, kt) = (d.n, d.k.len(), d.total());
    let a0 = &model.a0;
    let mut q = Matrix::zeros(2 * n + kt, 2 * n + kt);
    let ctrl = n + kt;
    place(&mut q, 0, 0, &plus(&twice_sym(&mm(&f.p, a0)), &f.xi0));
    place(&mut q, 0, ctrl, &f.p);
    place(&mut q, ctrl, ctrl, &f.phi.scale(-1.0));
    let grams: Vec<Matrix> = model.subnets.iter().map(|(_, w, _)| mm(w, &w.transpose())).collect();
    for j in 0..m {
        let (aj, wj, _) = &model.subnets[j];
        let oj = n + d.offset(j);
        let lw = mm(&f.lambda[j], wj);
        place(&mut q, oj, oj, &plus(&twice_sym(&mm(&lw, aj)), &f.xi[j]));
        let q1j = plus(&plus(&mm(&f.p, aj), &mm(&a0.transpose(), &lw.transpose())), &mm(&wj.transpose(), &f.ups0[j]));
        place(&mut q, 0, oj, &q1j);
        place(&mut q, oj, ctrl, &lw);
        for r in (j + 1)..m {
            let (ar, wr, _) = &model.subnets[r];
            let or = n + d.offset(r);
            let lr_wr = mm(&f.lambda[r], wr);
            let block = plus(
                &plus(&mm(&aj.transpose(), &lr_wr.transpose()), &mm(&lw, ar)),
                &mm(&mm(&grams[j], &f.ups[&(j + 1, r + 1)]), &grams[r]),
            );
            place(&mut q, oj, or, &block);
        }
    }
    let mut conditions = sign_conditions_first(&f);
    let mut pl = f.p.clone();
    let mut xs = f.xi0.clone();
    for j in 0..m {
        let wj = &model.subnets[j].1;
        if cls.subnets[j].integral_divergent {
            pl = plus(&pl, &lift(wj, &f.lambda[j], wj));
        }
        xs = plus(&xs, &lift(wj, &f.ups0[j], wj));
        if cls.subnets[j].value_unbounded {
            xs = plus(&xs, &lift(wj, &f.xi[j], wj));
            for r in (j + 1)..m {
                if cls.subnets[r].value_unbounded {
                    let wr = &model.subnets[r].1;
                    xs = plus(&xs, &lift(wj, &f.ups[&(j + 1, r + 1)], wr).sym()?);
                }
            }
        }
    }
    conditions.push(cond("P+Lambda", ConditionKind::Positive, pl.sym()?));
    conditions.push(cond("Xi_sum", ConditionKind::Positive, xs.sym()?));
    conditions.push(cond("Q", ConditionKind::NonPositive, q.clone()));
    Ok((q, conditions))
}

/// Conditions involving `P~`, `Lambda~`, `Xi~0`, `Gamma`, `Omega`,
/// `Upsilon~`, `gamma` and `theta`, including the matrix `Q~`.
pub fn second_family(
    model: &CsodeMatrices,
    cand: &CertificateCandidate,
    bounds: &SectorBounds,
    cls: &ActivationClassification,
) -> Result<(Matrix, Vec<Condition>)> {
    let d = check_model(model)?;
    check_classification(&d, cls)?;
    bounds.validate(&d.k)?;
    let s = read_second(&d, cand)?;
    let (n, m, kt) = (d.n, d.k.len(), d.total());
    let a0 = &model.a0;
    let mut big_a = Matrix::zeros(n, kt);
    let mut big_gamma = Matrix::zeros(n, kt);
    let mut delta = Matrix::zeros(n, kt);
    let mut big_omega = Matrix::zeros(n, kt);
    let mut ups = Matrix::zeros(kt, kt);
    let grams: Vec<Matrix> = model.subnets.iter().map(|(_, w, _)| mm(w, &w.transpose())).collect();
    for j in 0..m {
        let (aj, wj, _) = &model.subnets[j];
        let oj = d.offset(j);
        let wt = wj.transpose();
        big_a.set_block(0, oj, aj)?;
        big_gamma.set_block(0, oj, &mm(&wt, &s.gamma[j]))?;
        delta.set_block(0, oj, &mm(&wt, &s.lambda[j]))?;
        big_omega.set_block(0, oj, &mm(&wt, &s.omega[j]))?;
        for r in 0..m {
            let block = mm(&mm(&grams[j], &s.ups[&(j + 1, r + 1)]), &grams[r]);
            ups.set_block(oj, d.offset(r), &block)?;
        }
    }
    let mut qt = Matrix::zeros(n + 2 * kt, n + 2 * kt);
    place(&mut qt, 0, 0, &plus(&twice_sym(&mm(&s.p, a0)), &s.xi0));
    place(&mut qt, 0, n, &plus(&mm(&s.p, &big_a), &big_gamma));
    place(&mut qt, 0, n + kt, &plus(&mm(&a0.transpose(), &delta), &big_omega));
    place(&mut qt, n, n + kt, &plus(&mm(&big_a.transpose(), &delta), &ups));
    place(&mut qt, n, n, &Matrix::scaled_identity(kt, -s.g));
    place(&mut qt, n + kt, n + kt, &Matrix::scaled_identity(kt, -s.t));

    let mut conditions = sign_conditions_second(&s);
    let mut pl = s.p.clone();
    let mut sector = Matrix::zeros(n, n);
    for j in 0..m {
        let wj = &model.subnets[j].1;
        if cls.subnets[j].integral_divergent {
            pl = plus(&pl, &lift(wj, &s.lambda[j], wj));
        }
        let b0: Vec<f64> = bounds.s0[j].iter().zip(&bounds.h0[j]).map(|(a, b)| s.g * a + s.t * b).collect();
        sector = plus(&sector, &lift(wj, &Matrix::from_diag(&b0), wj));
    }
    conditions.push(cond("P_tilde+Lambda_tilde", ConditionKind::Positive, pl.sym()?));
    let xi_res = minus(&s.xi0, &sector).sym()?;
    conditions.push(cond("Xi_tilde0_residual", ConditionKind::NonNegative, xi_res.clone()));
    let mut total = xi_res;
    let residual = |blk: &Matrix, b1: &[f64], b2: &[f64]| -> Vec<f64> {
        diag_of(blk)
            .iter()
            .zip(b1.iter().zip(b2))
            .map(|(v, (x, y))| v - s.g * x - s.t * y)
            .collect()
    };
    for j in 0..m {
        let wj = &model.subnets[j].1;
        let g = residual(&s.gamma[j], &bounds.s1[j], &bounds.h1[j]);
        let o = residual(&s.omega[j], &bounds.s2[j], &bounds.h2[j]);
        conditions.push(cond(format!("Gamma_residual[{}]", j + 1), ConditionKind::NonNegative, Matrix::from_diag(&g)));
        conditions.push(cond(format!("Omega_residual[{}]", j + 1), ConditionKind::NonNegative, Matrix::from_diag(&o)));
        let go: Vec<f64> = g.iter().zip(&o).map(|(a, b)| a + b).collect();
        total = plus(&total, &lift(wj, &Matrix::from_diag(&go), wj));
    }
    for j in 0..m {
        for r in 0..m {
            let u = residual(&s.ups[&(j + 1, r + 1)], &bounds.s3[j][r], &bounds.h3[j][r]);
            conditions.push(cond(
                format!("Upsilon_tilde_residual({},{})", j + 1, r + 1),
                ConditionKind::NonNegative,
                Matrix::from_diag(&u),
            ));
            let (wj, wr) = (&model.subnets[j].1, &model.subnets[r].1);
            let rect = Matrix::rect_diag(d.k[j], d.k[r], &u);
            total = plus(&total, &lift(wj, &rect, wr).sym()?);
        }
    }
    conditions.push(cond("final_sum", ConditionKind::Positive, total.sym()?));
    conditions.push(cond("Q_tilde", ConditionKind::NonPositive, qt.clone()));
    Ok((qt, conditions))
}

/// Assembles `Q`, `Q~` and every named condition of the certificate.
pub fn assemble_lmis(
    model: &CsodeMatrices,
    cand: &CertificateCandidate,
    bounds: &SectorBounds,
    cls: &ActivationClassification,
) -> Result<CertificateMatrices> {
    let (q, mut conditions) = first_family(model, cand, cls)?;
    let (q_tilde, second) = second_family(model, cand, bounds, cls)?;
    conditions.extend(second);
    Ok(CertificateMatrices {
        q,
        q_tilde,
        conditions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum Verdict {
    Certified,
    Violated { name: String, eigenvalue: f64 },
}

impl Verdict {
    pub fn certified(&self) -> bool {
        matches!(self, Verdict::Certified)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub tol: f64,
    pub conditions: BTreeMap<String, ConditionReport>,
}

/// Eigenvalue check of one condition: `> 0` needs `lambda_min >
/// STRICT_MARGIN`, `>= 0` needs `lambda_min > -tol`, `<= 0` needs
/// `lambda_max < tol`.
pub fn check_condition(c: &Condition, tol: f64) -> Result<(ConditionReport, f64)> {
    let ev = if c.matrix.rows() == 0 {
        vec![0.0]
    } else {
        symmetric_eigenvalues(&c.matrix)?
    };
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    let (pass, worst) = match c.kind {
        ConditionKind::Positive => (lo > STRICT_MARGIN, lo),
        ConditionKind::NonNegative => (lo > -tol, lo),
        ConditionKind::NonPositive => (hi < tol, hi),
    };
    let pass = pass && lo.is_finite() && hi.is_finite();
    Ok((
        ConditionReport {
            lambda_min: lo,
            lambda_max: hi,
            pass,
        },
        worst,
    ))
}

/// Checks every condition and reports the first violation.
pub fn verify_conditions(conditions: &[Condition], tol: f64) -> Result<VerificationReport> {
    let mut verdict = Verdict::Certified;
    let mut reports = BTreeMap::new();
    for c in conditions {
        let (rep, worst) = check_condition(c, tol)?;
        if !rep.pass && verdict.certified() {
            verdict = Verdict::Violated {
                name: c.name.clone(),
                eigenvalue: worst,
            };
        }
        reports.insert(c.name.clone(), rep);
    }
    Ok(VerificationReport {
        verdict,
        tol,
        conditions: reports,
    })
}

pub fn verify_certificate(mats: &CertificateMatrices, tol: f64) -> Result<VerificationReport> {
    verify_conditions(&mats.conditions, tol)
}
