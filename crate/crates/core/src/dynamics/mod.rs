//! The five vector-field architectures.
//!
//! Every model works on row-batched states `[batch, state_dim]` with a fixed
//! layout: the observed state `x` always comes first, followed by the
//! model's auxiliary block.
//!
//! | variant     | layout    | auxiliary block                      |
//! |-------------|-----------|--------------------------------------|
//! | node        | `[x]`     | none                                 |
//! | anode       | `[x\|a]`  | `p` augmented dims, start at zero    |
//! | sonode      | `[x\|v]`  | velocity, `v(0) = L x(0)`            |
//! | csode       | `[x\|z]`  | control channel, `z(0) = x(0)`       |
//! | csode-adapt | `[x\|z]`  | as csode, with a convolutional `h`   |

mod budget;

pub use budget::match_param_budget;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{uniform_fan_in, Activation, Conv2d, Mlp, ParamId, ParamStore, WeightEntry};
use crate::solvers::{integrate, SolverConfig};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Node,
    Anode,
    Sonode,
    Csode,
    CsodeAdapt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Node,
        Variant::Anode,
        Variant::Sonode,
        Variant::Csode,
        Variant::CsodeAdapt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Node => "node",
            Variant::Anode => "anode",
            Variant::Sonode => "sonode",
            Variant::Csode => "csode",
            Variant::CsodeAdapt => "csode-adapt",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model variant {s}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn tanh() -> Activation {
    Activation::Tanh
}

fn default_kernel() -> usize {
    3
}

/// Architecture description, stored as `arch.json` next to a weight file.
///
/// `widths` holds the hidden widths of the MLP for node/anode/sonode and the
/// subnet widths `k_j` for the csode variants (so `M = widths.len()`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub variant: Variant,
    pub n: usize,
    #[serde(rename = "M", default)]
    pub m: usize,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub p: usize,
    #[serde(default)]
    pub conv_channels: usize,
    #[serde(default)]
    pub seed: u64,
    /// Hidden widths of the csode control-rate MLP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_widths: Option<Vec<usize>>,
    /// `[channels, height, width]` of a grid-shaped state (csode-adapt).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 3]>,
    /// Subnet nonlinearity `f_j`.
    #[serde(default = "tanh")]
    pub activation: Activation,
    /// Activation between hidden layers of every MLP.
    #[serde(default = "tanh")]
    pub hidden_activation: Activation,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
}

impl ArchSpec {
    pub fn node(n: usize, widths: Vec<usize>) -> Self {
        ArchSpec {
            variant: Variant::Node,
            n,
            m: 0,
            widths,
            p: 0,
            conv_channels: 0,
            seed: 0,
            control_widths: None,
            grid: None,
            activation: Activation::Tanh,
            hidden_activation: Activation::Tanh,
            kernel_size: 3,
        }
    }

    pub fn anode(n: usize, p: usize, widths: Vec<usize>) -> Self {
        ArchSpec {
            variant: Variant::Anode,
            p,
            ..Self::node(n, widths)
        }
    }

    pub fn sonode(n: usize, widths: Vec<usize>) -> Self {
        ArchSpec {
            variant: Variant::Sonode,
            ..Self::node(n, widths)
        }
    }

    /// CSODE with one subnet per entry of `subnet_widths`.
    pub fn csode(n: usize, subnet_widths: Vec<usize>, control_widths: Vec<usize>) -> Self {
        ArchSpec {
            variant: Variant::Csode,
            m: subnet_widths.len(),
            control_widths: Some(control_widths),
            ..Self::node(n, subnet_widths)
        }
    }

    pub fn csode_adapt(grid: [usize; 3], subnet_widths: Vec<usize>, conv_channels: usize) -> Self {
        ArchSpec {
            variant: Variant::CsodeAdapt,
            m: subnet_widths.len(),
            conv_channels,
            grid: Some(grid),
            ..Self::node(grid.iter().product(), subnet_widths)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("state dimension n must be positive".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        match self.variant {
            Variant::Csode | Variant::CsodeAdapt => {
                if self.m != self.widths.len() {
                    return bad(format!(
                        "M = {} but {} subnet widths were given",
                        self.m,
                        self.widths.len()
                    ));
                }
                if self.widths.contains(&0) {
                    return bad("subnet widths must be positive".into());
                }
            }
            _ => {
                if self.widths.contains(&0) {
                    return bad("hidden widths must be positive".into());
                }
            }
        }
        if self.variant == Variant::CsodeAdapt {
            let Some(grid) = self.grid else {
                return bad("csode-adapt needs a grid [channels, height, width]".into());
            };
            if grid.iter().product::<usize>() != self.n {
                return bad(format!("grid {grid:?} does not match n = {}", self.n));
            }
            if self.conv_channels == 0 {
                return bad("csode-adapt needs conv_channels > 0".into());
            }
        }
        Ok(())
    }

    /// Number of columns in the integrated state.
    pub fn state_dim(&self) -> usize {
        match self.variant {
            Variant::Node => self.n,
            Variant::Anode => self.n + self.p,
            Variant::Sonode | Variant::Csode | Variant::CsodeAdapt => 2 * self.n,
        }
    }

    fn control_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.n];
        dims.extend(self.control_widths.clone().unwrap_or_default());
        dims.push(self.n);
        dims
    }

    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.widths);
        dims.push(output);
        dims
    }

    /// Parameter count computed from the formula, without building the model.
    pub fn param_count(&self) -> usize {
        let n = self.n;
        match self.variant {
            Variant::Node => Mlp::count_for(&self.mlp_dims(n, n)),
            Variant::Anode => Mlp::count_for(&self.mlp_dims(n + self.p, n + self.p)),
            Variant::Sonode => Mlp::count_for(&self.mlp_dims(2 * n, n)) + n * n,
            Variant::Csode => {
                n * n + self.widths.iter().map(|k| 2 * n * k).sum::<usize>()
                    + Mlp::count_for(&self.control_dims())
            }
            Variant::CsodeAdapt => {
                let c = self.grid.map_or(1, |g| g[0]);
                let ch = self.conv_channels;
                let k2 = self.kernel_size * self.kernel_size;
                n * n
                    + self.widths.iter().map(|k| 2 * n * k).sum::<usize>()
                    + (ch * c * k2 + ch)
                    + (c * ch * k2 + c)
            }
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: ArchSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One term `A_j f_j(W_j x)` of the CSODE drift.
#[derive(Debug, Clone)]
pub struct Subnet {
    pub a: ParamId,
    pub w: ParamId,
    pub activation: Activation,
    pub width: usize,
}

#[derive(Debug, Clone)]
enum ControlRate {
    Mlp(Mlp),
    Conv {
        first: Conv2d,
        second: Conv2d,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    Node(Mlp),
    Sonode { mlp: Mlp, velocity_init: ParamId },
    Csode {
        a0: ParamId,
        subnets: Vec<Subnet>,
        control: ControlRate,
    },
}

/// Matrices of a CSODE drift, extracted for the certificate checks.
#[derive(Debug, Clone)]
pub struct CsodeMatrices {
    pub a0: Matrix,
    /// `(A_j, W_j, f_j)` with `A_j: n x k_j` and `W_j: k_j x n`.
    pub subnets: Vec<(Matrix, Matrix, Activation)>,
}

/// Single-file form of a model: architecture plus named weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub arch: ArchSpec,
    pub weights: std::collections::BTreeMap<String, WeightEntry>,
}

/// A parameterised right-hand side together with its parameters.
#[derive(Debug, Clone)]
pub struct VectorField {
    spec: ArchSpec,
    store: ParamStore,
    kind: Kind,
}

impl VectorField {
    /// Builds the model and initialises its parameters from `spec.seed`.
    pub fn new(spec: ArchSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let n = spec.n;
        let kind = match spec.variant {
            Variant::Node => Kind::Node(Mlp::new(
                &mut store,
                "mlp",
                &spec.mlp_dims(n, n),
                spec.hidden_activation,
                &mut rng,
            )?),
            Variant::Anode => Kind::Node(Mlp::new(
                &mut store,
                "mlp",
                &spec.mlp_dims(n + spec.p, n + spec.p),
                spec.hidden_activation,
                &mut rng,
            )?),
            Variant::Sonode => {
                let mlp = Mlp::new(
                    &mut store,
                    "mlp",
                    &spec.mlp_dims(2 * n, n),
                    spec.hidden_activation,
                    &mut rng,
                )?;
                let velocity_init =
                    store.add("velocity_init", uniform_fan_in(&mut rng, vec![n, n], n))?;
                Kind::Sonode { mlp, velocity_init }
            }
            Variant::Csode | Variant::CsodeAdapt => {
                let a0 = store.add("A0", uniform_fan_in(&mut rng, vec![n, n], n))?;
                let mut subnets = Vec::with_capacity(spec.m);
                for (j, &k) in spec.widths.iter().enumerate() {
                    let a = store.add(
                        format!("subnet.{j}.A"),
                        uniform_fan_in(&mut rng, vec![n, k], k),
                    )?;
                    let w = store.add(
                        format!("subnet.{j}.W"),
                        uniform_fan_in(&mut rng, vec![k, n], n),
                    )?;
                    subnets.push(Subnet {
                        a,
                        w,
                        activation: spec.activation,
                        width: k,
                    });
                }
                let control = if spec.variant == Variant::Csode {
                    ControlRate::Mlp(Mlp::new(
                        &mut store,
                        "control",
                        &spec.control_dims(),
                        spec.hidden_activation,
                        &mut rng,
                    )?)
                } else {
                    let [c, height, width] = spec.grid.expect("validated");
                    let first = Conv2d::new(
                        &mut store,
                        "control_conv.0",
                        c,
                        spec.conv_channels,
                        spec.kernel_size,
                        spec.hidden_activation,
                        &mut rng,
                    )?;
                    let second = Conv2d::new(
                        &mut store,
                        "control_conv.1",
                        spec.conv_channels,
                        c,
                        spec.kernel_size,
                        Activation::Identity,
                        &mut rng,
                    )?;
                    ControlRate::Conv {
                        first,
                        second,
                        height,
                        width,
                    }
                };
                Kind::Csode {
                    a0,
                    subnets,
                    control,
                }
            }
        };
        Ok(VectorField { spec, store, kind })
    }

    /// Loads `arch.json` and the weight file next to it.
    pub fn load(arch_path: &Path, weights_path: &Path) -> Result<Self> {
        let mut field = Self::new(ArchSpec::load_json(arch_path)?)?;
        field.store.load_json(weights_path)?;
        Ok(field)
    }

    pub fn save(&self, arch_path: &Path, weights_path: &Path) -> Result<()> {
        self.spec.save_json(arch_path)?;
        self.store.save_json(weights_path)
    }

    /// Writes architecture and weights into one JSON file.
    pub fn save_model(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            arch: self.spec.clone(),
            weights: self.store.to_weights(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_model(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        let mut field = Self::new(file.arch)?;
        field.store.load_weights(&file.weights)?;
        Ok(field)
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Overwrites the named parameter.
    pub fn set_param(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let id = self
            .store
            .id_of(name)
            .ok_or_else(|| Error::LayoutMismatch(format!("no parameter named {name}")))?;
        let t = self.store.get_mut(id);
        if t.numel() != data.len() {
            return Err(Error::shape("set_param", t.shape(), &[data.len()]));
        }
        t.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_params(&mut self, prefix: &str) {
        let ids: Vec<ParamId> = self
            .store
            .iter()
            .filter(|(_, name, _)| name.starts_with(prefix))
            .map(|(id, _, _)| id)
            .collect();
        for id in ids {
            self.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Lifts observed states `[batch, n]` to the integrated layout.
    pub fn initial_state<'t>(&self, params: &[Var<'t>], x0: Var<'t>) -> Result<Var<'t>> {
        let shape = x0.shape();
        if shape.len() != 2 || shape[1] != self.spec.n {
            return Err(Error::shape("initial_state", &shape, &[self.spec.n]));
        }
        let batch = shape[0];
        match (&self.kind, self.spec.variant) {
            (Kind::Node(_), Variant::Anode) if self.spec.p > 0 => {
                let zeros = x0
                    .tape()
                    .constant(vec![batch, self.spec.p], vec![0.0; batch * self.spec.p])?;
                Var::concat_cols(&[x0, zeros])
            }
            (Kind::Node(_), _) => Ok(x0),
            (Kind::Sonode { velocity_init, .. }, _) => {
                let v0 = x0.matmul_bt(params[velocity_init.0])?;
                Var::concat_cols(&[x0, v0])
            }
            (Kind::Csode { .. }, _) => Var::concat_cols(&[x0, x0]),
        }
    }

    /// The observed block `x` of an integrated state.
    pub fn observe<'t>(&self, state: Var<'t>) -> Result<Var<'t>> {
        if self.state_dim() == self.spec.n {
            return Ok(state);
        }
        state.slice_cols(0, self.spec.n)
    }

    /// Time derivative of a `[batch, state_dim]` state.
    pub fn rhs<'t>(&self, params: &[Var<'t>], state: Var<'t>) -> Result<Var<'t>> {
        let shape = state.shape();
        if shape.len() != 2 || shape[1] != self.state_dim() {
            return Err(Error::shape("rhs", &shape, &[self.state_dim()]));
        }
        let n = self.spec.n;
        match &self.kind {
            Kind::Node(mlp) => mlp.forward(params, state),
            Kind::Sonode { mlp, .. } => {
                let v = state.slice_cols(n, 2 * n)?;
                let acc = mlp.forward(params, state)?;
                Var::concat_cols(&[v, acc])
            }
            Kind::Csode {
                a0,
                subnets,
                control,
            } => {
                let x = state.slice_cols(0, n)?;
                let z = state.slice_cols(n, 2 * n)?;
                let mut dx = x.matmul_bt(params[a0.0])?;
                for s in subnets {
                    let pre = x.matmul_bt(params[s.w.0])?;
                    let act = s.activation.apply_var(pre);
                    dx = dx.add(act.matmul_bt(params[s.a.0])?)?;
                }
                dx = dx.add(z)?;
                let dz = match control {
                    ControlRate::Mlp(mlp) => mlp.forward(params, z)?,
                    ControlRate::Conv {
                        first,
                        second,
                        height,
                        width,
                    } => {
                        let h = first.forward(params, z, *height, *width)?;
                        second.forward(params, h, *height, *width)?
                    }
                };
                Var::concat_cols(&[dx, dz])
            }
        }
    }

    /// Plain-value derivative of row-major states, `len = batch * state_dim`.
    pub fn rhs_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let d = self.state_dim();
        if state.len() % d != 0 {
            return Err(Error::shape("rhs_values", &[state.len()], &[d]));
        }
        let tape = Tape::new();
        let params = self.store.record_constant(&tape);
        let s = tape.constant(vec![state.len() / d, d], state.to_vec())?;
        Ok(self.rhs(&params, s)?.to_vec())
    }

    /// Plain-value version of [`VectorField::initial_state`].
    pub fn initial_state_values(&self, x0: &[f64]) -> Result<Vec<f64>> {
        let n = self.spec.n;
        if x0.len() % n != 0 {
            return Err(Error::shape("initial_state", &[x0.len()], &[n]));
        }
        let tape = Tape::new();
        let params = self.store.record_constant(&tape);
        let x = tape.constant(vec![x0.len() / n, n], x0.to_vec())?;
        Ok(self.initial_state(&params, x)?.to_vec())
    }

    /// Observed columns of plain-value states.
    pub fn observe_values(&self, state: &[f64]) -> Vec<f64> {
        let (d, n) = (self.state_dim(), self.spec.n);
        state.chunks(d).flat_map(|row| row[..n].iter().copied()).collect()
    }

    /// Observed states at every time in `times`, starting from the rows of
    /// `x0` (`len = batch * n`).
    pub fn rollout(&self, x0: &[f64], times: &[f64], cfg: &SolverConfig) -> Result<Vec<Vec<f64>>> {
        let s0 = self.initial_state_values(x0)?;
        let traj = integrate(|_, s: &Vec<f64>| self.rhs_values(s), s0, times, cfg)?;
        Ok(traj.states.iter().map(|s| self.observe_values(s)).collect())
    }

    pub fn subnets(&self) -> &[Subnet] {
        match &self.kind {
            Kind::Csode { subnets, .. } => subnets,
            _ => &[],
        }
    }

    /// The drift matrices of a csode model.
    pub fn csode_matrices(&self) -> Option<CsodeMatrices> {
        let Kind::Csode { a0, subnets, .. } = &self.kind else {
            return None;
        };
        let n = self.spec.n;
        let mat = |id: ParamId, r: usize, c: usize| {
            Matrix::from_vec(r, c, self.store.get(id).data().to_vec()).expect("shape fixed at build")
        };
        Some(CsodeMatrices {
            a0: mat(*a0, n, n),
            subnets: subnets
                .iter()
                .map(|s| (mat(s.a, n, s.width), mat(s.w, s.width, n), s.activation))
                .collect(),
        })
    }
}
