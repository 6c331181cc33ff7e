//! The `csode` command line: simulate, train, evaluate, certify and scale.
//!
//! Exit codes: 0 success, 2 usage, 3 simulation, 4 training, 5 evaluation,
//! 6 certification. `CSODE_THREADS` caps the worker pool.

mod manifest;

pub use manifest::{canonical_hash, RunManifest};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::json;

use crate::certify::{
    assemble_lmis, check_assumption1, check_assumption2, classify_activation, default_grid, empirical_contraction,
    gaussian_pairs, sample_check_assumption3, search_certificate, sector_bounds_for, verify_certificate,
    ActivationClassification, CertificateCandidate, Contraction, SEARCH_MAX_DIM,
};
use crate::dynamics::{match_param_budget, ArchSpec, Variant, VectorField};
use crate::error::Error;
use crate::metrics::{evaluate, Metric};
use crate::nets::Activation;
use crate::simulators::{build_dataset, Dataset, Protocol, System};
use crate::solvers::{Method, SolverConfig};
use crate::training::{
    default_frame_dt, ground_truth_prediction, history_csv, predict_test, run_scaling_study, scaling_csv, train_with, Loss,
    TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_EVALUATION: i32 = 5;
pub const EXIT_CERTIFICATION: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "csode", version, about = "ControlSynth neural ODE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset directory from a reference simulator.
    Simulate(SimulateArgs),
    /// Train a model on a dataset's observation windows.
    Train(TrainArgs),
    /// Score a model on a dataset's held-out horizon.
    Evaluate(EvaluateArgs),
    /// Check convergence conditions of a csode model.
    Certify(CertifyArgs),
    /// Train a grid of csode widths and subnet counts with lr = k / (W sqrt(N)).
    Scale(ScaleArgs),
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// hr, gray-scott, shallow-water or spiral.
    #[arg(long)]
    system: System,
    /// Number of simulations (defaults to the protocol size).
    #[arg(long)]
    n_sims: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Grid side for field systems (defaults to the protocol size).
    #[arg(long)]
    grid: Option<usize>,
    /// Use the published simulation sizes instead of desk scale.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Debug, Args, Serialize, Clone)]
struct SolverArgs {
    /// euler, rk4 or dopri5.
    #[arg(long, default_value = "euler")]
    solver: Method,
    /// Step size (in frames) for the fixed-step solvers.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 1e-6)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    atol: f64,
    /// Model time between frames (defaults to the sample interval for the
    /// spiral, 1 / (window - 1) otherwise).
    #[arg(long)]
    frame_dt: Option<f64>,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            method: self.solver,
            dt: self.dt,
            rtol: self.rtol,
            atol: self.atol,
            ..SolverConfig::default()
        }
    }

    fn frame_dt(&self, ds: &Dataset) -> f64 {
        self.frame_dt.unwrap_or_else(|| default_frame_dt(ds))
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// node, anode, sonode, csode or csode-adapt.
    #[arg(long)]
    arch: Variant,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden width (MLP layers, subnets and control layers).
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Hidden layers of the node/anode/sonode MLP.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Number of csode subnets.
    #[arg(long, default_value_t = 1)]
    subnets: usize,
    /// Augmented dimensions for anode.
    #[arg(long, default_value_t = 1)]
    augment: usize,
    /// Channels of the csode-adapt control convolutions.
    #[arg(long, default_value_t = 8)]
    conv_channels: usize,
    /// Subnet nonlinearity.
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    /// Activation between hidden MLP layers.
    #[arg(long, default_value = "tanh")]
    hidden_activation: Activation,
    /// mse or mae.
    #[arg(long, default_value = "mse")]
    loss: Loss,
    /// Clip the global gradient norm.
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Adjust the width to reach this parameter count.
    #[arg(long)]
    match_params: Option<usize>,
    /// Relative tolerance of --match-params.
    #[arg(long, default_value_t = 0.01)]
    match_tolerance: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Model file from `train`, or `ground-truth`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated subset of mse, mae, r2, chamfer.
    #[arg(long, value_delimiter = ',', default_value = "mse,mae,r2,chamfer")]
    metrics: Vec<Metric>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Seed recorded in the report.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CertifyArgs {
    /// Model file from `train` (csode or csode-adapt).
    #[arg(long)]
    model: PathBuf,
    /// Candidate certificate JSON to verify.
    #[arg(long, conflicts_with = "search_scalar")]
    candidate: Option<PathBuf>,
    /// Grid-search a certificate (state dimension at most 2).
    #[arg(long)]
    search_scalar: bool,
    /// Sample pairs for the sector-bound check.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Dataset whose frames supply the sample pairs (standard normal otherwise).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Initial-condition pairs for the contraction test.
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    /// Horizon of the contraction test.
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    /// RK4 step of the contraction test.
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,
    /// Tolerance of the non-strict eigenvalue conditions.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ScaleArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated widths W.
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    /// Comma-separated subnet counts N.
    #[arg(long, value_delimiter = ',', required = true)]
    subnets: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    k: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// A failed command: exit code plus message.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn fail(code: i32) -> impl Fn(Error) -> Failure {
    move |e| Failure {
        code,
        message: e.to_string(),
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn threads_from_env() -> CmdResult<Option<usize>> {
    match std::env::var("CSODE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(usage(format!("CSODE_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = threads_from_env().and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| usage(format!("cannot start worker pool: {e}")))?;
        pool.install(|| dispatch(cli.command))
    });
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult<()> {
    match cmd {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Certify(a) => certify_cmd(&a),
        Command::Scale(a) => scale_cmd(&a),
    }
}

fn create_dir(dir: &Path, code: i32) -> CmdResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| fail(code)(Error::io(dir, e)))
}

fn write_text(path: &Path, text: &str, code: i32) -> CmdResult<()> {
    std::fs::write(path, text).map_err(|e| fail(code)(Error::io(path, e)))
}

fn write_json(path: &Path, value: &impl Serialize, code: i32) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(code)(e.into()))?;
    write_text(path, &(text + "\n"), code)
}

fn load_dataset(dir: &Path, code: i32) -> CmdResult<Dataset> {
    Dataset::load(dir).map_err(fail(code))
}

fn simulate(a: &SimulateArgs) -> CmdResult<()> {
    let mut manifest = RunManifest::start("simulate", a, Some(a.seed));
    let mut protocol = Protocol::new(a.system, a.full_scale);
    if let Some(n) = a.n_sims {
        if n == 0 {
            return Err(usage("--n-sims must be at least 1"));
        }
        protocol = protocol.with_sims(n);
    }
    if let Some(g) = a.grid {
        if g < 3 {
            return Err(usage("--grid must be at least 3"));
        }
        protocol = protocol.with_grid(g);
    }
    let ds = build_dataset(&protocol, a.seed).map_err(fail(EXIT_SIMULATION))?;
    ds.save(&a.out).map_err(fail(EXIT_SIMULATION))?;
    manifest.artifact(a.out.join("manifest.json"));
    for i in 0..ds.n_sims() {
        manifest.artifact(a.out.join(format!("traj_{i}.csv")));
    }
    manifest.finish(&a.out.join("run.json")).map_err(fail(EXIT_SIMULATION))
}

fn build_arch(a: &TrainArgs, ds: &Dataset) -> CmdResult<ArchSpec> {
    let n = ds.manifest.state_dim;
    if a.width == 0 || a.subnets == 0 {
        return Err(usage("--width and --subnets must be at least 1"));
    }
    let mut spec = match a.arch {
        Variant::Node => ArchSpec::node(n, vec![a.width; a.depth]),
        Variant::Anode => ArchSpec::anode(n, a.augment, vec![a.width; a.depth]),
        Variant::Sonode => ArchSpec::sonode(n, vec![a.width; a.depth]),
        Variant::Csode => ArchSpec::csode(n, vec![a.width; a.subnets], vec![a.width]),
        Variant::CsodeAdapt => {
            let grid = ds
                .manifest
                .grid
                .ok_or_else(|| usage("csode-adapt needs a grid dataset"))?;
            ArchSpec::csode_adapt(grid, vec![a.width; a.subnets], a.conv_channels)
        }
    };
    spec.activation = a.activation;
    spec.hidden_activation = a.hidden_activation;
    spec = spec.with_seed(a.seed);
    if let Some(target) = a.match_params {
        spec = match_param_budget(target, &spec, a.match_tolerance).map_err(fail(EXIT_USAGE))?;
    }
    spec.validate().map_err(fail(EXIT_USAGE))?;
    Ok(spec)
}

fn train_cmd(a: &TrainArgs) -> CmdResult<()> {
    let mut manifest = RunManifest::start("train", a, Some(a.seed));
    let ds = load_dataset(&a.data, EXIT_USAGE)?;
    let spec = build_arch(a, &ds)?;
    let field = VectorField::new(spec).map_err(fail(EXIT_USAGE))?;
    let param_count = field.param_count();
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        solver: a.solver.config(),
        seed: a.seed,
        loss: a.loss,
        grad_clip: a.grad_clip,
        frame_dt: a.solver.frame_dt(&ds),
        ..TrainConfig::default()
    };
    create_dir(&a.out, EXIT_TRAINING)?;
    let out = train_with(field, &ds, &cfg, |r| {
        eprintln!(
            "epoch {:>5}  train {:.6e}  val {}",
            r.epoch,
            r.train_loss,
            r.val_loss.map_or("-".into(), |v| format!("{v:.6e}"))
        )
    })
    .map_err(fail(EXIT_TRAINING))?;
    let model_path = a.out.join("model.json");
    out.field.save_model(&model_path).map_err(fail(EXIT_TRAINING))?;
    let hist_path = a.out.join("history.csv");
    write_text(&hist_path, &history_csv(&out.history), EXIT_TRAINING)?;
    let hp = predict_test(&out.field, &ds, &cfg.solver, cfg.frame_dt).map_err(fail(EXIT_TRAINING))?;
    let test = evaluate(&hp, ds.manifest.grid, &[Metric::Mse, Metric::Mae], a.arch.name(), ds.manifest.system.name(), a.seed)
        .map_err(fail(EXIT_TRAINING))?;
    let last = out.history.last();
    let results = json!({
        "config": {
            "arch": out.field.spec(),
            "train": cfg,
            "data": a.data,
        },
        "param_count": param_count,
        "target_params": a.match_params,
        "param_deviation": a.match_params.map(|t| (param_count as f64 - t as f64) / t as f64),
        "final_metrics": {
            "train_loss": last.map(|r| r.train_loss),
            "val_loss": last.and_then(|r| r.val_loss),
            "test_mse": test.mse,
            "test_mae": test.mae,
        },
        "wall_time_s": out.wall_time_s,
    });
    let res_path = a.out.join("results.json");
    write_json(&res_path, &results, EXIT_TRAINING)?;
    for p in [model_path, hist_path, res_path] {
        manifest.artifact(p);
    }
    manifest.finish(&a.out.join("run.json")).map_err(fail(EXIT_TRAINING))
}

fn evaluate_cmd(a: &EvaluateArgs) -> CmdResult<()> {
    if a.metrics.is_empty() {
        return Err(usage("no metrics requested; valid metrics: mse, mae, r2, chamfer"));
    }
    let ds = load_dataset(&a.data, EXIT_EVALUATION)?;
    let (name, hp) = if a.model == "ground-truth" {
        ("ground-truth".to_string(), ground_truth_prediction(&ds))
    } else {
        let field = VectorField::load_model(Path::new(&a.model)).map_err(fail(EXIT_EVALUATION))?;
        let hp = predict_test(&field, &ds, &a.solver.config(), a.solver.frame_dt(&ds)).map_err(fail(EXIT_EVALUATION))?;
        (field.variant().name().to_string(), hp)
    };
    let report = evaluate(&hp, ds.manifest.grid, &a.metrics, &name, ds.manifest.system.name(), a.seed)
        .map_err(fail(EXIT_EVALUATION))?;
    write_json(&a.out, &report, EXIT_EVALUATION)
}

fn dataset_pairs(ds: &Dataset, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Vec<f64>> = (0..ds.n_sims()).flat_map(|s| ds.normalized(s)).collect();
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..frames.len());
            let j = rng.random_range(0..frames.len());
            (frames[i].clone(), frames[j].clone())
        })
        .collect()
}

fn certify_cmd(a: &CertifyArgs) -> CmdResult<()> {
    let mut manifest = RunManifest::start("certify", a, Some(a.seed));
    let cert = fail(EXIT_CERTIFICATION);
    let field = VectorField::load_model(&a.model).map_err(&cert)?;
    let mats = field.csode_matrices().ok_or_else(|| Failure {
        code: EXIT_CERTIFICATION,
        message: format!("certification needs a csode model, got {}", field.variant()),
    })?;
    let n = field.n();
    if a.search_scalar && n > SEARCH_MAX_DIM {
        return Err(Failure {
            code: EXIT_CERTIFICATION,
            message: format!(
                "--search-scalar handles state dimension up to {SEARCH_MAX_DIM}, model has {n}; supply --candidate"
            ),
        });
    }
    let dims: Vec<usize> = mats.subnets.iter().map(|(_, w, _)| w.rows()).collect();
    let grid = default_grid();
    let per_subnet: Vec<_> = mats
        .subnets
        .iter()
        .map(|(_, _, f)| {
            json!({
                "activation": f,
                "assumption1": check_assumption1(*f, &grid),
                "assumption2": check_assumption2(*f, &grid),
                "class": classify_activation(*f),
            })
        })
        .collect();
    let cls = ActivationClassification::of_model(&mats);
    let activation = field.spec().activation;
    let bounds = sector_bounds_for(activation, &dims);
    let assumption3 = match &bounds {
        Some(b) if a.samples > 0 => {
            let pairs = match &a.data {
                Some(dir) => dataset_pairs(&load_dataset(dir, EXIT_CERTIFICATION)?, a.samples, a.seed),
                None => gaussian_pairs(n, a.samples, a.seed),
            };
            let rep = sample_check_assumption3(&mats, b, &pairs).map_err(&cert)?;
            Some(json!({
                "satisfiability_ratio": rep.ratio,
                "n_samples": rep.n_samples,
                "satisfied": rep.satisfied,
                "worst_violation": rep.worst_violation,
            }))
        }
        _ => None,
    };
    let candidate = match (&a.candidate, a.search_scalar) {
        (Some(path), _) => Some(CertificateCandidate::load_json(path).map_err(&cert)?),
        (None, true) => {
            let b = bounds.as_ref().ok_or_else(|| Failure {
                code: EXIT_CERTIFICATION,
                message: format!("no sector bounds known for activation {activation}"),
            })?;
            search_certificate(&mats, b, &cls, a.tol).map_err(&cert)?
        }
        (None, false) => None,
    };
    let searched = a.candidate.is_some() || a.search_scalar;
    let (certificate, violation, conditions) = match (&candidate, &bounds) {
        (Some(c), Some(b)) => {
            let lmis = assemble_lmis(&mats, c, b, &cls).map_err(&cert)?;
            let rep = verify_certificate(&lmis, a.tol).map_err(&cert)?;
            let status = if rep.verdict.certified() { "Certified" } else { "Violated" };
            (status, serde_json::to_value(&rep.verdict).ok(), serde_json::to_value(&rep.conditions).ok())
        }
        (Some(_), None) => {
            return Err(Failure {
                code: EXIT_CERTIFICATION,
                message: format!("no sector bounds known for activation {activation}"),
            })
        }
        (None, _) if searched => ("NotFound", None, None),
        (None, _) => ("NotChecked", None, None),
    };
    let solver = SolverConfig::rk4(a.dt);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let mut draw = || -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut traces = Vec::with_capacity(a.pairs);
    let mut all_contract = true;
    let mut all_monotone = true;
    for _ in 0..a.pairs {
        let (x0, y0) = (draw(), draw());
        let cand = if certificate == "Certified" { candidate.as_ref() } else { None };
        let rep = empirical_contraction(&field, &x0, &y0, a.t_end, 201, &solver, cand).map_err(&cert)?;
        all_contract &= rep.verdict == Contraction::Contracting;
        all_monotone &= rep.v_tilde_non_increasing.unwrap_or(true);
        traces.push(json!({
            "initial_norm": rep.xi_norms[0],
            "final_norm": rep.xi_norms[rep.xi_norms.len() - 1],
            "longest_growth": rep.longest_growth,
            "verdict": rep.verdict,
            "v_tilde_non_increasing": rep.v_tilde_non_increasing,
        }));
    }
    let contraction = if all_contract { "Contracting" } else { "NotContracting" };
    let report = json!({
        "model": field.variant().name(),
        "n": n,
        "subnets": dims,
        "assumptions": { "per_subnet": per_subnet, "omega": cls.omega, "zeta": cls.zeta },
        "assumption3": assumption3,
        "certificate": certificate,
        "violation": violation,
        "conditions": conditions,
        "candidate": candidate,
        "contraction": contraction,
        "v_tilde_non_increasing": if certificate == "Certified" { Some(all_monotone) } else { None },
        "contraction_pairs": traces,
    });
    write_json(&a.out, &report, EXIT_CERTIFICATION)?;
    manifest.artifact(a.out.clone());
    let run_path = a.out.with_extension("run.json");
    manifest.finish(&run_path).map_err(cert)
}

fn scale_cmd(a: &ScaleArgs) -> CmdResult<()> {
    let mut manifest = RunManifest::start("scale", a, Some(a.seed));
    if a.widths.contains(&0) || a.subnets.contains(&0) {
        return Err(usage("widths and subnet counts must be at least 1"));
    }
    let ds = load_dataset(&a.data, EXIT_USAGE)?;
    let base = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        solver: a.solver.config(),
        seed: a.seed,
        frame_dt: a.solver.frame_dt(&ds),
        ..TrainConfig::default()
    };
    let rows = run_scaling_study(&ds, &a.widths, &a.subnets, a.k, &base).map_err(fail(EXIT_TRAINING))?;
    create_dir(&a.out, EXIT_TRAINING)?;
    for r in &rows {
        let path = a.out.join(format!("history_W{}_N{}.csv", r.width, r.subnets));
        write_text(&path, &history_csv(&r.history), EXIT_TRAINING)?;
        manifest.artifact(path);
    }
    let summary = a.out.join("summary.csv");
    write_text(&summary, &scaling_csv(&rows), EXIT_TRAINING)?;
    manifest.artifact(summary);
    manifest.finish(&a.out.join("run.json")).map_err(fail(EXIT_TRAINING))
}
