mod common;


use csode::dynamics::{ArchSpec, VectorField};
use csode::nets::{Activation, ParamStore};
use csode::simulators::{DatasetManifest, Dataset, Normalization, System, WindowSpec};
use csode::tensor::{Tape, Tensor};
use csode::training::{
    ground_truth_prediction, history_csv, mae_loss, mse_loss, predict_test, run_scaling_study, scaling_csv,
    scaling_lr, train, Adam, ObservedData, TrainConfig,
};
use csode::Error;
use proptest::prelude::*;

fn losses(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let tape = Tape::new();
    let p = tape.constant(vec![pred.len()], pred.to_vec()).unwrap();
    let t = tape.constant(vec![target.len()], target.to_vec()).unwrap();
    (mse_loss(p, t).unwrap().item(), mae_loss(p, t).unwrap().item())
}

#[test]
fn loss_hand_values() {
    assert_eq!(losses(&[1.0, 2.0], &[0.0, 0.0]), (2.5, 1.5));
    assert_eq!(losses(&[0.3, -0.7], &[0.3, -0.7]), (0.0, 0.0));
}

#[test]
fn loss_rejects_shape_mismatch() {
    let tape = Tape::new();
    let p = tape.constant(vec![2], vec![0.0; 2]).unwrap();
    let t = tape.constant(vec![3], vec![0.0; 3]).unwrap();
    assert!(matches!(mse_loss(p, t), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(mae_loss(p, t), Err(Error::ShapeMismatch { .. })));
}

proptest! {
    #[test]
    fn loss_homogeneity(v in prop::collection::vec(-3.0f64..3.0, 1..20), c in -4.0f64..4.0) {
        let zeros = vec![0.0; v.len()];
        let (mse, mae) = losses(&v, &zeros);
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let (mse_c, mae_c) = losses(&scaled, &zeros);
        prop_assert!((mse_c - c * c * mse).abs() <= 1e-12 * (1.0 + mse_c.abs()));
        prop_assert!((mae_c - c.abs() * mae).abs() <= 1e-12 * (1.0 + mae_c.abs()));
    }
}

fn scalar_store(p: f64) -> ParamStore {
    let mut store = ParamStore::new();
    store.add("p", Tensor::vector(vec![p]).with_grad()).unwrap();
    store
}

fn set_grad(store: &mut ParamStore, g: f64) {
    store.zero_grad();
    store.tensors_mut()[0].accumulate_grad(&[g]).unwrap();
}

#[test]
fn adam_first_step_is_minus_lr() {
    let lr = 1e-3;
    let mut store = scalar_store(0.0);
    let mut adam = Adam::new(lr);
    set_grad(&mut store, 1.0);
    adam.step(&mut store);
    let expected = -lr * 1.0 / (1.0 + 1e-8);
    assert!((store.flat()[0] - expected).abs() < 1e-18);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut store = scalar_store(0.7);
    let mut adam = Adam::new(0.1);
    for _ in 0..50 {
        set_grad(&mut store, 0.0);
        adam.step(&mut store);
    }
    assert_eq!(store.flat(), vec![0.7]);
}

#[test]
fn adam_quadratic_bowl_decreases() {
    let mut store = scalar_store(1.0);
    let mut adam = Adam::new(0.01);
    let mut prev = 1.0;
    for _ in 0..100 {
        let p = store.flat()[0];
        set_grad(&mut store, 2.0 * p);
        adam.step(&mut store);
        let p = store.flat()[0];
        assert!(p * p < prev);
        prev = p * p;
    }
}

#[test]
fn scaling_lr_values() {
    let lr = scaling_lr(0.1, 1024, 3);
    assert!((lr - 0.1 / (1024.0 * 3f64.sqrt())).abs() < 1e-20);
    assert!((lr - 5.638e-5).abs() < 5e-9);
    assert_eq!(scaling_lr(0.3, 64, 1), 0.3 / 64.0);
    assert!((scaling_lr(0.1, 256, 2) - 2.0 * scaling_lr(0.1, 512, 2)).abs() < 1e-20);
}

/// Samples of the flow of a damped rotation, `x_{k+1} = 0.98 R(0.1) x_k`.
fn linear_dataset(n_sims: usize, n_frames: usize, windows: WindowSpec) -> Dataset {
    let (c, s) = (0.1f64.cos() * 0.98, 0.1f64.sin() * 0.98);
    let trajectories: Vec<Vec<Vec<f64>>> = (0..n_sims)
        .map(|i| {
            let angle = i as f64 * 1.3;
            let mut x = vec![angle.cos(), angle.sin()];
            let mut frames = Vec::with_capacity(n_frames);
            for _ in 0..n_frames {
                frames.push(x.clone());
                x = vec![c * x[0] - s * x[1], s * x[0] + c * x[1]];
            }
            frames
        })
        .collect();
    Dataset {
        manifest: DatasetManifest {
            system: System::Spiral,
            seed: 0,
            params: serde_json::Value::Null,
            simulations: Vec::new(),
            sample_interval: 1.0,
            n_frames,
            state_dim: 2,
            grid: None,
            channels: vec!["x".into(), "y".into()],
            normalization: Normalization::identity(2, 1),
            windows,
            note: String::new(),
        },
        trajectories,
    }
}

fn small_windows() -> WindowSpec {
    WindowSpec {
        n_obs: 30,
        window: 10,
        stride: 5,
        horizon: 10,
        test_start: 29,
    }
}

fn linear_node(seed: u64) -> VectorField {
    let mut spec = ArchSpec::node(2, vec![8]).with_seed(seed);
    spec.hidden_activation = Activation::Identity;
    VectorField::new(spec).unwrap()
}

#[test]
fn zero_epochs_returns_initial_model() {
    let ds = linear_dataset(3, 40, small_windows());
    let field = linear_node(1);
    let before = field.params().flat();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let out = train(field, &ds, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.field.params().flat(), before);
    assert_eq!(history_csv(&out.history), "epoch,train_loss,val_loss\n");
}

#[test]
fn validation_split_is_last_windows_per_simulation() {
    let ds = linear_dataset(3, 40, small_windows());
    let data = ObservedData::from_dataset(&ds, 0.1).unwrap();
    // starts 0,5,...,20: five windows, ceil(0.5) = 1 held out per simulation
    assert_eq!(data.train.len(), 12);
    assert_eq!(data.val.len(), 3);
    assert!(data.val.iter().all(|w| w.start == 20));
    assert!(data.frames.iter().all(|f| f.len() == 30));
}

#[test]
fn linear_teacher_is_learned() {
    let ds = linear_dataset(4, 40, small_windows());
    let cfg = TrainConfig {
        epochs: 500,
        lr: 1e-2,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(linear_node(3), &ds, &cfg).unwrap();
    let last = out.history.last().unwrap();
    assert_eq!(out.history.len(), 500);
    assert!(last.train_loss < 1e-3, "final train loss {}", last.train_loss);
    assert!(last.val_loss.unwrap() < 1e-3);
    assert!(out.history[0].train_loss > last.train_loss);
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let ds = linear_dataset(4, 40, small_windows());
    let cfg = TrainConfig {
        epochs: 5,
        lr: 1e-2,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(linear_node(5), &ds, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.history, b.history);
    assert_eq!(a.field.params().flat(), b.field.params().flat());
}

#[test]
fn held_out_frames_never_reach_training() {
    let ds = linear_dataset(3, 40, small_windows());
    let mut poisoned = ds.clone();
    for traj in &mut poisoned.trajectories {
        for frame in &mut traj[30..] {
            frame.iter_mut().for_each(|v| *v = f64::NAN);
        }
    }
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e-2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let a = train(linear_node(2), &ds, &cfg).unwrap();
    let b = train(linear_node(2), &poisoned, &cfg).unwrap();
    assert_eq!(a.history, b.history);
}

#[test]
fn diverging_model_reports_epoch() {
    let ds = linear_dataset(2, 40, small_windows());
    let mut field = linear_node(0);
    let names: Vec<String> = field.params().iter().map(|(_, n, _)| n.to_string()).collect();
    for name in names {
        let len = field.params().get(field.params().id_of(&name).unwrap()).numel();
        field.set_param(&name, &vec![1e200; len]).unwrap();
    }
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    assert!(matches!(train(field, &ds, &cfg), Err(Error::NonFiniteLoss { epoch: 1 })));
}

#[test]
fn rejects_mismatched_state_dimension() {
    let ds = linear_dataset(2, 40, small_windows());
    let field = VectorField::new(ArchSpec::node(3, vec![4])).unwrap();
    assert!(matches!(
        train(field, &ds, &TrainConfig::default()),
        Err(Error::LayoutMismatch(_))
    ));
}

#[test]
fn test_prediction_covers_horizon() {
    let ds = linear_dataset(3, 40, small_windows());
    let gt = ground_truth_prediction(&ds);
    assert_eq!(gt.pred, gt.truth);
    let field = linear_node(4);
    let hp = predict_test(&field, &ds, &csode::solvers::SolverConfig::euler(1.0), 1.0).unwrap();
    assert_eq!(hp.pred.len(), 3);
    assert!(hp.pred.iter().all(|s| s.len() == 10 && s.iter().all(|f| f.len() == 2)));
    assert_eq!(hp.truth, gt.truth);
    assert_eq!(hp.truth[1][0], ds.trajectories[1][30]);
}

#[test]
fn scaling_grid_uses_formula_lr() {
    let ds = linear_dataset(2, 40, small_windows());
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let rows = run_scaling_study(&ds, &[4, 8], &[1, 2], 0.1, &cfg).unwrap();
    assert_eq!(rows.len(), 4);
    let cells: Vec<(usize, usize)> = rows.iter().map(|r| (r.width, r.subnets)).collect();
    assert_eq!(cells, vec![(4, 1), (4, 2), (8, 1), (8, 2)]);
    for r in &rows {
        assert_eq!(r.lr, scaling_lr(0.1, r.width, r.subnets));
        assert_eq!(r.history.len(), 2);
        assert!(r.final_train.is_finite());
    }
    assert_eq!(scaling_csv(&rows).lines().count(), 5);
}

#[test]
fn full_batch_small_lr_loss_is_non_increasing() {
    let ds = linear_dataset(4, 40, small_windows());
    let cfg = TrainConfig {
        epochs: 200,
        lr: 1e-3,
        batch_size: 1024,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(linear_node(6), &ds, &cfg).unwrap();
    for pair in out.history.windows(2) {
        assert!(pair[1].train_loss <= pair[0].train_loss, "{pair:?}");
    }
}
