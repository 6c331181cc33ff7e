mod common;

use csode::nets::{uniform_fan_in, Activation, Conv2d, Dense, Mlp, ParamStore};
use csode::tensor::{Tape, Var};
use proptest::prelude::*;

fn record<'t>(store: &ParamStore, tape: &'t Tape) -> Vec<Var<'t>> {
    store.record(tape)
}

#[test]
fn identity_dense_layer_passes_input_through() {
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "d", 3, 3, Activation::Identity, true, &mut common::rng(0)).unwrap();
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    store.get_mut(layer.weight).data_mut().copy_from_slice(&eye);
    let tape = Tape::new();
    let params = record(&store, &tape);
    let x = tape.constant(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
    assert_eq!(layer.forward(&params, x).unwrap().to_vec(), x.to_vec());
}

#[test]
fn dense_rejects_wrong_input_width() {
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut store, "d", 3, 2, Activation::Tanh, true, &mut common::rng(0)).unwrap();
    let tape = Tape::new();
    let params = record(&store, &tape);
    let x = tape.constant(vec![1, 4], vec![0.0; 4]).unwrap();
    assert!(layer.forward(&params, x).is_err());
}

fn conv_layer(k: usize, in_ch: usize, out_ch: usize) -> (ParamStore, Conv2d) {
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "c", in_ch, out_ch, k, Activation::Identity, &mut common::rng(3)).unwrap();
    (store, conv)
}

#[test]
fn unit_kernel_conv_adds_bias() {
    let (mut store, conv) = conv_layer(1, 1, 1);
    store.get_mut(conv.kernel).data_mut()[0] = 1.0;
    store.get_mut(conv.bias).data_mut()[0] = 0.25;
    let tape = Tape::new();
    let params = record(&store, &tape);
    let field: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
    let x = tape.constant(vec![1, 12], field.clone()).unwrap();
    let y = conv.forward(&params, x, 3, 4).unwrap().to_vec();
    for (a, b) in y.iter().zip(&field) {
        assert!((a - (b + 0.25)).abs() < 1e-15);
    }
}

#[test]
fn averaging_kernel_keeps_constant_field() {
    let (mut store, conv) = conv_layer(3, 1, 1);
    store.get_mut(conv.kernel).data_mut().fill(1.0 / 9.0);
    let tape = Tape::new();
    let params = record(&store, &tape);
    let x = tape.constant(vec![1, 20], vec![0.7; 20]).unwrap();
    for v in conv.forward(&params, x, 4, 5).unwrap().to_vec() {
        assert!((v - 0.7).abs() < 1e-15);
    }
}

#[test]
fn even_kernel_rejected() {
    let mut store = ParamStore::new();
    assert!(Conv2d::new(&mut store, "c", 1, 1, 2, Activation::Identity, &mut common::rng(0)).is_err());
}

#[test]
fn init_is_seed_deterministic_and_bounded() {
    let a = uniform_fan_in(&mut common::rng(5), vec![8, 4], 4);
    let b = uniform_fan_in(&mut common::rng(5), vec![8, 4], 4);
    assert_eq!(a, b);
    assert!(a.data().iter().all(|w| w.abs() <= 0.5));
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[4, 6, 2], Activation::Tanh, &mut common::rng(1)).unwrap();
    for layer in &mlp.layers {
        assert!(store.get(layer.bias.unwrap()).data().iter().all(|&b| b == 0.0));
    }
}

#[test]
fn init_mean_is_near_zero() {
    let t = uniform_fan_in(&mut common::rng(11), vec![10_000], 4);
    let mean = t.data().iter().sum::<f64>() / 1e4;
    // Uniform(-0.5, 0.5) has sd 1/sqrt(12); the mean of 1e4 draws has sd ~0.00289.
    let sigma = (1.0f64 / 12.0).sqrt() / 100.0;
    assert!(mean.abs() < 3.0 * sigma, "{mean}");
}

#[test]
fn parameter_counts() {
    let mut store = ParamStore::new();
    let d = Dense::new(&mut store, "d", 3, 5, Activation::Tanh, true, &mut common::rng(0)).unwrap();
    assert_eq!(d.param_count(), 20);
    assert_eq!(store.count(), 20);
    let expected = 3 * 1024 + 1024 + 1024 * 1024 + 1024 + 1024 * 3 + 3;
    assert_eq!(Mlp::count_for(&[3, 1024, 1024, 3]), expected);
    assert_eq!(expected, 1_056_771);
    assert_eq!(ParamStore::new().count(), 0);
}

#[test]
fn parameter_counts_are_additive() {
    let mut store = ParamStore::new();
    let a = Mlp::new(&mut store, "a", &[3, 7, 2], Activation::Tanh, &mut common::rng(0)).unwrap();
    let b = Mlp::new(&mut store, "b", &[2, 4], Activation::Tanh, &mut common::rng(0)).unwrap();
    assert_eq!(store.count(), a.param_count() + b.param_count());
    assert_eq!(a.param_count(), Mlp::count_for(&[3, 7, 2]));
}

#[test]
fn weight_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let mut store = ParamStore::new();
    Mlp::new(&mut store, "m", &[3, 5, 2], Activation::Tanh, &mut common::rng(9)).unwrap();
    store.save_json(&path).unwrap();
    let mut other = ParamStore::new();
    Mlp::new(&mut other, "m", &[3, 5, 2], Activation::Tanh, &mut common::rng(10)).unwrap();
    assert_ne!(other.flat(), store.flat());
    other.load_json(&path).unwrap();
    assert_eq!(other.flat(), store.flat());

    let mut wrong = ParamStore::new();
    Mlp::new(&mut wrong, "m", &[3, 6, 2], Activation::Tanh, &mut common::rng(9)).unwrap();
    assert!(matches!(wrong.load_json(&path), Err(csode::Error::LayoutMismatch(_))));
}

#[test]
fn activation_names_roundtrip() {
    for a in [
        Activation::Tanh,
        Activation::Relu,
        Activation::Softplus,
        Activation::SoftplusCentered,
        Activation::Sigmoid,
        Activation::Identity,
        Activation::PRelu(0.1),
    ] {
        assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
    }
    assert!("swish".parse::<Activation>().is_err());
}

proptest! {
    #[test]
    fn periodic_conv_commutes_with_cyclic_shift(seed in 0u64..500, di in 0usize..4, dj in 0usize..5) {
        let (h, w) = (4usize, 5usize);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 2, 3, 3, Activation::Tanh, &mut common::rng(seed)).unwrap();
        let field = common::uniform(&mut common::rng(seed + 1), 2 * h * w, -1.0, 1.0);
        let shift = |f: &[f64], ch: usize| -> Vec<f64> {
            let mut out = vec![0.0; f.len()];
            for c in 0..ch {
                for i in 0..h {
                    for j in 0..w {
                        out[c * h * w + ((i + di) % h) * w + (j + dj) % w] = f[c * h * w + i * w + j];
                    }
                }
            }
            out
        };
        let tape = Tape::new();
        let params = store.record(&tape);
        let run = |f: Vec<f64>| -> Vec<f64> {
            let x = tape.constant(vec![1, 2 * h * w], f).unwrap();
            conv.forward(&params, x, h, w).unwrap().to_vec()
        };
        let a = shift(&run(field.clone()), 3);
        let b = run(shift(&field, 2));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-14);
        }
    }
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", &[3, 4, 2], Activation::Tanh, &mut common::rng(2)).unwrap();
    let x = common::uniform(&mut common::rng(3), 6, -2.0, 2.0);
    let loss_at = |s: &ParamStore| -> f64 {
        let tape = Tape::new();
        let p = s.record_constant(&tape);
        let xv = tape.constant(vec![2, 3], x.clone()).unwrap();
        mlp.forward(&p, xv).unwrap().square().mean().item()
    };
    let tape = Tape::new();
    let p = store.record(&tape);
    let xv = tape.constant(vec![2, 3], x.clone()).unwrap();
    let loss = mlp.forward(&p, xv).unwrap().square().mean();
    let g = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = p.iter().flat_map(|v: &Var| g.wrt(*v)).collect();
    let base = store.flat();
    let mut fd = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut s = store.clone();
        let mut v = base.clone();
        v[i] += 1e-5;
        s.set_flat(&v).unwrap();
        let up = loss_at(&s);
        v[i] -= 2e-5;
        s.set_flat(&v).unwrap();
        fd[i] = (up - loss_at(&s)) / 2e-5;
    }
    assert!(common::rel_l2(&analytic, &fd) < 1e-5);
}
