mod common;

use common::{gradcheck, rng, uniform};
use csode::tensor::{symmetric_eigen, symmetric_eigenvalues, Conv2dGeometry, Matrix, Tape, Tensor, Var};
use csode::Error;
use proptest::prelude::*;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random(seed: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    t(shape, uniform(&mut rng(seed), n, -2.0, 2.0))
}

/// Weighted sum so that every output element gets a distinct cotangent.
fn weighted<'t>(tape: &'t Tape, y: Var<'t>) -> Var<'t> {
    let n = y.numel();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let w = tape.constant(y.shape(), w).unwrap();
    y.mul(w).unwrap().sum()
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(matches!(
        Tensor::new(vec![2, 3], vec![0.0; 5]),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(7);
    let a: Vec<f64> = (0..12).map(|_| (rand::Rng::random_range(&mut r, -9..10)) as f64).collect();
    let b: Vec<f64> = (0..8).map(|_| (rand::Rng::random_range(&mut r, -9..10)) as f64).collect();
    let tape = Tape::new();
    let av = tape.constant(vec![3, 4], a.clone()).unwrap();
    let bv = tape.constant(vec![4, 2], b.clone()).unwrap();
    let c = av.matmul(bv).unwrap().to_vec();
    let mut naive = vec![0.0; 6];
    for i in 0..3 {
        for j in 0..2 {
            for k in 0..4 {
                naive[i * 2 + j] += a[i * 4 + k] * b[k * 2 + j];
            }
        }
    }
    assert_eq!(c, naive);

    // real-valued entries agree to rounding
    let a = uniform(&mut r, 12, -2.0, 2.0);
    let b = uniform(&mut r, 8, -2.0, 2.0);
    let av = tape.constant(vec![3, 4], a.clone()).unwrap();
    let bv = tape.constant(vec![4, 2], b.clone()).unwrap();
    let c = av.matmul(bv).unwrap().to_vec();
    for i in 0..3 {
        for j in 0..2 {
            let s: f64 = (0..4).map(|k| a[i * 4 + k] * b[k * 2 + j]).sum();
            assert!((c[i * 2 + j] - s).abs() < 1e-14);
        }
    }
}

#[test]
fn matmul_bt_equals_matmul_with_transpose() {
    let tape = Tape::new();
    let a = random(1, &[3, 4]);
    let b = random(2, &[5, 4]);
    let mut bt = vec![0.0; 20];
    for i in 0..5 {
        for j in 0..4 {
            bt[j * 5 + i] = b.data()[i * 4 + j];
        }
    }
    let x = tape.leaf(&a).matmul_bt(tape.leaf(&b)).unwrap().to_vec();
    let y = tape
        .leaf(&a)
        .matmul(tape.constant(vec![4, 5], bt).unwrap())
        .unwrap()
        .to_vec();
    for (u, v) in x.iter().zip(&y) {
        assert!((u - v).abs() < 1e-14);
    }
}

#[test]
fn gradcheck_elementwise_ops() {
    let a = random(10, &[3, 4]);
    let b = random(11, &[3, 4]);
    let ins = [a, b];
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].add(v[1]).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].sub(v[1]).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].mul(v[1]).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].scale(-1.7))) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].add_scalar(0.4))) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].lincomb(&[(0.5, v[1]), (-2.0, v[0])]).unwrap())) < 1e-5);
}

#[test]
fn gradcheck_activations() {
    let x = [random(20, &[2, 5])];
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].tanh())) < 1e-5);
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].relu())) < 1e-5);
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].prelu(0.1))) < 1e-5);
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].softplus())) < 1e-5);
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].sigmoid())) < 1e-5);
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].logcosh())) < 1e-5);
    assert!(gradcheck(&x, |tp, v| weighted(tp, v[0].abs())) < 1e-5);
    assert!(gradcheck(&x, |_, v| v[0].tanh().mean()) < 1e-5);
}

#[test]
fn gradcheck_matrix_ops() {
    let ins = [random(30, &[3, 4]), random(31, &[4, 2]), random(32, &[5, 4]), random(33, &[4])];
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].matmul(v[1]).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].matmul_bt(v[2]).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].add_row(v[3]).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].slice_cols(1, 3).unwrap())) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| {
        let y = Var::concat_cols(&[v[0], v[0].tanh()]).unwrap();
        weighted(tp, y)
    }) < 1e-5);
    assert!(gradcheck(&ins, |tp, v| weighted(tp, v[0].reshape(vec![2, 6]).unwrap())) < 1e-5);
}

#[test]
fn gradcheck_composite_through_shared_nodes() {
    let ins = [random(40, &[2, 3]), random(41, &[3, 3])];
    let err = gradcheck(&ins, |_, v| {
        let h = v[0].matmul_bt(v[1]).unwrap().tanh();
        let h2 = h.matmul(v[1]).unwrap().add(h).unwrap();
        h2.mul(h2).unwrap().mean()
    });
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gradcheck_periodic_conv() {
    let geom = Conv2dGeometry {
        batch: 2,
        in_ch: 2,
        out_ch: 3,
        height: 4,
        width: 5,
        kh: 3,
        kw: 3,
    };
    let ins = [random(50, &[2, 40]), random(51, &[3, 2, 3, 3]), random(52, &[3])];
    let err = gradcheck(&ins, |tp, v| weighted(tp, v[0].conv2d_periodic(v[1], v[2], geom).unwrap()));
    assert!(err < 1e-5, "{err}");
}

#[test]
fn periodic_conv_matches_direct_sum() {
    let geom = Conv2dGeometry {
        batch: 2,
        in_ch: 2,
        out_ch: 3,
        height: 4,
        width: 5,
        kh: 3,
        kw: 3,
    };
    let (x, k, b) = (random(70, &[2, 40]), random(71, &[3, 2, 3, 3]), random(72, &[3]));
    let tape = Tape::new();
    let y = tape
        .leaf(&x)
        .conv2d_periodic(tape.leaf(&k), tape.leaf(&b), geom)
        .unwrap()
        .to_vec();
    let (h, w) = (4i64, 5i64);
    for n in 0..2 {
        for o in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = b.data()[o];
                    for c in 0..2 {
                        for di in 0..3i64 {
                            for dj in 0..3i64 {
                                let si = (i + di - 1).rem_euclid(h);
                                let sj = (j + dj - 1).rem_euclid(w);
                                let kv = k.data()[((o * 2 + c) * 3 + di as usize) * 3 + dj as usize];
                                acc += kv * x.data()[n * 40 + c * 20 + (si * w + sj) as usize];
                            }
                        }
                    }
                    let got = y[n * 60 + o * 20 + (i * w + j) as usize];
                    assert!((got - acc).abs() < 1e-12, "({n},{o},{i},{j}): {got} vs {acc}");
                }
            }
        }
    }
}

#[test]
fn tape_gradients_are_bit_identical_across_runs() {
    let run = || {
        let x = random(60, &[4, 3]).with_grad();
        let w = random(61, &[5, 3]).with_grad();
        let tape = Tape::new();
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let loss = xv.matmul_bt(wv).unwrap().tanh().square().sum();
        let g = tape.backward(loss).unwrap();
        (g.wrt(xv), g.wrt(wv))
    };
    assert_eq!(run(), run());
}

/// Number of eigenvalues below `sigma` from the inertia of `A - sigma I`
/// (signs of the LDL^T pivots).
fn count_below(a: &Matrix, sigma: f64) -> usize {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = a.to_rows();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] -= sigma;
    }
    let mut neg = 0;
    for k in 0..n {
        let mut piv = m[k][k];
        if piv == 0.0 {
            piv = 1e-300;
        }
        if piv < 0.0 {
            neg += 1;
        }
        for i in (k + 1)..n {
            let f = m[i][k] / piv;
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    neg
}

fn bisection_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let bound = a.frobenius() + 1.0;
    (0..n)
        .map(|k| {
            let (mut lo, mut hi) = (-bound, bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(a, mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

fn random_symmetric(seed: u64, n: usize) -> Matrix {
    let vals = uniform(&mut rng(seed), n * n, -1.0, 1.0);
    let m = Matrix::from_vec(n, n, vals).unwrap();
    m.sym().unwrap()
}

#[test]
fn eigenvalues_known_cases() {
    assert_eq!(symmetric_eigenvalues(&Matrix::from_diag(&[3.0, 1.0, 2.0])).unwrap(), vec![1.0, 2.0, 3.0]);
    let swap = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let ev = symmetric_eigenvalues(&swap).unwrap();
    assert!((ev[0] + 1.0).abs() < 1e-15 && (ev[1] - 1.0).abs() < 1e-15);
}

#[test]
fn eigenvalues_match_bisection_oracle() {
    for seed in 0..5 {
        let a = random_symmetric(100 + seed, 6);
        let jac = symmetric_eigenvalues(&a).unwrap();
        let oracle = bisection_eigenvalues(&a);
        for (x, y) in jac.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-8, "seed {seed}: {jac:?} vs {oracle:?}");
        }
    }
}

fn reconstruction_error(a: &Matrix) -> f64 {
    let e = symmetric_eigen(a).unwrap();
    let lam = Matrix::from_diag(&e.values);
    let rec = e.vectors.matmul(&lam).unwrap().matmul(&e.vectors.transpose()).unwrap();
    rec.sub(a).unwrap().frobenius() / a.frobenius().max(1e-300)
}

proptest! {
    #[test]
    fn eigen_reconstruction_and_order(seed in 0u64..10_000, n in 1usize..9) {
        let a = random_symmetric(seed, n);
        let e = symmetric_eigen(&a).unwrap();
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(e.values.iter().all(|v| v.is_finite()));
        prop_assert!(reconstruction_error(&a) < 1e-10);
    }

    #[test]
    fn gradcheck_random_mlp_layer(seed in 0u64..1000) {
        let ins = [random(seed, &[3, 4]), random(seed + 1, &[2, 4]), random(seed + 2, &[2])];
        let err = gradcheck(&ins, |tp, v| {
            weighted(tp, v[0].matmul_bt(v[1]).unwrap().add_row(v[2]).unwrap().tanh())
        });
        prop_assert!(err < 1e-5);
    }
}
