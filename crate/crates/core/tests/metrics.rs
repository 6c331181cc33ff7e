mod common;

use csode::metrics::{
    chamfer_distance, evaluate, field_to_points, mae, mse, r2_score, trajectory_to_points, FieldLifting, Metric,
};
use csode::training::HorizonPrediction;
use csode::Error;
use proptest::prelude::*;
use rand::Rng;

/// Direct double loop over both sets.
fn brute_chamfer(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let directed = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        let mut total = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let mut s = 0.0;
                for k in 0..p.len() {
                    s += (p[k] - q[k]) * (p[k] - q[k]);
                }
                if s.sqrt() < best {
                    best = s.sqrt();
                }
            }
            total += best;
        }
        total / from.len() as f64
    };
    directed(a, b) + directed(b, a)
}

fn random_set(rng: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| common::uniform(rng, d, -2.0, 2.0)).collect()
}

#[test]
fn chamfer_matches_brute_force_on_random_pairs() {
    let mut rng = common::rng(6);
    for _ in 0..100 {
        let d = rng.random_range(1..5);
        let (n, m) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let a = random_set(&mut rng, n, d);
        let b = random_set(&mut rng, m, d);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), brute_chamfer(&a, &b));
    }
}

#[test]
fn chamfer_fixed_examples() {
    let a = vec![vec![0.0, 0.0]];
    let b = vec![vec![1.0, 0.0]];
    assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
    assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
}

#[test]
fn chamfer_errors() {
    let a = vec![vec![0.0, 0.0]];
    assert!(matches!(chamfer_distance(&a, &[]), Err(Error::EmptySet)));
    assert!(matches!(chamfer_distance(&[], &a), Err(Error::EmptySet)));
    assert!(matches!(
        chamfer_distance(&a, &[vec![1.0, 0.0, 0.0]]),
        Err(Error::DimMismatch(_))
    ));
}

proptest! {
    #[test]
    fn chamfer_symmetric_and_nonnegative(seed in 0u64..1000, n in 1usize..20, m in 1usize..20) {
        let mut rng = common::rng(seed);
        let a = random_set(&mut rng, n, 3);
        let b = random_set(&mut rng, m, 3);
        let ab = chamfer_distance(&a, &b).unwrap();
        let ba = chamfer_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn chamfer_invariant_to_point_order(seed in 0u64..1000, n in 2usize..20) {
        let mut rng = common::rng(seed);
        let a = random_set(&mut rng, n, 2);
        let b = random_set(&mut rng, n, 2);
        let mut rev = a.clone();
        rev.reverse();
        let x = chamfer_distance(&a, &b).unwrap();
        let y = chamfer_distance(&rev, &b).unwrap();
        prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
    }
}

#[test]
fn scalar_metrics_hand_values() {
    assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
    assert_eq!(mae(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.5);
    assert_eq!(r2_score(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 0.0);
    assert_eq!(r2_score(&[1.0, -1.0], &[1.0, -1.0]).unwrap(), 1.0);
    let t = [1.0, 2.0, 6.0];
    assert_eq!(r2_score(&[3.0; 3], &t).unwrap(), 0.0);
    // 1 - (0.25 + 0 + 1) / (4 + 1 + 9)
    assert!((r2_score(&[1.5, 2.0, 5.0], &t).unwrap() - (1.0 - 1.25 / 14.0)).abs() < 1e-15);
}

#[test]
fn scalar_metric_errors() {
    assert!(matches!(r2_score(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::ZeroVariance)));
    assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::ShapeMismatch { .. })));
}

proptest! {
    #[test]
    fn r2_at_most_one(p in prop::collection::vec(-5.0f64..5.0, 3), t in prop::collection::vec(-5.0f64..5.0, 3)) {
        prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-3));
        prop_assert!(r2_score(&p, &t).unwrap() <= 1.0);
        prop_assert!(mse(&p, &t).unwrap() >= 0.0 && mae(&p, &t).unwrap() >= 0.0);
    }
}

#[test]
fn lifting_single_cell() {
    let pts = field_to_points(&[vec![0.4]], [1, 1, 1]).unwrap();
    assert_eq!(pts, vec![vec![0.0, 0.0, 0.0, 0.0]]);
}

#[test]
fn lifting_coordinates_and_swaps() {
    // 2x2 grid, one channel, two steps
    let frames = vec![vec![0.0, 1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0, 8.0]];
    let pts = field_to_points(&frames, [1, 2, 2]).unwrap();
    assert_eq!(pts.len(), 8);
    assert_eq!(pts[1], vec![1.0, 0.0, 0.0, 0.125]);
    assert_eq!(pts[7], vec![1.0, 1.0, 1.0, 1.0]);
    let mut swapped = frames.clone();
    swapped[0].swap(0, 3);
    let lifting = FieldLifting::fit(&frames, [1, 2, 2]).unwrap();
    let sp = lifting.lift(&swapped).unwrap();
    assert_eq!(sp[0][3], pts[3][3]);
    assert_eq!(sp[3][3], pts[0][3]);
    assert!(chamfer_distance(&sp, &pts).unwrap() > 0.0);
    assert_eq!(chamfer_distance(&lifting.lift(&frames).unwrap(), &pts).unwrap(), 0.0);
}

#[test]
fn trajectory_points_prepend_time() {
    let pts = trajectory_to_points(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    assert_eq!(pts[1], vec![0.5, 3.0, 4.0]);
}

#[test]
fn metric_names_parse() {
    for m in Metric::ALL {
        assert_eq!(m.name().parse::<Metric>().unwrap(), m);
    }
    let err = "rmse".parse::<Metric>().unwrap_err().to_string();
    assert!(err.contains("mse, mae, r2, chamfer"));
}

#[test]
fn ground_truth_report_is_perfect() {
    let mut rng = common::rng(2);
    let truth: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..4).map(|_| common::uniform(&mut rng, 8, 0.0, 1.0)).collect())
        .collect();
    let hp = HorizonPrediction {
        pred: truth.clone(),
        truth,
    };
    for grid in [Some([2, 2, 2]), None] {
        let r = evaluate(&hp, grid, &Metric::ALL, "gt", "toy", 0).unwrap();
        assert_eq!((r.mse, r.mae, r.r2, r.chamfer), (Some(0.0), Some(0.0), Some(1.0), Some(0.0)));
        assert_eq!(r.per_horizon.len(), 4);
    }
    let partial = evaluate(&hp, None, &[Metric::Mae], "gt", "toy", 0).unwrap();
    assert!(partial.mse.is_none() && partial.mae == Some(0.0));
}

#[test]
fn report_invariant_to_simulation_order() {
    let mut rng = common::rng(3);
    let mut seqs = || -> Vec<Vec<Vec<f64>>> {
        (0..4)
            .map(|_| (0..3).map(|_| common::uniform(&mut rng, 4, 0.0, 1.0)).collect())
            .collect()
    };
    let (pred, truth) = (seqs(), seqs());
    let a = evaluate(&HorizonPrediction { pred: pred.clone(), truth: truth.clone() }, Some([1, 2, 2]), &Metric::ALL, "m", "t", 0).unwrap();
    let (mut pr, mut tr) = (pred, truth);
    pr.reverse();
    tr.reverse();
    let b = evaluate(&HorizonPrediction { pred: pr, truth: tr }, Some([1, 2, 2]), &Metric::ALL, "m", "t", 0).unwrap();
    for (x, y) in [(a.mse, b.mse), (a.mae, b.mae), (a.r2, b.r2), (a.chamfer, b.chamfer)] {
        assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
    }
}
