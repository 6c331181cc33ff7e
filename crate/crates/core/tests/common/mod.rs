#![allow(dead_code)]

use csode::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Worst per-input relative error between tape gradients and central
/// differences with step 1e-5.
pub fn gradcheck<F>(inputs: &[Tensor], f: F) -> f64
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let loss = f(&tape, &leaves);
    let grads = tape.backward(loss).unwrap();
    let eval = |vals: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let leaves: Vec<Var> = vals.iter().map(|t| tape.leaf(t)).collect();
        f(&tape, &leaves).item()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf);
        let mut fd = vec![0.0; analytic.len()];
        for k in 0..fd.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            fd[k] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        worst = worst.max(rel_l2(&analytic, &fd));
    }
    worst
}
