use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::solvers::Trajectory;

/// Noise-free spiral `e^{-0.1 t} (cos t, sin t)`.
pub fn spiral_point(t: f64) -> [f64; 2] {
    let r = (-0.1 * t).exp();
    [r * t.cos(), r * t.sin()]
}

/// Observed and extrapolation parts of the spiral toy problem.
#[derive(Debug, Clone)]
pub struct SpiralData {
    /// Noisy observations on `[0, 4 pi]`.
    pub observed: Trajectory,
    pub clean: Trajectory,
    /// Clean continuation on the same spacing, 25% of the total duration.
    pub extension: Trajectory,
}

pub fn extension_points(n_points: usize) -> usize {
    // total = obs + ext with ext = total / 4, i.e. ext = obs / 3
    (n_points as f64 / 3.0).round() as usize
}

pub fn simulate_spiral(n_points: usize, noise_sd: f64, seed: u64) -> SpiralData {
    let span = 4.0 * std::f64::consts::PI;
    let step = span / (n_points.max(2) - 1) as f64;
    let times: Vec<f64> = (0..n_points).map(|k| k as f64 * step).collect();
    let clean: Vec<Vec<f64>> = times.iter().map(|&t| spiral_point(t).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sd.max(0.0)).expect("finite sd");
    let noisy = clean
        .iter()
        .map(|p| p.iter().map(|v| if noise_sd > 0.0 { v + normal.sample(&mut rng) } else { *v }).collect())
        .collect();
    let n_ext = extension_points(n_points);
    let ext_times: Vec<f64> = (1..=n_ext).map(|k| span + k as f64 * step).collect();
    let ext = ext_times.iter().map(|&t| spiral_point(t).to_vec()).collect();
    let layout = vec!["x".to_string(), "y".to_string()];
    let mk = |times: Vec<f64>, states| Trajectory {
        times,
        states,
        layout: layout.clone(),
        accepted_steps: 0,
        rejected_steps: 0,
    };
    SpiralData {
        observed: mk(times.clone(), noisy),
        clean: mk(times, clean),
        extension: mk(ext_times, ext),
    }
}
