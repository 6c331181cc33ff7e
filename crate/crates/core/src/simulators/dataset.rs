use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gray_scott::{gray_scott_initial, simulate_gray_scott_from, GrayScottConfig, GrayScottParams};
use super::hr::{simulate_hr, HrConfig, HrParams};
use super::shallow_water::{random_bump, simulate_shallow_water_from, ShallowWaterConfig, ShallowWaterParams};
use super::spiral::simulate_spiral;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Hr,
    GrayScott,
    ShallowWater,
    Spiral,
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::Hr => "hr",
            System::GrayScott => "gray-scott",
            System::ShallowWater => "shallow-water",
            System::Spiral => "spiral",
        }
    }
}

impl std::str::FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [System::Hr, System::GrayScott, System::ShallowWater, System::Spiral]
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown system {s}")))
    }
}

/// How trajectories are cut into training windows and the held-out horizon.
///
/// Frames `0..n_obs` form the observation portion; training windows of
/// `window` frames start every `stride` frames inside it. The test rollout
/// starts from frame `test_start` and is scored on frames
/// `n_obs..n_obs + horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub n_obs: usize,
    pub window: usize,
    pub stride: usize,
    pub horizon: usize,
    pub test_start: usize,
}

impl WindowSpec {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.window < 2 || self.window > self.n_obs || self.n_obs + self.horizon > n_frames {
            return Err(Error::WindowTooLong {
                window: self.window,
                horizon: self.horizon,
                available: n_frames,
            });
        }
        if self.stride == 0 || self.test_start >= self.n_obs {
            return Err(Error::InvalidConfig(format!("invalid window spec {self:?}")));
        }
        Ok(())
    }

    /// Start frames of the training windows.
    pub fn starts(&self) -> Vec<usize> {
        (0..)
            .map(|k| k * self.stride)
            .take_while(|s| s + self.window <= self.n_obs)
            .collect()
    }

    pub fn test_frames(&self) -> std::ops::Range<usize> {
        self.n_obs..self.n_obs + self.horizon
    }
}

/// Per-channel affine map to `[0, 1]`; a channel spans `channel_size`
/// consecutive state entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kind: String,
    pub channel_size: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize, channel_size: usize) -> Self {
        Normalization {
            kind: "identity".into(),
            channel_size,
            min: vec![0.0; channels],
            max: vec![1.0; channels],
        }
    }

    /// Fits min/max per channel over the given frames.
    pub fn fit<'a>(frames: impl Iterator<Item = &'a Vec<f64>>, channels: usize, channel_size: usize) -> Self {
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for frame in frames {
            for (i, &v) in frame.iter().enumerate() {
                let c = i / channel_size;
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Normalization {
            kind: "minmax".into(),
            channel_size,
            min,
            max,
        }
    }

    fn scale(&self, c: usize) -> f64 {
        let s = self.max[c] - self.min[c];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / self.channel_size;
                (v - self.min[c]) / self.scale(c)
            })
            .collect()
    }

    pub fn denormalize(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / self.channel_size;
                v * self.scale(c) + self.min[c]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub index: usize,
    pub seed: u64,
    /// Internal integration step.
    pub dt: f64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub system: System,
    pub seed: u64,
    pub params: serde_json::Value,
    pub simulations: Vec<SimRecord>,
    pub sample_interval: f64,
    pub n_frames: usize,
    pub state_dim: usize,
    /// `[channels, height, width]` for field data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<[usize; 3]>,
    pub channels: Vec<String>,
    pub normalization: Normalization,
    pub windows: WindowSpec,
    #[serde(default)]
    pub note: String,
}

impl DatasetManifest {
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_frames).map(|k| k as f64 * self.sample_interval).collect()
    }
}

/// Simulation sizes and windowing for one system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub system: System,
    pub n_sims: usize,
    pub grid: usize,
    pub sample_interval: f64,
    pub n_frames: usize,
    pub windows: WindowSpec,
}

impl Protocol {
    /// Desk-scale defaults, or the published sizes with `full_scale`.
    pub fn new(system: System, full_scale: bool) -> Self {
        match system {
            System::Hr => Protocol {
                system,
                n_sims: if full_scale { 1000 } else { 5 },
                grid: 0,
                sample_interval: 1.0 / 150.0,
                n_frames: 3000,
                windows: WindowSpec {
                    n_obs: 1500,
                    window: 30,
                    stride: 30,
                    horizon: 30,
                    test_start: 1499,
                },
            },
            System::GrayScott => Protocol {
                system,
                n_sims: if full_scale { 1000 } else { 20 },
                grid: if full_scale { 50 } else { 16 },
                sample_interval: 2.5,
                n_frames: 61,
                windows: WindowSpec {
                    n_obs: 41,
                    window: 11,
                    stride: 5,
                    horizon: 20,
                    test_start: 40,
                },
            },
            System::ShallowWater => {
                let (n_obs, horizon) = if full_scale { (1500, 734) } else { (150, 73) };
                Protocol {
                    system,
                    n_sims: if full_scale { 1000 } else { 20 },
                    grid: if full_scale { 50 } else { 16 },
                    sample_interval: 4.7 / n_obs as f64,
                    n_frames: n_obs + horizon,
                    windows: WindowSpec {
                        n_obs,
                        window: 15,
                        stride: 15,
                        horizon,
                        test_start: n_obs - 1,
                    },
                }
            }
            System::Spiral => Protocol {
                system,
                n_sims: 1,
                grid: 0,
                sample_interval: 4.0 * std::f64::consts::PI / 99.0,
                n_frames: 133,
                windows: WindowSpec {
                    n_obs: 100,
                    window: 100,
                    stride: 100,
                    horizon: 33,
                    test_start: 0,
                },
            },
        }
    }

    pub fn with_sims(mut self, n: usize) -> Self {
        self.n_sims = n;
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }
}

/// A set of simulated trajectories in physical units.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// `trajectories[sim][frame]` is one raw state.
    pub trajectories: Vec<Vec<Vec<f64>>>,
}

struct SimOutput {
    frames: Vec<Vec<f64>>,
    record: SimRecord,
}

fn sim_seed_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5851_F42D_4C95_7F2D)
}

/// Runs `protocol.n_sims` simulations with seeds `seed + index` (in
/// parallel) and fits the normalisation on the observation frames.
pub fn build_dataset(protocol: &Protocol, seed: u64) -> Result<Dataset> {
    protocol.windows.validate(protocol.n_frames)?;
    if protocol.n_sims == 0 {
        return Err(Error::InvalidConfig("n_sims must be at least 1".into()));
    }
    let p = *protocol;
    let outputs: Vec<SimOutput> = (0..p.n_sims)
        .into_par_iter()
        .map(|index| run_one(&p, index, seed.wrapping_add(index as u64)))
        .collect::<Result<_>>()?;

    let (params, grid, channels, note) = match p.system {
        System::Hr => (
            serde_json::to_value(HrParams::default())?,
            None,
            vec!["x".into(), "y".into(), "z".into()],
            String::new(),
        ),
        System::GrayScott => (
            serde_json::to_value(GrayScottParams {
                grid: (p.grid, p.grid),
                ..GrayScottParams::default()
            })?,
            Some([2, p.grid, p.grid]),
            vec!["U".into(), "V".into()],
            "D_U and D_V are sampled per simulation; see simulations".into(),
        ),
        System::ShallowWater => (
            serde_json::to_value(ShallowWaterParams {
                grid: (p.grid, p.grid),
                ..ShallowWaterParams::default()
            })?,
            Some([1, p.grid, p.grid]),
            vec!["h".into()],
            String::new(),
        ),
        System::Spiral => (
            serde_json::json!({ "noise_sd": 0.02, "decay": 0.1 }),
            None,
            vec!["x".into(), "y".into()],
            "frames before n_obs are noisy observations; later frames are the clean extension".into(),
        ),
    };
    let state_dim = outputs[0].frames[0].len();
    let channel_size = state_dim / channels.len();
    let n_obs = p.windows.n_obs;
    let normalization = if p.system == System::Spiral {
        Normalization::identity(channels.len(), channel_size)
    } else {
        Normalization::fit(
            outputs.iter().flat_map(|o| o.frames[..n_obs].iter()),
            channels.len(),
            channel_size,
        )
    };
    let manifest = DatasetManifest {
        system: p.system,
        seed,
        params,
        simulations: outputs.iter().map(|o| o.record.clone()).collect(),
        sample_interval: p.sample_interval,
        n_frames: p.n_frames,
        state_dim,
        grid,
        channels,
        normalization,
        windows: p.windows,
        note,
    };
    Ok(Dataset {
        manifest,
        trajectories: outputs.into_iter().map(|o| o.frames).collect(),
    })
}

fn run_one(p: &Protocol, index: usize, seed: u64) -> Result<SimOutput> {
    let mut extra = BTreeMap::new();
    let (frames, dt) = match p.system {
        System::Hr => {
            let mut rng = sim_seed_stream(seed);
            let x0 = [
                rng.random_range(-2.0..=2.0),
                rng.random_range(-12.0..=0.0),
                rng.random_range(1.0..=3.5),
            ];
            for (k, v) in ["x0", "y0", "z0"].iter().zip(x0) {
                extra.insert(k.to_string(), v);
            }
            let cfg = HrConfig {
                n_points: p.n_frames,
                sample_interval: p.sample_interval,
                ..HrConfig::default()
            };
            let traj = simulate_hr(&HrParams::default(), x0, &cfg)?;
            let steps = crate::solvers::substeps(cfg.sample_interval, cfg.dt_max);
            (traj.states, cfg.sample_interval / steps as f64)
        }
        System::GrayScott => {
            let params = GrayScottParams::sample(&mut sim_seed_stream(seed), (p.grid, p.grid));
            extra.insert("D_U".into(), params.d_u);
            extra.insert("D_V".into(), params.d_v);
            let cfg = GrayScottConfig {
                sample_interval: p.sample_interval,
                n_frames: p.n_frames,
                dt: None,
            };
            let (u, v) = gray_scott_initial(params.grid, seed);
            let traj = simulate_gray_scott_from(&params, u, v, &cfg)?;
            let steps = traj.accepted_steps / (p.n_frames - 1).max(1);
            (traj.states, cfg.sample_interval / steps.max(1) as f64)
        }
        System::ShallowWater => {
            let params = ShallowWaterParams {
                grid: (p.grid, p.grid),
                ..ShallowWaterParams::default()
            };
            let (init, amplitude, width) = random_bump(&params, seed);
            extra.insert("amplitude".into(), amplitude);
            extra.insert("width".into(), width);
            let cfg = ShallowWaterConfig {
                sample_interval: p.sample_interval,
                n_frames: p.n_frames,
                ..ShallowWaterConfig::default()
            };
            let traj = simulate_shallow_water_from(&params, init, &cfg)?;
            let mean_dt = p.sample_interval * (p.n_frames - 1) as f64 / traj.accepted_steps.max(1) as f64;
            (traj.states, mean_dt)
        }
        System::Spiral => {
            let data = simulate_spiral(p.windows.n_obs, 0.02, seed);
            let mut frames = data.observed.states;
            frames.extend(data.extension.states);
            (frames, 0.0)
        }
    };
    Ok(SimOutput {
        frames,
        record: SimRecord {
            index,
            seed,
            dt,
            extra,
        },
    })
}

impl Dataset {
    pub fn times(&self) -> Vec<f64> {
        self.manifest.times()
    }

    pub fn n_sims(&self) -> usize {
        self.trajectories.len()
    }

    /// Normalised copy of one trajectory.
    pub fn normalized(&self, sim: usize) -> Vec<Vec<f64>> {
        self.trajectories[sim]
            .iter()
            .map(|f| self.manifest.normalization.normalize(f))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mpath = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        let times = self.times();
        for (i, traj) in self.trajectories.iter().enumerate() {
            let path = dir.join(format!("traj_{i}.csv"));
            let dim = traj.first().map_or(0, Vec::len);
            let mut out = String::from("t");
            for k in 0..dim {
                let _ = write!(out, ",s{k}");
            }
            out.push('\n');
            for (t, frame) in times.iter().zip(traj) {
                let _ = write!(out, "{t:.16e}");
                for v in frame {
                    let _ = write!(out, ",{v:.16e}");
                }
                out.push('\n');
            }
            std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let mut trajectories = Vec::with_capacity(manifest.simulations.len());
        for i in 0..manifest.simulations.len() {
            let path = dir.join(format!("traj_{i}.csv"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let mut frames = Vec::new();
            for (line_no, line) in text.lines().enumerate().skip(1) {
                if line.trim().is_empty() {
                    continue;
                }
                let vals: Vec<f64> = line
                    .split(',')
                    .skip(1)
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| {
                        Error::LayoutMismatch(format!("{}:{}: {e}", path.display(), line_no + 1))
                    })?;
                if vals.len() != manifest.state_dim {
                    return Err(Error::LayoutMismatch(format!(
                        "{}:{}: expected {} values, found {}",
                        path.display(),
                        line_no + 1,
                        manifest.state_dim,
                        vals.len()
                    )));
                }
                frames.push(vals);
            }
            if frames.len() != manifest.n_frames {
                return Err(Error::LayoutMismatch(format!(
                    "{}: expected {} rows, found {}",
                    path.display(),
                    manifest.n_frames,
                    frames.len()
                )));
            }
            trajectories.push(frames);
        }
        Ok(Dataset {
            manifest,
            trajectories,
        })
    }
}
