//! Ground-truth data: Hindmarsh-Rose, Gray-Scott, shallow water and the
//! spiral toy problem, plus the on-disk dataset format.

mod dataset;
pub mod gray_scott;
pub mod hr;
pub mod shallow_water;
pub mod spiral;

pub use dataset::{
    build_dataset, Dataset, DatasetManifest, Normalization, Protocol, SimRecord, System, WindowSpec,
};
pub use gray_scott::{
    gray_scott_initial, laplacian_periodic, simulate_gray_scott, simulate_gray_scott_from, GrayScottConfig,
    GrayScottParams,
};
pub use hr::{simulate_hr, HrConfig, HrParams};
pub use shallow_water::{
    gaussian_bump, simulate_shallow_water, simulate_shallow_water_from, sw_step, ShallowWaterConfig,
    ShallowWaterParams, SwState,
};
pub use spiral::{simulate_spiral, spiral_point, SpiralData};
