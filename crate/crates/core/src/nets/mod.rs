//! Layers, parameter storage and initialisation.
//!
//! Parameters live in a [`ParamStore`]; layers only hold [`ParamId`]s. A
//! forward pass receives the store's tensors already recorded on a tape (see
//! [`ParamStore::record`]), so the same layer code serves training (leaves
//! with gradients) and inference (constants).

mod activation;
mod store;

pub use activation::Activation;
pub use store::{ParamId, ParamStore, WeightEntry};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Conv2dGeometry, Tensor, Var};

/// Draws a `shape` tensor from `Uniform(-sqrt(1/fan_in), sqrt(1/fan_in))`.
pub fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("numel matches shape")
}

/// Fully connected layer `y = act(x W^T + b)` on row-batched inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    /// Registers `{prefix}.weight` (out x in) and, when `bias` is set,
    /// `{prefix}.bias` (zeros).
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{prefix}.weight"),
            uniform_fan_in(rng, vec![out_dim, in_dim], in_dim),
        )?;
        let bias = if bias {
            Some(store.add(format!("{prefix}.bias"), Tensor::zeros(vec![out_dim]))?)
        } else {
            None
        };
        Ok(Dense {
            weight,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    /// `x` is `[batch, in_dim]`.
    pub fn forward<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape("dense", &shape, &[self.in_dim]));
        }
        let mut y = x.matmul_bt(params[self.weight.0])?;
        if let Some(b) = self.bias {
            y = y.add_row(params[b.0])?;
        }
        Ok(self.activation.apply_var(y))
    }
}

/// Chain of dense layers; the last layer has no activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[3, 64, 64, 3]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        hidden: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least input and output widths, got {dims:?}"
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let act = if i + 2 == dims.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Dense::new(
                store,
                &format!("{prefix}.{i}"),
                pair[0],
                pair[1],
                act,
                true,
                rng,
            )?);
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameter count of a biased MLP with the given widths.
    pub fn count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn forward<'t>(&self, params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(params, h)?;
        }
        Ok(h)
    }
}

/// Periodic 2-D convolution over channel-major fields.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel_size: usize,
    pub activation: Activation,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        kernel_size: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv kernel size must be odd, got {kernel_size}"
            )));
        }
        let fan_in = in_ch * kernel_size * kernel_size;
        let kernel = store.add(
            format!("{prefix}.kernel"),
            uniform_fan_in(rng, vec![out_ch, in_ch, kernel_size, kernel_size], fan_in),
        )?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(vec![out_ch]))?;
        Ok(Conv2d {
            kernel,
            bias,
            in_ch,
            out_ch,
            kernel_size,
            activation,
        })
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel_size * self.kernel_size + self.out_ch
    }

    /// `x` is `[batch, in_ch * height * width]`.
    pub fn forward<'t>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        height: usize,
        width: usize,
    ) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_ch * height * width {
            return Err(Error::shape(
                "conv2d",
                &shape,
                &[self.in_ch, height, width],
            ));
        }
        let geom = Conv2dGeometry {
            batch: shape[0],
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            height,
            width,
            kh: self.kernel_size,
            kw: self.kernel_size,
        };
        let y = x.conv2d_periodic(params[self.kernel.0], params[self.bias.0], geom)?;
        Ok(self.activation.apply_var(y))
    }
}
