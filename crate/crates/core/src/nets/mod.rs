//! Encoders, generator and discriminators behind one [`LatentModel`] trait.
//!
//! [`ConvModel`] is the image architecture. [`ScalarModel`] is a linear
//! one-pixel stand-in with a handful of parameters, used where gradients or
//! update directions must be derived by hand.

mod conv;
mod layers;
mod params;
mod scalar;

use candle_core::{DType, Device, Tensor};
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use conv::{ArchConfig, ConvModel, Precision};
pub use layers::{leaky_relu, log_sigmoid, pixel_norm};
pub use params::{Group, Param, ParamStore};
pub use scalar::{ScalarInit, ScalarModel};

/// Bounds applied to every predicted log standard deviation.
pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 7.0;

/// Which objective family a model is built for. Decides which sub-networks
/// exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Single encoder over a `d_z + d_e` latent, no reference parts.
    Vae,
    /// Two encoders, generator, reference code.
    RbVae,
    /// Everything in `RbVae` plus both discriminators.
    SrbVae,
}

impl Variant {
    pub fn has_reference(self) -> bool {
        !matches!(self, Variant::Vae)
    }

    pub fn has_discriminators(self) -> bool {
        matches!(self, Variant::SrbVae)
    }
}

/// Diagonal Gaussian, `(N, D)` mean and clamped log standard deviation.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianParams {
    /// Clamps `log_sigma` into `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub fn new(mu: Tensor, log_sigma: Tensor) -> Result<Self> {
        if mu.dims() != log_sigma.dims() {
            return Err(Error::Shape(format!(
                "mean {:?} and log-sigma {:?} differ",
                mu.dims(),
                log_sigma.dims()
            )));
        }
        let log_sigma = log_sigma.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)?;
        Ok(GaussianParams { mu, log_sigma })
    }

    /// Split an `(N, 2D)` head output into mean and log-sigma halves.
    pub fn from_head(out: &Tensor) -> Result<Self> {
        let d = out.dim(1)? / 2;
        Self::new(out.narrow(1, 0, d)?, out.narrow(1, d, d)?)
    }

    pub fn dim(&self) -> usize {
        self.mu.dims().last().copied().unwrap_or(0)
    }

    pub fn sigma(&self) -> Result<Tensor> {
        Ok(self.log_sigma.exp()?)
    }

    /// Reparametrised draw `mu + sigma * eps`.
    pub fn sample_with(&self, eps: &Tensor) -> Result<Tensor> {
        Ok((&self.mu + self.sigma()?.mul(eps)?)?)
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<Tensor> {
        let eps = std_normal(rng, self.mu.dims(), self.mu.dtype(), self.mu.device())?;
        self.sample_with(&eps)
    }

    /// Columns `start..start + len` of both parameters.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        Ok(GaussianParams {
            mu: self.mu.narrow(1, start, len)?,
            log_sigma: self.log_sigma.narrow(1, start, len)?,
        })
    }

    pub fn concat(parts: &[&GaussianParams]) -> Result<Self> {
        let mu: Vec<&Tensor> = parts.iter().map(|p| &p.mu).collect();
        let ls: Vec<&Tensor> = parts.iter().map(|p| &p.log_sigma).collect();
        Ok(GaussianParams {
            mu: Tensor::cat(&mu, 1)?,
            log_sigma: Tensor::cat(&ls, 1)?,
        })
    }

    pub fn detach(&self) -> Self {
        GaussianParams {
            mu: self.mu.detach(),
            log_sigma: self.log_sigma.detach(),
        }
    }
}

/// Standard normal tensor drawn on the host from `rng`.
pub fn std_normal(rng: &mut Rng, dims: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(vals, dims, device)?.to_dtype(dtype)?)
}

/// `n` draws from the `d`-dimensional standard normal prior.
pub fn sample_prior(rng: &mut Rng, n: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    std_normal(rng, &[n, d], dtype, device)
}

/// Per-sample block keep mask of shape `(n, blocks)`: each entry is 0 with
/// probability `p`, otherwise `1 / (1 - p)`.
pub fn block_dropout_mask(
    rng: &mut Rng,
    n: usize,
    blocks: usize,
    p: f64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    let drop = Bernoulli::new(p).map_err(|e| Error::Config(e.to_string()))?;
    let keep = 1.0 / (1.0 - p);
    let vals: Vec<f64> = (0..n * blocks)
        .map(|_| if drop.sample(rng) { 0.0 } else { keep })
        .collect();
    Ok(Tensor::from_vec(vals, (n, blocks), device)?.to_dtype(dtype)?)
}

/// Multiply each `(N, H)` block by its column of `mask`.
pub(crate) fn apply_block_mask(blocks: &[Tensor], mask: Option<&Tensor>) -> Result<Vec<Tensor>> {
    let Some(mask) = mask else {
        return Ok(blocks.to_vec());
    };
    if mask.dim(1)? != blocks.len() {
        return Err(Error::Shape(format!(
            "dropout mask has {} columns for {} blocks",
            mask.dim(1)?,
            blocks.len()
        )));
    }
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| Ok(b.broadcast_mul(&mask.narrow(1, i, 1)?)?))
        .collect()
}

/// The network pieces the objectives are written against.
///
/// Images are `(N, C, H, W)` in `[-1, 1]`; latents are `(N, D)`.
/// Discriminators return `(N,)` logits and take an optional block keep mask
/// from [`block_dropout_mask`]; `None` means evaluation mode.
pub trait LatentModel {
    fn variant(&self) -> Variant;
    fn dtype(&self) -> DType;
    fn device(&self) -> &Device;
    /// `(d_z, d_e)`
    fn latent_dims(&self) -> (usize, usize);
    fn image_shape(&self) -> (usize, usize, usize);

    fn encode_z(&self, x: &Tensor) -> Result<GaussianParams>;
    fn encode_e(&self, x: &Tensor) -> Result<GaussianParams>;

    /// Posterior over the concatenated `[z, e]` code.
    fn encode_joint(&self, x: &Tensor) -> Result<GaussianParams> {
        let z = self.encode_z(x)?;
        let e = self.encode_e(x)?;
        GaussianParams::concat(&[&z, &e])
    }

    /// Decode a concatenated `[z, e]` code.
    fn decode(&self, latent: &Tensor) -> Result<Tensor>;

    fn generate(&self, z: &Tensor, e: &Tensor) -> Result<Tensor> {
        self.decode(&Tensor::cat(&[z, e], 1)?)
    }

    /// Reference code as a `(1, d_e)` row.
    fn e_ref(&self) -> Result<Tensor>;

    /// `e_ref` repeated for `n` samples.
    fn e_ref_batch(&self, n: usize) -> Result<Tensor> {
        let (_, d_e) = self.latent_dims();
        Ok(self.e_ref()?.broadcast_as((n, d_e))?.contiguous()?)
    }

    /// Decode `z` together with the reference code.
    fn generate_reference(&self, z: &Tensor) -> Result<Tensor> {
        let n = z.dim(0)?;
        self.generate(z, &self.e_ref_batch(n)?)
    }

    fn disc_joint(&self, x: &Tensor, z: &Tensor, e: &Tensor, mask: Option<&Tensor>) -> Result<Tensor>;
    fn disc_ref(&self, x: &Tensor, z: &Tensor, mask: Option<&Tensor>) -> Result<Tensor>;

    /// Number of droppable input blocks of the joint and reference
    /// discriminators.
    fn disc_blocks(&self) -> (usize, usize) {
        (3, 2)
    }

    /// Block dropout rate used on discriminator inputs during training.
    fn disc_dropout(&self) -> f64 {
        0.0
    }

    fn params(&self) -> &ParamStore;
}

pub(crate) fn missing(part: &str, variant: Variant) -> Error {
    Error::Config(format!("{variant:?} model has no {part}"))
}
