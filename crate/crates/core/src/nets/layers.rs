use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Uniform};

use crate::error::Result;
use crate::rng::Rng;

use super::params::{Group, ParamStore};

/// Gain for a leaky rectifier with the given negative slope.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

/// Uniform draw with variance `gain^2 / fan_in`.
pub fn fan_in_uniform(
    rng: &mut Rng,
    dims: &[usize],
    fan_in: usize,
    gain: f64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let bound = gain * (3.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| crate::Error::Config(e.to_string()))?;
    let n: usize = dims.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Ok(Tensor::from_vec(vals, dims, device)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: Var,
    b: Var,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        (fan_in, fan_out): (usize, usize),
        gain: f64,
        rng: &mut Rng,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let w = fan_in_uniform(rng, &[fan_out, fan_in], fan_in, gain, dtype, device)?;
        let w = store.add(group, &format!("{name}.weight"), w)?;
        let b = store.add(
            group,
            &format!("{name}.bias"),
            Tensor::zeros(fan_out, dtype, device)?,
        )?;
        Ok(Linear { w, b })
    }

    /// `(N, in) -> (N, out)`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.w.t()?)?.broadcast_add(&self.b)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Var,
    b: Var,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        group: Group,
        name: &str,
        (c_in, c_out, k): (usize, usize, usize),
        gain: f64,
        rng: &mut Rng,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let fan_in = c_in * k * k;
        let w = fan_in_uniform(rng, &[c_out, c_in, k, k], fan_in, gain, dtype, device)?;
        let w = store.add(group, &format!("{name}.weight"), w)?;
        let b = store.add(
            group,
            &format!("{name}.bias"),
            Tensor::zeros(c_out, dtype, device)?,
        )?;
        Ok(Conv2d {
            w,
            b,
            padding: k / 2,
        })
    }

    /// Same-padded stride-1 convolution, lowered to one matrix product over
    /// shifted copies of the input (faster than the direct kernel on CPU,
    /// mostly in the backward pass).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (o, _, k, _) = self.w.dims4()?;
        let p = self.padding;
        let y = if k == 1 {
            let flat = x.reshape((n, c, h * w))?;
            self.w.reshape((o, c))?.broadcast_matmul(&flat)?
        } else {
            let xp = x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?;
            let mut shifted = Vec::with_capacity(k * k);
            for dy in 0..k {
                for dx in 0..k {
                    shifted.push(xp.narrow(2, dy, h)?.narrow(3, dx, w)?);
                }
            }
            let cols = Tensor::stack(&shifted, 2)?.reshape((n, c * k * k, h * w))?;
            self.w.reshape((o, c * k * k))?.broadcast_matmul(&cols)?
        };
        Ok(y.reshape((n, o, h, w))?.broadcast_add(&self.b.reshape((1, o, 1, 1))?)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()?.affine(1.0 - slope, 0.0)? + x.affine(slope, 0.0)?)?)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// Normalise each pixel's feature vector to unit root-mean-square.
pub fn pixel_norm(x: &Tensor) -> Result<Tensor> {
    let ms = x.sqr()?.mean_keepdim(1)?;
    Ok(x.broadcast_div(&(ms + 1e-8)?.sqrt()?)?)
}

/// Numerically stable `log(sigmoid(x))`.
pub fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    // log s(x) = min(x, 0) - log(1 + exp(-|x|))
    let neg_abs = x.abs()?.neg()?;
    let soft = (neg_abs.exp()? + 1.0)?.log()?;
    Ok((x.minimum(&x.zeros_like()?)? - soft)?)
}

/// Flatten all but the batch axis.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?)
}
