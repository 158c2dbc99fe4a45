use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

impl Moments {
    pub fn zeros_like(p: &Tensor) -> Result<Self> {
        Ok(Moments {
            m: p.zeros_like()?,
            v: p.zeros_like()?,
        })
    }
}

/// One bias-corrected Adam descent step at step number `t` (from 1).
/// Pass a negated gradient to ascend.
pub fn adam_update(
    param: &Tensor,
    grad: &Tensor,
    moments: &Moments,
    t: u64,
    hp: &AdamConfig,
) -> Result<(Tensor, Moments)> {
    if grad.dims() != param.dims() || moments.m.dims() != param.dims() || moments.v.dims() != param.dims() {
        return Err(Error::Shape(format!(
            "Adam shapes differ: param {:?}, grad {:?}",
            param.dims(),
            grad.dims()
        )));
    }
    if t == 0 {
        return Err(Error::Config("Adam step numbers start at 1".into()));
    }
    let m = (moments.m.affine(hp.beta1, 0.0)? + grad.affine(1.0 - hp.beta1, 0.0)?)?;
    let v = (moments.v.affine(hp.beta2, 0.0)? + grad.sqr()?.affine(1.0 - hp.beta2, 0.0)?)?;
    let m_hat = m.affine(1.0 / (1.0 - hp.beta1.powi(t as i32)), 0.0)?;
    let v_hat = v.affine(1.0 / (1.0 - hp.beta2.powi(t as i32)), 0.0)?;
    let step = m_hat.div(&(v_hat.sqrt()? + hp.eps)?)?;
    let new = (param - step.affine(hp.learning_rate, 0.0)?)?;
    Ok((new, Moments { m, v }))
}
