use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{Group, ParamStore};
use super::{missing, GaussianParams, LatentModel, Variant};

/// Coefficients of a [`ScalarModel`]. Images are single pixels and both
/// latents are one-dimensional:
///
/// ```text
/// q(z|x) = N(enc_z[0] x + enc_z[1], exp(enc_z[2])^2)
/// q(e|x) = N(enc_e[0] x + enc_e[1], exp(enc_e[2])^2)
/// G(z,e) = gen[0] z + gen[1] e + gen[2]
/// d_xi(x,z,e) = disc_joint[0] (x + z + e) + disc_joint[1]
/// d_gamma(x,z) = disc_ref[0] (x + z) + disc_ref[1]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarInit {
    pub enc_z: [f64; 3],
    pub enc_e: [f64; 3],
    pub gen: [f64; 3],
    pub e_ref: f64,
    pub disc_joint: [f64; 2],
    pub disc_ref: [f64; 2],
    /// Full names (e.g. `psi_z.log_sigma`) held constant instead of trained.
    pub frozen: Vec<String>,
}

impl Default for ScalarInit {
    fn default() -> Self {
        ScalarInit {
            enc_z: [0.8, 0.1, -0.5],
            enc_e: [-0.6, 0.2, -0.3],
            gen: [0.7, -0.4, 0.05],
            e_ref: 0.3,
            disc_joint: [0.5, -0.1],
            disc_ref: [-0.4, 0.2],
            frozen: Vec::new(),
        }
    }
}

impl ScalarInit {
    /// A configuration whose adversarial gradients are free of sampling
    /// noise: `G(z,e) = theta - z - e` cancels the prior draw inside both
    /// discriminators, and near-zero posterior spread removes the encoder
    /// draw.
    ///
    /// With all inputs equal to one and `a`, `b`, `theta`, `r` the free
    /// encoder weights, generator bias and reference code, the adversarial
    /// objective is
    /// `xi (1 + a + b) - xi theta + gamma (1 + a) - gamma (theta - r)`.
    pub fn saddle(a: f64, b: f64, theta: f64, r: f64, xi: f64, gamma: f64) -> Self {
        let frozen = [
            "psi_z.b",
            "psi_z.log_sigma",
            "psi_e.b",
            "psi_e.log_sigma",
            "theta.w_z",
            "theta.w_e",
            "xi.b",
            "gamma.b",
        ];
        ScalarInit {
            enc_z: [a, 0.0, -7.0],
            enc_e: [b, 0.0, -7.0],
            gen: [-1.0, -1.0, theta],
            e_ref: r,
            disc_joint: [xi, 0.0],
            disc_ref: [gamma, 0.0],
            frozen: frozen.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Coef {
    Free(Var),
    Fixed(Tensor),
}

impl Coef {
    fn t(&self) -> &Tensor {
        match self {
            Coef::Free(v) => v.as_tensor(),
            Coef::Fixed(t) => t,
        }
    }
}

/// Linear one-pixel model with at most fourteen scalar parameters.
pub struct ScalarModel {
    variant: Variant,
    dtype: DType,
    device: Device,
    store: ParamStore,
    // psi_z: w, b, log_sigma; psi_e likewise
    enc_z: [Coef; 3],
    enc_e: [Coef; 3],
    // theta: w_z, w_e, b
    gen: [Coef; 3],
    e_ref: Coef,
    disc_joint: [Coef; 2],
    disc_ref: [Coef; 2],
}

impl ScalarModel {
    pub fn new(init: &ScalarInit, variant: Variant, dtype: DType) -> Result<Self> {
        let device = Device::Cpu;
        let mut store = ParamStore::new();
        let mut known = Vec::new();
        let mut coef = |store: &mut ParamStore, g: Group, name: &str, v: f64| -> Result<Coef> {
            let full = format!("{}.{name}", g.prefix());
            let t = Tensor::new(&[[v]], &device)?.to_dtype(dtype)?;
            known.push(full.clone());
            Ok(if init.frozen.contains(&full) {
                Coef::Fixed(t)
            } else {
                Coef::Free(store.add(g, name, t)?)
            })
        };
        let (ez, ee, gn) = (Group::EncoderZ, Group::EncoderE, Group::Generator);
        let enc_z = [
            coef(&mut store, ez, "w", init.enc_z[0])?,
            coef(&mut store, ez, "b", init.enc_z[1])?,
            coef(&mut store, ez, "log_sigma", init.enc_z[2])?,
        ];
        let enc_e = [
            coef(&mut store, ee, "w", init.enc_e[0])?,
            coef(&mut store, ee, "b", init.enc_e[1])?,
            coef(&mut store, ee, "log_sigma", init.enc_e[2])?,
        ];
        let gen = [
            coef(&mut store, gn, "w_z", init.gen[0])?,
            coef(&mut store, gn, "w_e", init.gen[1])?,
            coef(&mut store, gn, "b", init.gen[2])?,
        ];
        let e_ref = coef(&mut store, gn, "e_ref", init.e_ref)?;
        let disc_joint = [
            coef(&mut store, Group::JointDisc, "w", init.disc_joint[0])?,
            coef(&mut store, Group::JointDisc, "b", init.disc_joint[1])?,
        ];
        let disc_ref = [
            coef(&mut store, Group::RefDisc, "w", init.disc_ref[0])?,
            coef(&mut store, Group::RefDisc, "b", init.disc_ref[1])?,
        ];
        if let Some(bad) = init.frozen.iter().find(|f| !known.contains(f)) {
            return Err(Error::Config(format!("unknown scalar parameter {bad}")));
        }
        Ok(ScalarModel {
            variant,
            dtype,
            device,
            store,
            enc_z,
            enc_e,
            gen,
            e_ref,
            disc_joint,
            disc_ref,
        })
    }

    /// Current value of a coefficient, trainable or not.
    pub fn value(&self, name: &str) -> Result<f64> {
        let c = match name {
            "psi_z.w" => &self.enc_z[0],
            "psi_z.b" => &self.enc_z[1],
            "psi_z.log_sigma" => &self.enc_z[2],
            "psi_e.w" => &self.enc_e[0],
            "psi_e.b" => &self.enc_e[1],
            "psi_e.log_sigma" => &self.enc_e[2],
            "theta.w_z" => &self.gen[0],
            "theta.w_e" => &self.gen[1],
            "theta.b" => &self.gen[2],
            "theta.e_ref" => &self.e_ref,
            "xi.w" => &self.disc_joint[0],
            "xi.b" => &self.disc_joint[1],
            "gamma.w" => &self.disc_ref[0],
            "gamma.b" => &self.disc_ref[1],
            _ => return Err(Error::Config(format!("unknown scalar parameter {name}"))),
        };
        Ok(c.t().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
    }

    fn column(x: &Tensor) -> Result<Tensor> {
        let n = x.dim(0)?;
        if x.elem_count() != n {
            return Err(Error::Shape(format!("scalar model takes one value per sample, got {:?}", x.dims())));
        }
        Ok(x.reshape((n, 1))?)
    }

    fn affine(x: &Tensor, w: &Coef, b: &Coef) -> Result<Tensor> {
        Ok(x.broadcast_mul(w.t())?.broadcast_add(b.t())?)
    }

    fn encode(&self, x: &Tensor, c: &[Coef; 3]) -> Result<GaussianParams> {
        let x = Self::column(x)?;
        let mu = Self::affine(&x, &c[0], &c[1])?;
        let ls = c[2].t().broadcast_as(mu.dims())?.contiguous()?;
        GaussianParams::new(mu, ls)
    }

    fn disc(&self, sum: &Tensor, c: &[Coef; 2], mask: Option<&Tensor>) -> Result<Tensor> {
        let out = Self::affine(sum, &c[0], &c[1])?.squeeze(1)?;
        // Block dropout does not apply to the linear discriminators; a mask
        // is accepted for interface parity but must have the right width.
        if let Some(m) = mask {
            m.dim(1)?;
        }
        Ok(out)
    }
}

impl LatentModel for ScalarModel {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn dtype(&self) -> DType {
        self.dtype
    }

    fn device(&self) -> &Device {
        &self.device
    }

    fn latent_dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        (1, 1, 1)
    }

    fn encode_z(&self, x: &Tensor) -> Result<GaussianParams> {
        self.encode(x, &self.enc_z)
    }

    fn encode_e(&self, x: &Tensor) -> Result<GaussianParams> {
        self.encode(x, &self.enc_e)
    }

    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let n = latent.dim(0)?;
        if latent.dims() != [n, 2] {
            return Err(Error::Shape(format!("scalar generator takes (N, 2) codes, got {:?}", latent.dims())));
        }
        let z = latent.narrow(1, 0, 1)?;
        let e = latent.narrow(1, 1, 1)?;
        let out = (z.broadcast_mul(self.gen[0].t())? + e.broadcast_mul(self.gen[1].t())?)?
            .broadcast_add(self.gen[2].t())?;
        Ok(out.reshape((n, 1, 1, 1))?)
    }

    fn e_ref(&self) -> Result<Tensor> {
        if !self.variant.has_reference() {
            return Err(missing("reference code", self.variant));
        }
        Ok(self.e_ref.t().clone())
    }

    fn disc_joint(&self, x: &Tensor, z: &Tensor, e: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        if !self.variant.has_discriminators() {
            return Err(missing("joint discriminator", self.variant));
        }
        let sum = ((Self::column(x)? + Self::column(z)?)? + Self::column(e)?)?;
        self.disc(&sum, &self.disc_joint, mask)
    }

    fn disc_ref(&self, x: &Tensor, z: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        if !self.variant.has_discriminators() {
            return Err(missing("reference discriminator", self.variant));
        }
        let sum = (Self::column(x)? + Self::column(z)?)?;
        self.disc(&sum, &self.disc_ref, mask)
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }
}
