//! Loss terms and the three training objectives.
//!
//! Every loss is returned as a [`Loss`]: named, weighted scalar terms plus
//! their weighted sum, still attached to the autodiff graph. Batch reduction
//! is a mean over samples throughout.

use std::fmt;

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{log_sigmoid, sample_prior, GaussianParams, LatentModel};
use crate::rng::Rng;

/// Names of every part a report can carry, in logging order.
pub const PART_NAMES: [&str; 10] = [
    "kl_z_u",
    "kl_e_u",
    "recon_u",
    "kl_z_r",
    "recon_r",
    "adv_u",
    "adv_r",
    "latrec_z_u",
    "latrec_e_u",
    "latrec_z_r",
];

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Scale of the Laplace pixel likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconScale(f64);

impl ReconScale {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("Laplace scale must be positive, got {lambda}")));
        }
        Ok(ReconScale(lambda))
    }

    pub fn lambda(self) -> f64 {
        self.0
    }
}

impl Default for ReconScale {
    fn default() -> Self {
        ReconScale(0.01)
    }
}

/// Weights of the explicit reconstruction terms added to the adversarial
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconWeights {
    pub recon_u: f64,
    pub recon_r: f64,
    pub latrec_z_u: f64,
    pub latrec_e_u: f64,
    pub latrec_z_r: f64,
}

impl Default for ReconWeights {
    fn default() -> Self {
        ReconWeights {
            recon_u: 1.0,
            recon_r: 1.0,
            latrec_z_u: 1.0,
            latrec_e_u: 1.0,
            latrec_z_r: 1.0,
        }
    }
}

impl ReconWeights {
    pub fn zero() -> Self {
        ReconWeights {
            recon_u: 0.0,
            recon_r: 0.0,
            latrec_z_u: 0.0,
            latrec_e_u: 0.0,
            latrec_z_r: 0.0,
        }
    }
}

/// One weighted scalar term of a loss.
#[derive(Debug, Clone)]
pub struct Term {
    pub name: &'static str,
    pub weight: f64,
    pub value: Tensor,
}

/// Weighted terms and their sum, differentiable.
#[derive(Debug, Clone)]
pub struct Loss {
    pub terms: Vec<Term>,
    pub total: Tensor,
}

impl Loss {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        let mut total: Option<Tensor> = None;
        for t in &terms {
            let w = t.value.affine(t.weight, 0.0)?;
            total = Some(match total {
                None => w,
                Some(acc) => (acc + w)?,
            });
        }
        let total = total.ok_or_else(|| Error::Config("loss with no terms".into()))?;
        Ok(Loss { terms, total })
    }

    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn merge(self, other: Loss) -> Result<Loss> {
        let mut terms = self.terms;
        terms.extend(other.terms);
        Loss::new(terms)
    }

    pub fn report(&self) -> Result<LossReport> {
        let mut parts = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            parts.push(Part {
                name: t.name.to_string(),
                value: scalar(&t.value)?,
                weight: t.weight,
            });
        }
        Ok(LossReport {
            total: scalar(&self.total)?,
            parts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

/// Plain-number view of a [`Loss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub parts: Vec<Part>,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parts.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn weighted_sum(&self) -> f64 {
        self.parts.iter().map(|p| p.weight * p.value).sum()
    }

    /// First part (or the total) that is not finite.
    pub fn non_finite(&self) -> Option<&str> {
        if let Some(p) = self.parts.iter().find(|p| !p.value.is_finite()) {
            return Some(&p.name);
        }
        (!self.total.is_finite()).then_some("total")
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "total={:.4}", self.total)?;
        for p in &self.parts {
            write!(f, " {}={:.4}", p.name, p.value)?;
        }
        Ok(())
    }
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

fn per_sample_sum(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.sum(D::Minus1)?)
}

/// `KL(N(mu, sigma^2) || N(0, I))` summed over dimensions, averaged over the
/// batch.
pub fn kl_diag_gauss_to_std(p: &GaussianParams) -> Result<Tensor> {
    let var = p.log_sigma.affine(2.0, 0.0)?.exp()?;
    let inner = ((p.mu.sqr()? + var)? - p.log_sigma.affine(2.0, 1.0)?)?;
    Ok(per_sample_sum(&inner.affine(0.5, 0.0)?)?.mean_all()?)
}

/// Laplace negative log-likelihood without its `log 2 lambda` constant:
/// `sum |x - x_hat| / lambda`, averaged over the batch.
pub fn laplace_recon_nll(x: &Tensor, x_hat: &Tensor, s: ReconScale) -> Result<Tensor> {
    if x.dims() != x_hat.dims() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} does not match target {:?}",
            x_hat.dims(),
            x.dims()
        )));
    }
    let abs = (x - x_hat)?.abs()?.affine(1.0 / s.lambda(), 0.0)?;
    Ok(per_sample_sum(&abs)?.mean_all()?)
}

/// `-log N(v | mu, diag(sigma^2))`, averaged over the batch.
pub fn gaussian_latent_nll(v: &Tensor, p: &GaussianParams) -> Result<Tensor> {
    if v.dims() != p.mu.dims() {
        return Err(Error::Shape(format!(
            "latent {:?} does not match posterior {:?}",
            v.dims(),
            p.mu.dims()
        )));
    }
    let scaled = (v - &p.mu)?.div(&p.sigma()?)?;
    let inner = (scaled.sqr()?.affine(0.5, HALF_LOG_2PI)? + &p.log_sigma)?;
    Ok(per_sample_sum(&inner)?.mean_all()?)
}

/// Logistic objective `mean log s(pos) + mean log(1 - s(neg))`, to be
/// maximised. Its maximiser's logit is `log p_pos / p_neg`.
pub fn discriminator_loss(pos: &Tensor, neg: &Tensor) -> Result<Tensor> {
    if pos.elem_count() == 0 || neg.elem_count() == 0 {
        return Err(Error::Shape("discriminator objective needs logits".into()));
    }
    let a = log_sigmoid(pos)?.mean_all()?;
    let b = log_sigmoid(&neg.neg()?)?.mean_all()?;
    Ok((a + b)?)
}

fn term(name: &'static str, weight: f64, value: Tensor) -> Term {
    Term { name, weight, value }
}

fn check_batches(x_u: &Tensor, x_r: &Tensor) -> Result<()> {
    if x_u.dim(0)? == 0 || x_r.dim(0)? == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Reference-image part of the reference-based objective: KL of `q(z|x)`
/// plus reconstruction through the reference code. The `e` encoder is never
/// evaluated here.
pub fn rbvae_reference_terms(
    model: &dyn LatentModel,
    x_r: &Tensor,
    s: ReconScale,
    rng: &mut Rng,
) -> Result<Vec<Term>> {
    let qz = model.encode_z(x_r)?;
    let z = qz.sample(rng)?;
    let x_hat = model.generate_reference(&z)?;
    Ok(vec![
        term("kl_z_r", 1.0, kl_diag_gauss_to_std(&qz)?),
        term("recon_r", 1.0, laplace_recon_nll(x_r, &x_hat, s)?),
    ])
}

/// Unlabelled part: both KLs plus reconstruction through sampled `(z, e)`.
pub fn rbvae_unlabelled_terms(
    model: &dyn LatentModel,
    x_u: &Tensor,
    s: ReconScale,
    rng: &mut Rng,
) -> Result<Vec<Term>> {
    let qz = model.encode_z(x_u)?;
    let qe = model.encode_e(x_u)?;
    let z = qz.sample(rng)?;
    let e = qe.sample(rng)?;
    let x_hat = model.generate(&z, &e)?;
    Ok(vec![
        term("kl_z_u", 1.0, kl_diag_gauss_to_std(&qz)?),
        term("kl_e_u", 1.0, kl_diag_gauss_to_std(&qe)?),
        term("recon_u", 1.0, laplace_recon_nll(x_u, &x_hat, s)?),
    ])
}

/// Reference-based VAE objective. Noise is drawn unlabelled `z`, `e`, then
/// reference `z`.
pub fn rbvae_batch_loss(
    model: &dyn LatentModel,
    x_u: &Tensor,
    x_r: &Tensor,
    s: ReconScale,
    rng: &mut Rng,
) -> Result<Loss> {
    check_batches(x_u, x_r)?;
    let mut terms = rbvae_unlabelled_terms(model, x_u, s, rng)?;
    terms.extend(rbvae_reference_terms(model, x_r, s, rng)?);
    Loss::new(terms)
}

/// VAE (`beta = 1`) or beta-VAE objective over the joint `[z, e]` code.
pub fn vae_batch_loss(
    model: &dyn LatentModel,
    x: &Tensor,
    beta: f64,
    s: ReconScale,
    rng: &mut Rng,
) -> Result<Loss> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    let q = model.encode_joint(x)?;
    let latent = q.sample(rng)?;
    let x_hat = model.decode(&latent)?;
    Loss::new(vec![
        term("kl_z_u", beta, kl_diag_gauss_to_std(&q)?),
        term("recon_u", 1.0, laplace_recon_nll(x, &x_hat, s)?),
    ])
}

/// Samples along the inference path: data through the encoders.
#[derive(Debug, Clone)]
pub struct EncoderPath {
    pub x_u: Tensor,
    pub qz_u: GaussianParams,
    pub qe_u: GaussianParams,
    pub z_u: Tensor,
    pub e_u: Tensor,
    pub x_r: Tensor,
    pub qz_r: GaussianParams,
    pub z_r: Tensor,
}

impl EncoderPath {
    /// Draws `z_u`, `e_u`, `z_r` in that order.
    pub fn sample(model: &dyn LatentModel, x_u: &Tensor, x_r: &Tensor, rng: &mut Rng) -> Result<Self> {
        check_batches(x_u, x_r)?;
        let qz_u = model.encode_z(x_u)?;
        let qe_u = model.encode_e(x_u)?;
        let qz_r = model.encode_z(x_r)?;
        let z_u = qz_u.sample(rng)?;
        let e_u = qe_u.sample(rng)?;
        let z_r = qz_r.sample(rng)?;
        Ok(EncoderPath {
            x_u: x_u.clone(),
            qz_u,
            qe_u,
            z_u,
            e_u,
            x_r: x_r.clone(),
            qz_r,
            z_r,
        })
    }
}

/// Samples along the generative path: prior draws through the generator.
#[derive(Debug, Clone)]
pub struct GeneratorPath {
    pub z: Tensor,
    pub e: Tensor,
    pub x: Tensor,
    pub z_r: Tensor,
    pub x_r: Tensor,
}

impl GeneratorPath {
    /// Draws `z`, `e`, `z_r` from the priors in that order.
    pub fn sample(model: &dyn LatentModel, m_u: usize, m_r: usize, rng: &mut Rng) -> Result<Self> {
        let (d_z, d_e) = model.latent_dims();
        let (dt, dev) = (model.dtype(), model.device().clone());
        let z = sample_prior(rng, m_u, d_z, dt, &dev)?;
        let e = sample_prior(rng, m_u, d_e, dt, &dev)?;
        let z_r = sample_prior(rng, m_r, d_z, dt, &dev)?;
        let x = model.generate(&z, &e)?;
        let x_r = model.generate_reference(&z_r)?;
        Ok(GeneratorPath { z, e, x, z_r, x_r })
    }
}

/// Discriminator logits on both paths.
#[derive(Debug, Clone)]
pub struct Logits {
    pub joint_enc: Tensor,
    pub joint_gen: Tensor,
    pub ref_enc: Tensor,
    pub ref_gen: Tensor,
}

/// Optional block keep masks for the four discriminator evaluations.
#[derive(Debug, Clone, Default)]
pub struct DiscMasks {
    pub joint_enc: Option<Tensor>,
    pub joint_gen: Option<Tensor>,
    pub ref_enc: Option<Tensor>,
    pub ref_gen: Option<Tensor>,
}

impl Logits {
    pub fn compute(model: &dyn LatentModel, enc: &EncoderPath, gen: &GeneratorPath, m: &DiscMasks) -> Result<Self> {
        Ok(Logits {
            joint_enc: model.disc_joint(&enc.x_u, &enc.z_u, &enc.e_u, m.joint_enc.as_ref())?,
            joint_gen: model.disc_joint(&gen.x, &gen.z, &gen.e, m.joint_gen.as_ref())?,
            ref_enc: model.disc_ref(&enc.x_r, &enc.z_r, m.ref_enc.as_ref())?,
            ref_gen: model.disc_ref(&gen.x_r, &gen.z_r, m.ref_gen.as_ref())?,
        })
    }

    /// `adv_u` and `adv_r`: encoder-path mean minus generator-path mean.
    pub fn adversarial_terms(&self) -> Result<Vec<Term>> {
        let adv_u = (self.joint_enc.mean_all()? - self.joint_gen.mean_all()?)?;
        let adv_r = (self.ref_enc.mean_all()? - self.ref_gen.mean_all()?)?;
        Ok(vec![term("adv_u", 1.0, adv_u), term("adv_r", 1.0, adv_r)])
    }
}

/// Symmetric adversarial objective on fresh samples, discriminators in
/// evaluation mode. Noise order: encoder path, then generator path.
pub fn srbvae_adversarial_loss(model: &dyn LatentModel, x_u: &Tensor, x_r: &Tensor, rng: &mut Rng) -> Result<Loss> {
    let enc = EncoderPath::sample(model, x_u, x_r, rng)?;
    let gen = GeneratorPath::sample(model, x_u.dim(0)?, x_r.dim(0)?, rng)?;
    Loss::new(Logits::compute(model, &enc, &gen, &DiscMasks::default())?.adversarial_terms()?)
}

/// Image reconstructions through both encoders, and latent reconstructions of
/// prior draws through the generator and back.
pub fn explicit_recon_from(
    model: &dyn LatentModel,
    enc: &EncoderPath,
    gen: &GeneratorPath,
    s: ReconScale,
    w: &ReconWeights,
) -> Result<Vec<Term>> {
    let x_u_hat = model.generate(&enc.z_u, &enc.e_u)?;
    let x_r_hat = model.generate_reference(&enc.z_r)?;
    let qz_gen = model.encode_z(&gen.x)?;
    let qe_gen = model.encode_e(&gen.x)?;
    let qz_gen_r = model.encode_z(&gen.x_r)?;
    Ok(vec![
        term("recon_u", w.recon_u, laplace_recon_nll(&enc.x_u, &x_u_hat, s)?),
        term("recon_r", w.recon_r, laplace_recon_nll(&enc.x_r, &x_r_hat, s)?),
        term("latrec_z_u", w.latrec_z_u, gaussian_latent_nll(&gen.z, &qz_gen)?),
        term("latrec_e_u", w.latrec_e_u, gaussian_latent_nll(&gen.e, &qe_gen)?),
        term("latrec_z_r", w.latrec_z_r, gaussian_latent_nll(&gen.z_r, &qz_gen_r)?),
    ])
}

/// The explicit reconstruction terms on fresh samples.
pub fn explicit_recon_terms(
    model: &dyn LatentModel,
    x_u: &Tensor,
    x_r: &Tensor,
    s: ReconScale,
    w: &ReconWeights,
    rng: &mut Rng,
) -> Result<Loss> {
    let enc = EncoderPath::sample(model, x_u, x_r, rng)?;
    let gen = GeneratorPath::sample(model, x_u.dim(0)?, x_r.dim(0)?, rng)?;
    Loss::new(explicit_recon_from(model, &enc, &gen, s, w)?)
}
