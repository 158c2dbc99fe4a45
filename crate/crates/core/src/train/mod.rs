//! Optimisation: Adam, the per-batch update rules, the epoch loop and its
//! artifacts (checkpoints and a metrics log).

mod adam;
mod checkpoint;
mod run;

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{block_dropout_mask, Group, LatentModel, Variant};
use crate::objectives::{
    discriminator_loss, explicit_recon_from, rbvae_reference_terms, rbvae_unlabelled_terms, scalar,
    vae_batch_loss, DiscMasks, EncoderPath, GeneratorPath, Logits, Loss, LossReport, Part, ReconScale,
    ReconWeights, Term,
};
use crate::rng::{substream, Stream};

pub use adam::{adam_update, AdamConfig, Moments};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use run::{
    read_metrics, train, train_model, EpochMetrics, MetricsRow, RunOptions, CHECKPOINT_FILE, METRICS_FILE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainVariant {
    Vae,
    BetaVae,
    Rbvae,
    Srbvae,
}

impl TrainVariant {
    pub fn model_variant(self) -> Variant {
        match self {
            TrainVariant::Vae | TrainVariant::BetaVae => Variant::Vae,
            TrainVariant::Rbvae => Variant::RbVae,
            TrainVariant::Srbvae => Variant::SrbVae,
        }
    }

    pub fn uses_reference(self) -> bool {
        matches!(self, TrainVariant::Rbvae | TrainVariant::Srbvae)
    }
}

fn default_batch() -> usize {
    36
}
fn default_lambda() -> f64 {
    0.01
}
fn default_beta() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: TrainVariant,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Laplace scale of the pixel likelihood.
    #[serde(default = "default_lambda")]
    pub lambda_recon: f64,
    /// KL weight, used by `beta_vae` only.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub recon_weights: ReconWeights,
    #[serde(default)]
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Assert at every step that reference-branch terms send no gradient to
    /// the `e` encoder.
    #[serde(default)]
    pub audit_reference_grad: bool,
    /// Keep both discriminators fixed.
    #[serde(default)]
    pub freeze_discriminators: bool,
}

impl TrainConfig {
    pub fn new(variant: TrainVariant, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            variant,
            batch_size: default_batch(),
            epochs,
            adam: AdamConfig::default(),
            lambda_recon: default_lambda(),
            beta: default_beta(),
            recon_weights: ReconWeights::default(),
            seed,
            checkpoint_every: 0,
            audit_reference_grad: false,
            freeze_discriminators: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.adam.validate()?;
        ReconScale::new(self.lambda_recon)?;
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn recon_scale(&self) -> Result<ReconScale> {
        ReconScale::new(self.lambda_recon)
    }

    fn kl_weight(&self) -> f64 {
        match self.variant {
            TrainVariant::BetaVae => self.beta,
            _ => 1.0,
        }
    }
}

/// Model plus optimiser state.
pub struct TrainState<M> {
    pub model: M,
    /// Adam moments keyed by parameter name.
    pub moments: BTreeMap<String, Moments>,
    /// Optimiser steps taken so far.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub history: Vec<EpochMetrics>,
}

impl<M: LatentModel> TrainState<M> {
    pub fn new(model: M) -> Result<Self> {
        let mut moments = BTreeMap::new();
        for p in model.params().iter() {
            moments.insert(p.name.clone(), Moments::zeros_like(p.var.as_tensor())?);
        }
        Ok(TrainState {
            model,
            moments,
            step: 0,
            epoch: 0,
            history: Vec::new(),
        })
    }
}

struct Pending {
    var: Var,
    name: String,
    value: Tensor,
    moments: Moments,
}

fn check_report(r: &LossReport) -> Result<()> {
    match r.non_finite() {
        Some(t) => Err(Error::NonFinite { term: t.to_string() }),
        None => Ok(()),
    }
}

/// Adam steps for every parameter of `groups` that received a gradient.
/// `sign = 1` descends, `-1` ascends. Nothing is written yet.
fn plan_updates<M: LatentModel>(
    state: &TrainState<M>,
    grads: &GradStore,
    groups: &[Group],
    sign: f64,
    hp: &AdamConfig,
    out: &mut Vec<Pending>,
) -> Result<()> {
    let t = state.step + 1;
    for p in state.model.params().iter().filter(|p| groups.contains(&p.group)) {
        let Some(g) = grads.get(p.var.as_tensor()) else {
            continue;
        };
        if !scalar(&g.sqr()?.sum_all()?)?.is_finite() {
            return Err(Error::NonFinite {
                term: format!("gradient of {}", p.name),
            });
        }
        let g = if sign < 0.0 { g.neg()? } else { g.clone() };
        let mom = state
            .moments
            .get(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("no optimiser state for {}", p.name)))?;
        let (value, moments) = adam_update(p.var.as_tensor(), &g, mom, t, hp)?;
        out.push(Pending {
            var: p.var.clone(),
            name: p.name.clone(),
            value,
            moments,
        });
    }
    Ok(())
}

fn commit<M: LatentModel>(state: &mut TrainState<M>, pending: Vec<Pending>) -> Result<()> {
    for u in pending {
        u.var.set(&u.value)?;
        state.moments.insert(u.name, u.moments);
    }
    state.step += 1;
    Ok(())
}

/// Fail with [`Error::ReferenceLeak`] if `loss` sends a non-zero gradient to
/// any `e`-encoder parameter.
pub fn assert_no_reference_leak(model: &dyn LatentModel, loss: &Tensor) -> Result<()> {
    let grads = loss.backward()?;
    for p in model.params().group(Group::EncoderE) {
        if let Some(g) = grads.get(p.var.as_tensor()) {
            if scalar(&g.abs()?.sum_all()?)? != 0.0 {
                return Err(Error::ReferenceLeak { param: p.name.clone() });
            }
        }
    }
    Ok(())
}

/// One Adam descent step on the VAE, beta-VAE or reference-based objective.
///
/// Either batch may be absent (the VAE variants ignore the reference batch).
/// Parameters that receive no gradient are left untouched.
pub fn train_step_simple<M: LatentModel>(
    state: &mut TrainState<M>,
    x_u: Option<&Tensor>,
    x_r: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let s = cfg.recon_scale()?;
    let model: &dyn LatentModel = &state.model;
    let mut rng = substream(cfg.seed, Stream::Step, state.step);
    let loss = match cfg.variant {
        TrainVariant::Vae | TrainVariant::BetaVae => {
            let x = x_u.ok_or_else(|| Error::Config("VAE step needs an unlabelled batch".into()))?;
            vae_batch_loss(model, x, cfg.kl_weight(), s, &mut rng)?
        }
        TrainVariant::Rbvae => {
            let mut terms: Vec<Term> = Vec::new();
            if let Some(x) = x_u.filter(|x| x.dim(0).is_ok_and(|n| n > 0)) {
                terms.extend(rbvae_unlabelled_terms(model, x, s, &mut rng)?);
            }
            if let Some(x) = x_r.filter(|x| x.dim(0).is_ok_and(|n| n > 0)) {
                let reference = rbvae_reference_terms(model, x, s, &mut rng)?;
                if cfg.audit_reference_grad {
                    let sub = Loss::new(reference.clone())?;
                    assert_no_reference_leak(model, &sub.total)?;
                }
                terms.extend(reference);
            }
            Loss::new(terms)?
        }
        TrainVariant::Srbvae => {
            return Err(Error::Config("adversarial variant uses train_step_srbvae".into()))
        }
    };
    let report = loss.report()?;
    check_report(&report)?;
    let grads = loss.total.backward()?;
    let mut pending = Vec::new();
    let groups = [Group::EncoderZ, Group::EncoderE, Group::Generator];
    plan_updates(state, &grads, &groups, 1.0, &cfg.adam, &mut pending)?;
    commit(state, pending)?;
    Ok(report)
}

fn detach_logits(
    model: &dyn LatentModel,
    enc: &EncoderPath,
    gen: &GeneratorPath,
    masks: &DiscMasks,
) -> Result<Logits> {
    let enc = EncoderPath {
        x_u: enc.x_u.detach(),
        qz_u: enc.qz_u.detach(),
        qe_u: enc.qe_u.detach(),
        z_u: enc.z_u.detach(),
        e_u: enc.e_u.detach(),
        x_r: enc.x_r.detach(),
        qz_r: enc.qz_r.detach(),
        z_r: enc.z_r.detach(),
    };
    let gen = GeneratorPath {
        z: gen.z.detach(),
        e: gen.e.detach(),
        x: gen.x.detach(),
        z_r: gen.z_r.detach(),
        x_r: gen.x_r.detach(),
    };
    Logits::compute(model, &enc, &gen, masks)
}

/// One simultaneous update of all five parameter groups.
///
/// Encoders, generator and reference code descend the adversarial terms plus
/// the weighted explicit reconstructions. Both discriminators ascend half
/// their logistic objective, with encoder-path tuples as the positive class,
/// evaluated on detached inputs under the same dropout masks. All gradients
/// are taken before any parameter changes.
///
/// The returned report carries the two discriminator objectives as
/// zero-weight parts `disc_xi` and `disc_gamma`.
pub fn train_step_srbvae<M: LatentModel>(
    state: &mut TrainState<M>,
    x_u: &Tensor,
    x_r: &Tensor,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    if cfg.variant != TrainVariant::Srbvae {
        return Err(Error::Config(format!("{:?} variant uses train_step_simple", cfg.variant)));
    }
    let s = cfg.recon_scale()?;
    let model: &dyn LatentModel = &state.model;
    let mut rng = substream(cfg.seed, Stream::Step, state.step);
    let (m_u, m_r) = (x_u.dim(0)?, x_r.dim(0)?);
    let enc = EncoderPath::sample(model, x_u, x_r, &mut rng)?;
    let gen = GeneratorPath::sample(model, m_u, m_r, &mut rng)?;
    let p = model.disc_dropout();
    let masks = if p > 0.0 {
        let (bj, br) = model.disc_blocks();
        let (dt, dev) = (model.dtype(), model.device().clone());
        DiscMasks {
            joint_enc: Some(block_dropout_mask(&mut rng, m_u, bj, p, dt, &dev)?),
            joint_gen: Some(block_dropout_mask(&mut rng, m_u, bj, p, dt, &dev)?),
            ref_enc: Some(block_dropout_mask(&mut rng, m_r, br, p, dt, &dev)?),
            ref_gen: Some(block_dropout_mask(&mut rng, m_r, br, p, dt, &dev)?),
        }
    } else {
        DiscMasks::default()
    };

    let logits = Logits::compute(model, &enc, &gen, &masks)?;
    let mut terms = logits.adversarial_terms()?;
    let recon = explicit_recon_from(model, &enc, &gen, s, &cfg.recon_weights)?;
    if cfg.audit_reference_grad {
        let mut reference: Vec<Term> = recon
            .iter()
            .filter(|t| t.name.ends_with("_r"))
            .cloned()
            .collect();
        reference.extend(terms.iter().filter(|t| t.name == "adv_r").cloned());
        assert_no_reference_leak(model, &Loss::new(reference)?.total)?;
    }
    terms.extend(recon);
    let j = Loss::new(terms)?;

    let det = detach_logits(model, &enc, &gen, &masks)?;
    let d_xi = discriminator_loss(&det.joint_enc, &det.joint_gen)?.affine(0.5, 0.0)?;
    let d_gamma = discriminator_loss(&det.ref_enc, &det.ref_gen)?.affine(0.5, 0.0)?;

    let mut report = j.report()?;
    report.parts.push(Part {
        name: "disc_xi".into(),
        value: scalar(&d_xi)?,
        weight: 0.0,
    });
    report.parts.push(Part {
        name: "disc_gamma".into(),
        value: scalar(&d_gamma)?,
        weight: 0.0,
    });
    check_report(&report)?;

    let g_model = j.total.backward()?;
    let g_disc = (d_xi + d_gamma)?.backward()?;
    let mut pending = Vec::new();
    let model_groups = [Group::EncoderZ, Group::EncoderE, Group::Generator];
    plan_updates(state, &g_model, &model_groups, 1.0, &cfg.adam, &mut pending)?;
    if !cfg.freeze_discriminators {
        let disc_groups = [Group::JointDisc, Group::RefDisc];
        plan_updates(state, &g_disc, &disc_groups, -1.0, &cfg.adam, &mut pending)?;
    }
    commit(state, pending)?;
    Ok(report)
}

/// Dispatch to the update rule of `cfg.variant`.
pub fn train_step<M: LatentModel>(
    state: &mut TrainState<M>,
    x_u: &Tensor,
    x_r: Option<&Tensor>,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    match cfg.variant {
        TrainVariant::Srbvae => {
            let x_r = x_r.ok_or_else(|| Error::Config("adversarial step needs a reference batch".into()))?;
            train_step_srbvae(state, x_u, x_r, cfg)
        }
        _ => train_step_simple(state, Some(x_u), x_r, cfg),
    }
}
