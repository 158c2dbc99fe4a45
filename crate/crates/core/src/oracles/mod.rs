//! Numerical ground truth: divergence identities on a closed-form toy model,
//! density-ratio recovery, and finite-difference gradient checks.
//!
//! [`run_suite`] runs everything and returns one [`CheckOutcome`] per check;
//! its `Display` is one `PASS`/`FAIL` line per check followed by
//! `key=value` fields.

mod gradcheck;
mod ratio;
mod toy;

use std::fmt;

use candle_core::{DType, Device, Tensor};

use crate::error::Result;
use crate::nets::{GaussianParams, LatentModel, ScalarInit, ScalarModel, Variant};
use crate::objectives::{explicit_recon_terms, rbvae_batch_loss, vae_batch_loss, ReconScale, ReconWeights};
use crate::rng::{substream, Stream};

pub use gradcheck::{finite_diff_grad_check, rel_error, GradCheck, DEFAULT_EPS};
pub use ratio::{analytic_gauss_log_ratio, density_ratio_fit_check, RatioFitReport, GRID_POINTS};
pub use toy::{
    mc_kl_forward_identity, mc_kl_reverse_identity, mc_symmetric_identity, AffineGauss, IdentityReport, Joints, Mvn,
    ToyJointModel, CHUNK, REL_TOL, SE_MULT,
};

/// Largest relative gradient error accepted by the suite.
pub const GRAD_TOL: f64 = 1e-3;
/// Largest grid MAE accepted for the density-ratio fit.
pub const RATIO_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    /// Monte-Carlo samples per identity.
    pub n: usize,
    /// Samples per class for the ratio fit.
    pub ratio_n: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n: 100_000,
            ratio_n: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub fields: Vec<(String, f64)>,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, fields: &[(&str, f64)]) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            fields: fields.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn field(&self, key: &str) -> Option<f64> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", if self.passed { "PASS" } else { "FAIL" }, self.name)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v:.6e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

impl From<&IdentityReport> for CheckOutcome {
    fn from(r: &IdentityReport) -> Self {
        CheckOutcome::new(
            r.name,
            r.passes(),
            &[
                ("lhs", r.lhs),
                ("rhs", r.rhs),
                ("constants", r.constants),
                ("alt_rhs", r.alt_rhs),
                ("se", r.std_error),
                ("tol", r.tolerance()),
                ("exact", r.exact),
                ("n", r.n_samples as f64),
            ],
        )
    }
}

/// 1-D Gaussian as [`GaussianParams`] with `(1, 1)` tensors.
pub fn gauss1(mean: f64, sigma: f64) -> Result<GaussianParams> {
    let t = |v: f64| Tensor::new(&[[v]], &Device::Cpu);
    GaussianParams::new(t(mean)?, t(sigma.ln())?)
}

/// The ten-parameter float64 scalar model used for gradient checks; the
/// discriminators are frozen.
pub fn grad_check_model(variant: Variant) -> Result<ScalarModel> {
    let init = ScalarInit {
        frozen: ["xi.w", "xi.b", "gamma.w", "gamma.b"].iter().map(|s| s.to_string()).collect(),
        ..ScalarInit::default()
    };
    ScalarModel::new(&init, variant, DType::F64)
}

fn scalar_batch(values: &[f64]) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, (values.len(), 1, 1, 1), &Device::Cpu)?)
}

/// Unlabelled and reference single-pixel batches for the gradient checks.
pub fn grad_check_batches() -> Result<(Tensor, Tensor)> {
    Ok((
        scalar_batch(&[0.9, -0.3, 0.45, -0.8, 0.1, 0.6])?,
        scalar_batch(&[0.2, -0.55, 0.75, -0.1, 0.35, -0.9])?,
    ))
}

/// Gradient checks of the three batch objectives on the scalar model.
pub fn loss_grad_checks(seed: u64) -> Result<Vec<(&'static str, GradCheck)>> {
    let (x_u, x_r) = grad_check_batches()?;
    let s = ReconScale::default();
    let rng = || substream(seed, Stream::Oracle, 1 << 40);
    let mut out = Vec::new();

    let m = grad_check_model(Variant::RbVae)?;
    let params = named_params(&m);
    let check = finite_diff_grad_check(
        || Ok(rbvae_batch_loss(&m, &x_u, &x_r, s, &mut rng())?.total),
        &params,
        DEFAULT_EPS,
        usize::MAX,
    )?;
    out.push(("rbvae_batch_loss", check));

    let m = grad_check_model(Variant::SrbVae)?;
    let params = named_params(&m);
    let w = ReconWeights::default();
    let check = finite_diff_grad_check(
        || Ok(explicit_recon_terms(&m, &x_u, &x_r, s, &w, &mut rng())?.total),
        &params,
        DEFAULT_EPS,
        usize::MAX,
    )?;
    out.push(("explicit_recon_terms", check));

    let m = grad_check_model(Variant::Vae)?;
    let params = named_params(&m);
    let check = finite_diff_grad_check(
        || Ok(vae_batch_loss(&m, &x_u, 4.0, s, &mut rng())?.total),
        &params,
        DEFAULT_EPS,
        usize::MAX,
    )?;
    out.push(("vae_batch_loss", check));
    Ok(out)
}

fn named_params(m: &dyn LatentModel) -> Vec<(String, candle_core::Var)> {
    m.params().iter().map(|p| (p.name.clone(), p.var.clone())).collect()
}

/// Every oracle check on the default toy model.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let m = ToyJointModel::default();
    let mut checks = Vec::new();
    for r in [
        mc_kl_forward_identity(&m, cfg.n, cfg.seed)?,
        mc_kl_reverse_identity(&m, cfg.n, cfg.seed)?,
        mc_symmetric_identity(&m, cfg.n, cfg.seed)?,
    ] {
        checks.push(CheckOutcome::from(&r));
    }

    let fit = density_ratio_fit_check(&gauss1(1.0, 1.0)?, &gauss1(0.0, 1.0)?, cfg.ratio_n, (-2.0, 3.0), cfg.seed)?;
    checks.push(CheckOutcome::new(
        "density_ratio",
        fit.mae < RATIO_TOL,
        &[("mae", fit.mae), ("max_abs_error", fit.max_abs_error), ("tol", RATIO_TOL)],
    ));

    for (name, g) in loss_grad_checks(cfg.seed)? {
        checks.push(CheckOutcome::new(
            format!("grad_{name}"),
            g.max_rel_error < GRAD_TOL,
            &[("max_rel_error", g.max_rel_error), ("coords", g.coords as f64), ("tol", GRAD_TOL)],
        ));
    }
    Ok(SuiteReport { checks })
}
