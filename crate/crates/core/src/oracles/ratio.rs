//! Log-density ratios of Gaussians and their recovery by logistic regression.

use candle_core::{DType, Tensor};
use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nets::GaussianParams;
use crate::rng::{substream, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn log_normal(x: &Tensor, p: &GaussianParams) -> Result<Tensor> {
    let u = x.broadcast_sub(&p.mu)?.broadcast_div(&p.sigma()?)?;
    let quad = (u.sqr()? + LN_2PI)?.affine(-0.5, 0.0)?;
    Ok(quad.broadcast_sub(&p.log_sigma)?)
}

/// Elementwise `log N(x | p1) - log N(x | p2)` for diagonal Gaussians;
/// parameters broadcast against `x`.
pub fn analytic_gauss_log_ratio(p1: &GaussianParams, p2: &GaussianParams, x: &Tensor) -> Result<Tensor> {
    Ok((log_normal(x, p1)? - log_normal(x, p2)?)?)
}

fn scalar_of(t: &Tensor, what: &str) -> Result<f64> {
    if t.elem_count() != 1 {
        return Err(Error::Shape(format!("{what} must be a single value, got {:?}", t.dims())));
    }
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?[0])
}

fn univariate(p: &GaussianParams) -> Result<(f64, f64)> {
    Ok((scalar_of(&p.mu, "mean")?, scalar_of(&p.log_sigma, "log-sigma")?.exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioFitReport {
    /// Logit coefficients on `[1, x, x^2]`.
    pub coef: [f64; 3],
    pub n_per_side: usize,
    /// `(x, fitted logit, analytic log-ratio)` on the grid.
    pub grid: Vec<(f64, f64, f64)>,
    pub mae: f64,
    pub max_abs_error: f64,
}

impl RatioFitReport {
    pub fn logit(&self, x: f64) -> f64 {
        self.coef[0] + self.coef[1] * x + self.coef[2] * x * x
    }
}

/// Grid resolution of [`density_ratio_fit_check`].
pub const GRID_POINTS: usize = 101;

/// Fit a logistic discriminator with a quadratic logit between `n` draws of
/// the 1-D Gaussian `p1` (positive class) and `n` of `p2`, then compare its
/// logit with the analytic log-ratio on `GRID_POINTS` points of `range`.
pub fn density_ratio_fit_check(
    p1: &GaussianParams,
    p2: &GaussianParams,
    n: usize,
    range: (f64, f64),
    seed: u64,
) -> Result<RatioFitReport> {
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 samples per side, got {n}")));
    }
    if !(range.0 < range.1) {
        return Err(Error::Config(format!("empty grid range {range:?}")));
    }
    let (m1, s1) = univariate(p1)?;
    let (m2, s2) = univariate(p2)?;
    let d1 = Normal::new(m1, s1).map_err(|e| Error::Config(e.to_string()))?;
    let d2 = Normal::new(m2, s2).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = substream(seed, Stream::Oracle, u64::MAX);
    let mut xs = Vec::with_capacity(2 * n);
    xs.extend((0..n).map(|_| (d1.sample(&mut rng), 1.0)));
    xs.extend((0..n).map(|_| (d2.sample(&mut rng), 0.0)));

    // Newton iterations on the mean log-likelihood.
    let mut w = Vector3::zeros();
    for _ in 0..50 {
        let mut grad = Vector3::zeros();
        let mut hess = Matrix3::zeros();
        for &(x, y) in &xs {
            let f = Vector3::new(1.0, x, x * x);
            let s = 1.0 / (1.0 + (-w.dot(&f)).exp());
            grad += f * (y - s);
            hess += f * f.transpose() * (s * (1.0 - s));
        }
        hess += Matrix3::identity() * 1e-9;
        let step = hess
            .cholesky()
            .ok_or(Error::Degenerate { condition: f64::INFINITY })?
            .solve(&grad);
        w += step;
        if step.amax() < 1e-12 {
            break;
        }
    }

    let mut report = RatioFitReport {
        coef: [w[0], w[1], w[2]],
        n_per_side: n,
        grid: Vec::with_capacity(GRID_POINTS),
        mae: 0.0,
        max_abs_error: 0.0,
    };
    let step = (range.1 - range.0) / (GRID_POINTS - 1) as f64;
    for i in 0..GRID_POINTS {
        let x = range.0 + step * i as f64;
        let analytic = log_pdf(x, m1, s1) - log_pdf(x, m2, s2);
        let fitted = report.logit(x);
        let err = (fitted - analytic).abs();
        report.mae += err / GRID_POINTS as f64;
        report.max_abs_error = report.max_abs_error.max(err);
        report.grid.push((x, fitted, analytic));
    }
    Ok(report)
}

fn log_pdf(x: f64, m: f64, s: f64) -> f64 {
    let u = (x - m) / s;
    -0.5 * (LN_2PI + u * u) - s.ln()
}
