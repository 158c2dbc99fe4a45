//! Linear-Gaussian toy instance of the reference-based model, small enough
//! that every density and divergence has a closed form.
//!
//! ```text
//! p(z) = N(0, I)        p(e) = N(0, I)        p(y) = 1/2
//! p(x|z,e) = N(A z + B e + c, diag(noise)^2)
//! q(z|x)  = N(Kz x + kz, diag(sz)^2)          q(e|x) = N(Ke x + ke, diag(se)^2)
//! p^u(x)  = N(mu_u, S_u)                      p^r(x) = N(mu_r, S_r)
//! ```
//!
//! Reference samples use `e = e_ref` on both sides, so the Dirac factors
//! cancel and the reference branch lives over `(x, z)` only.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct Mvn {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl Mvn {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Shape(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation("covariance is not positive definite".into()))?
            .l();
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Mvn {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + y.norm_squared())
    }

    pub fn entropy(&self) -> f64 {
        0.5 * (self.dim() as f64 * (1.0 + LN_2PI) + self.log_det)
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &Mvn) -> f64 {
        let k = self.dim() as f64;
        let inv_l = other
            .chol
            .clone()
            .solve_lower_triangular(&DMatrix::identity(other.dim(), other.dim()))
            .expect("Cholesky factor has a positive diagonal");
        let other_inv = inv_l.transpose() * &inv_l;
        let d = &other.mean - &self.mean;
        let trace = (&other_inv * &self.cov).trace();
        let maha = (d.transpose() * &other_inv * &d)[(0, 0)];
        0.5 * (trace + maha - k + other.log_det - self.log_det)
    }

    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        &self.mean + &self.chol * eps
    }
}

/// Diagonal Gaussian with an affine mean: `N(k x + offset, diag(sigma)^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineGauss {
    pub k: Matrix2<f64>,
    pub offset: Vector2<f64>,
    pub sigma: Vector2<f64>,
}

impl AffineGauss {
    pub fn mean(&self, x: &Vector2<f64>) -> Vector2<f64> {
        self.k * x + self.offset
    }

    pub fn log_pdf(&self, v: &Vector2<f64>, x: &Vector2<f64>) -> f64 {
        diag_log_pdf(v, &self.mean(x), &self.sigma)
    }

    /// `KL(N(mean(x), sigma) || N(0, I))`.
    pub fn kl_to_std(&self, x: &Vector2<f64>) -> f64 {
        let m = self.mean(x);
        (0..2)
            .map(|i| 0.5 * (self.sigma[i].powi(2) + m[i].powi(2) - 1.0) - self.sigma[i].ln())
            .sum()
    }

    fn sample(&self, x: &Vector2<f64>, rng: &mut Rng) -> Vector2<f64> {
        self.mean(x) + self.sigma.component_mul(&std2(rng))
    }
}

fn diag_log_pdf(v: &Vector2<f64>, mean: &Vector2<f64>, sigma: &Vector2<f64>) -> f64 {
    (0..2)
        .map(|i| {
            let u = (v[i] - mean[i]) / sigma[i];
            -0.5 * (LN_2PI + u * u) - sigma[i].ln()
        })
        .sum()
}

fn std2(rng: &mut Rng) -> Vector2<f64> {
    Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

fn std_log_pdf(v: &Vector2<f64>) -> f64 {
    diag_log_pdf(v, &Vector2::zeros(), &Vector2::new(1.0, 1.0))
}

fn dv(v: &Vector2<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

fn stack(parts: &[&Vector2<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.len() * 2, parts.iter().flat_map(|p| p.iter().copied()))
}

/// Dense matrix from 2x2 blocks laid out row-major.
fn blocks(rows: &[Vec<Matrix2<f64>>]) -> DMatrix<f64> {
    let n = rows.len() * 2;
    let mut out = DMatrix::zeros(n, n);
    for (bi, row) in rows.iter().enumerate() {
        for (bj, b) in row.iter().enumerate() {
            out.view_mut((2 * bi, 2 * bj), (2, 2)).copy_from(b);
        }
    }
    out
}

/// Fixed 2/2/2 linear-Gaussian model; see the module docs for the roles.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyJointModel {
    pub gen_z: Matrix2<f64>,
    pub gen_e: Matrix2<f64>,
    pub gen_bias: Vector2<f64>,
    pub noise: Vector2<f64>,
    pub enc_z: AffineGauss,
    pub enc_e: AffineGauss,
    pub mean_u: Vector2<f64>,
    pub cov_u: Matrix2<f64>,
    pub mean_r: Vector2<f64>,
    pub cov_r: Matrix2<f64>,
    pub e_ref: Vector2<f64>,
}

impl Default for ToyJointModel {
    fn default() -> Self {
        ToyJointModel {
            gen_z: Matrix2::new(1.0, 0.3, -0.2, 0.8),
            gen_e: Matrix2::new(0.5, -0.4, 0.6, 0.9),
            gen_bias: Vector2::new(0.2, -0.1),
            noise: Vector2::new(0.5, 0.4),
            enc_z: AffineGauss {
                k: Matrix2::new(0.4, -0.1, 0.2, 0.3),
                offset: Vector2::new(0.05, -0.05),
                sigma: Vector2::new(0.6, 0.7),
            },
            enc_e: AffineGauss {
                k: Matrix2::new(0.2, 0.35, -0.3, 0.25),
                offset: Vector2::new(0.0, 0.1),
                sigma: Vector2::new(0.8, 0.5),
            },
            mean_u: Vector2::new(0.3, -0.2),
            cov_u: Matrix2::new(1.8, 0.4, 0.4, 1.5),
            mean_r: Vector2::new(0.5, 0.3),
            cov_r: Matrix2::new(1.3, -0.2, -0.2, 0.5),
            e_ref: Vector2::new(0.4, -0.6),
        }
    }
}

/// Closed-form joints of both branches.
#[derive(Debug, Clone)]
pub struct Joints {
    /// Encoder path over `(x, z, e)` for unlabelled data.
    pub q_u: Mvn,
    /// Generator path over `(x, z, e)`.
    pub p_u: Mvn,
    /// Encoder path over `(x, z)` for reference data.
    pub q_r: Mvn,
    /// Generator path over `(x, z)` with `e = e_ref`.
    pub p_r: Mvn,
}

impl ToyJointModel {
    /// A model whose encoders are the exact posteriors of its generator and
    /// whose data marginals are the generator's, so both joints coincide.
    ///
    /// `x1` depends only on `z1` and `x2` only on `e2`; the remaining latent
    /// coordinates keep their prior as posterior.
    pub fn matched(a: f64, b: f64, noise: f64) -> Self {
        let s2 = noise * noise;
        let c = Vector2::new(0.1, -0.3);
        let e_ref = Vector2::new(0.0, 0.7);
        let kz = Matrix2::new(a / (a * a + s2), 0.0, 0.0, 0.0);
        let ke = Matrix2::new(0.0, 0.0, 0.0, b / (b * b + s2));
        let gen_e = Matrix2::new(0.0, 0.0, 0.0, b);
        ToyJointModel {
            gen_z: Matrix2::new(a, 0.0, 0.0, 0.0),
            gen_e,
            gen_bias: c,
            noise: Vector2::new(noise, noise),
            enc_z: AffineGauss {
                k: kz,
                offset: -(kz * c),
                sigma: Vector2::new((s2 / (a * a + s2)).sqrt(), 1.0),
            },
            enc_e: AffineGauss {
                k: ke,
                offset: -(ke * c),
                sigma: Vector2::new(1.0, (s2 / (b * b + s2)).sqrt()),
            },
            mean_u: c,
            cov_u: Matrix2::new(a * a + s2, 0.0, 0.0, b * b + s2),
            mean_r: c + gen_e * e_ref,
            cov_r: Matrix2::new(a * a + s2, 0.0, 0.0, s2),
            e_ref,
        }
    }

    fn noise_cov(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&self.noise.component_mul(&self.noise))
    }

    pub fn marginal_u(&self) -> Result<Mvn> {
        Mvn::new(dv(&self.mean_u), DMatrix::from_column_slice(2, 2, self.cov_u.as_slice()))
    }

    pub fn marginal_r(&self) -> Result<Mvn> {
        Mvn::new(dv(&self.mean_r), DMatrix::from_column_slice(2, 2, self.cov_r.as_slice()))
    }

    /// `p(x|z,e)` as a distribution over `x`.
    pub fn likelihood(&self, z: &Vector2<f64>, e: &Vector2<f64>) -> Result<Mvn> {
        let m = self.gen_z * z + self.gen_e * e + self.gen_bias;
        let c = self.noise_cov();
        Mvn::new(dv(&m), DMatrix::from_column_slice(2, 2, c.as_slice()))
    }

    pub fn log_likelihood(&self, x: &Vector2<f64>, z: &Vector2<f64>, e: &Vector2<f64>) -> f64 {
        let m = self.gen_z * z + self.gen_e * e + self.gen_bias;
        diag_log_pdf(x, &m, &self.noise)
    }

    pub fn joints(&self) -> Result<Joints> {
        let id = Matrix2::identity();
        let zero = Matrix2::zeros();
        let (a, b) = (self.gen_z, self.gen_e);
        let (kz, ke) = (self.enc_z.k, self.enc_e.k);
        let dz = Matrix2::from_diagonal(&self.enc_z.sigma.component_mul(&self.enc_z.sigma));
        let de = Matrix2::from_diagonal(&self.enc_e.sigma.component_mul(&self.enc_e.sigma));
        let n = self.noise_cov();

        let su = self.cov_u;
        let q_u = Mvn::new(
            stack(&[&self.mean_u, &self.enc_z.mean(&self.mean_u), &self.enc_e.mean(&self.mean_u)]),
            blocks(&[
                vec![su, su * kz.transpose(), su * ke.transpose()],
                vec![kz * su, kz * su * kz.transpose() + dz, kz * su * ke.transpose()],
                vec![ke * su, ke * su * kz.transpose(), ke * su * ke.transpose() + de],
            ]),
        )?;
        let p_u = Mvn::new(
            stack(&[&self.gen_bias, &Vector2::zeros(), &Vector2::zeros()]),
            blocks(&[
                vec![a * a.transpose() + b * b.transpose() + n, a, b],
                vec![a.transpose(), id, zero],
                vec![b.transpose(), zero, id],
            ]),
        )?;
        let sr = self.cov_r;
        let q_r = Mvn::new(
            stack(&[&self.mean_r, &self.enc_z.mean(&self.mean_r)]),
            blocks(&[
                vec![sr, sr * kz.transpose()],
                vec![kz * sr, kz * sr * kz.transpose() + dz],
            ]),
        )?;
        let p_r = Mvn::new(
            stack(&[&(self.gen_e * self.e_ref + self.gen_bias), &Vector2::zeros()]),
            blocks(&[vec![a * a.transpose() + n, a], vec![a.transpose(), id]]),
        )?;
        Ok(Joints { q_u, p_u, q_r, p_r })
    }

    /// Log-ratio of the unlabelled joints, `log q_u / p_u`, from the factors.
    pub fn log_ratio_xze(&self, pu: &Mvn, x: &Vector2<f64>, z: &Vector2<f64>, e: &Vector2<f64>) -> f64 {
        self.enc_z.log_pdf(z, x) + self.enc_e.log_pdf(e, x) + pu.log_pdf(&dv(x))
            - self.log_likelihood(x, z, e)
            - std_log_pdf(z)
            - std_log_pdf(e)
    }

    /// Log-ratio of the reference joints, `log q_r / p_r`, from the factors.
    pub fn log_ratio_xz(&self, pr: &Mvn, x: &Vector2<f64>, z: &Vector2<f64>) -> f64 {
        self.enc_z.log_pdf(z, x) + pr.log_pdf(&dv(x)) - self.log_likelihood(x, z, &self.e_ref) - std_log_pdf(z)
    }

    fn check_n(n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::Config(format!("need at least two samples, got {n}")));
        }
        Ok(())
    }
}

/// One draw along each path and branch.
struct Draw {
    q_u: [Vector2<f64>; 3],
    q_r: [Vector2<f64>; 2],
    p_u: [Vector2<f64>; 3],
    p_r: [Vector2<f64>; 2],
}

fn draw(m: &ToyJointModel, mu: &Mvn, mr: &Mvn, rng: &mut Rng) -> Draw {
    let to2 = |v: DVector<f64>| Vector2::new(v[0], v[1]);
    let x = to2(mu.sample(rng));
    let qz = m.enc_z.sample(&x, rng);
    let qe = m.enc_e.sample(&x, rng);
    let xr = to2(mr.sample(rng));
    let qzr = m.enc_z.sample(&xr, rng);
    let (z, e, zr) = (std2(rng), std2(rng), std2(rng));
    let xg = m.gen_z * z + m.gen_e * e + m.gen_bias + m.noise.component_mul(&std2(rng));
    let xgr = m.gen_z * zr + m.gen_e * m.e_ref + m.gen_bias + m.noise.component_mul(&std2(rng));
    Draw {
        q_u: [x, qz, qe],
        q_r: [xr, qzr],
        p_u: [xg, z, e],
        p_r: [xgr, zr],
    }
}

/// Chunk size of the sample loop; each chunk owns a substream.
pub const CHUNK: usize = 4096;

fn for_each_draw(
    m: &ToyJointModel,
    n: usize,
    seed: u64,
    mut f: impl FnMut(&Draw) -> Result<(f64, f64)>,
) -> Result<Paired> {
    let mu = m.marginal_u()?;
    let mr = m.marginal_r()?;
    let mut acc = Paired::default();
    for chunk in 0..n.div_ceil(CHUNK) {
        let mut rng = substream(seed, Stream::Oracle, chunk as u64);
        let len = CHUNK.min(n - chunk * CHUNK);
        for _ in 0..len {
            let (lhs, rhs) = f(&draw(m, &mu, &mr, &mut rng))?;
            acc.push(lhs, rhs);
        }
    }
    Ok(acc)
}

/// Running sums for two paired per-sample estimators.
#[derive(Debug, Default)]
struct Paired {
    n: usize,
    lhs: f64,
    lhs_sq: f64,
    rhs: f64,
    diff: f64,
    diff_sq: f64,
}

impl Paired {
    fn push(&mut self, lhs: f64, rhs: f64) {
        let d = lhs - rhs;
        self.n += 1;
        self.lhs += lhs;
        self.lhs_sq += lhs * lhs;
        self.rhs += rhs;
        self.diff += d;
        self.diff_sq += d * d;
    }

    fn se(sum: f64, sq: f64, n: usize) -> f64 {
        let n = n as f64;
        let mean = sum / n;
        ((sq / n - mean * mean).max(0.0) * n / (n - 1.0) / n).sqrt()
    }
}

/// Outcome of one identity check. Both sides come from the same draws; the
/// right side carries analytic constants added after averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub name: &'static str,
    /// Monte-Carlo estimate of the divergence itself.
    pub lhs: f64,
    /// Monte-Carlo estimate of the decomposed objective plus `constants`.
    pub rhs: f64,
    /// Analytic constants included in `rhs`.
    pub constants: f64,
    /// The decomposed objective under the alternative bookkeeping named by
    /// `alt_label`.
    pub alt_rhs: f64,
    pub alt_label: &'static str,
    /// Standard error of the paired difference `lhs - rhs`.
    pub std_error: f64,
    /// Standard error of `lhs` alone.
    pub lhs_std_error: f64,
    /// Closed-form value of the divergence.
    pub exact: f64,
    pub n_samples: usize,
}

/// Relative part of the tolerance.
pub const REL_TOL: f64 = 0.02;
/// Multiple of the standard error allowed by the tolerance.
pub const SE_MULT: f64 = 3.0;

impl IdentityReport {
    fn build(name: &'static str, p: Paired, constants: f64, exact: f64, alt: (&'static str, f64)) -> Self {
        let n = p.n as f64;
        IdentityReport {
            name,
            lhs: p.lhs / n,
            rhs: p.rhs / n + constants,
            constants,
            alt_rhs: alt.1,
            alt_label: alt.0,
            std_error: Paired::se(p.diff, p.diff_sq, p.n),
            lhs_std_error: Paired::se(p.lhs, p.lhs_sq, p.n),
            exact,
            n_samples: p.n,
        }
    }

    /// `max(REL_TOL |lhs|, SE_MULT se)`, with a rounding floor.
    pub fn tolerance(&self) -> f64 {
        (REL_TOL * self.lhs.abs()).max(SE_MULT * self.std_error).max(1e-9)
    }

    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn passes(&self) -> bool {
        self.gap() <= self.tolerance()
    }

    pub fn alt_passes(&self) -> bool {
        (self.lhs - self.alt_rhs).abs() <= self.tolerance()
    }
}

/// `KL(q || p)` over both branches against its decomposition into latent
/// KLs and reconstruction likelihoods, with `-H^u/2 - H^r/2` added back.
/// The alternative drops the halves on the entropies.
pub fn mc_kl_forward_identity(m: &ToyJointModel, n: usize, seed: u64) -> Result<IdentityReport> {
    ToyJointModel::check_n(n)?;
    let j = m.joints()?;
    let h_u = m.marginal_u()?.entropy();
    let h_r = m.marginal_r()?.entropy();
    let p = for_each_draw(m, n, seed, |d| {
        let [x, z, e] = &d.q_u;
        let [xr, zr] = &d.q_r;
        let lhs = 0.5 * (j.q_u.log_pdf(&stack(&[x, z, e])) - j.p_u.log_pdf(&stack(&[x, z, e])))
            + 0.5 * (j.q_r.log_pdf(&stack(&[xr, zr])) - j.p_r.log_pdf(&stack(&[xr, zr])));
        let rhs = 0.5 * (m.enc_z.kl_to_std(x) + m.enc_e.kl_to_std(x) - m.log_likelihood(x, z, e))
            + 0.5 * (m.enc_z.kl_to_std(xr) - m.log_likelihood(xr, zr, &m.e_ref));
        Ok((lhs, rhs))
    })?;
    let constants = -0.5 * h_u - 0.5 * h_r;
    let exact = 0.5 * j.q_u.kl(&j.p_u) + 0.5 * j.q_r.kl(&j.p_r);
    let objective = p.rhs / p.n as f64;
    Ok(IdentityReport::build(
        "forward_kl",
        p,
        constants,
        exact,
        ("entropies without 1/2", objective - h_u - h_r),
    ))
}

/// `KL(p || q)` against its decomposition into data-space KLs and latent
/// reconstruction likelihoods, with `-H(z) - H(e)/2` added back. The
/// alternative omits the constants.
pub fn mc_kl_reverse_identity(m: &ToyJointModel, n: usize, seed: u64) -> Result<IdentityReport> {
    ToyJointModel::check_n(n)?;
    let j = m.joints()?;
    let (mu, mr) = (m.marginal_u()?, m.marginal_r()?);
    let prior = Mvn::new(DVector::zeros(2), DMatrix::identity(2, 2))?;
    let p = for_each_draw(m, n, seed, |d| {
        let [x, z, e] = &d.p_u;
        let [xr, zr] = &d.p_r;
        let lhs = 0.5 * (j.p_u.log_pdf(&stack(&[x, z, e])) - j.q_u.log_pdf(&stack(&[x, z, e])))
            + 0.5 * (j.p_r.log_pdf(&stack(&[xr, zr])) - j.q_r.log_pdf(&stack(&[xr, zr])));
        let rhs = 0.5 * (m.likelihood(z, e)?.kl(&mu) - m.enc_z.log_pdf(z, x) - m.enc_e.log_pdf(e, x))
            + 0.5 * (m.likelihood(zr, &m.e_ref)?.kl(&mr) - m.enc_z.log_pdf(zr, xr));
        Ok((lhs, rhs))
    })?;
    let constants = -prior.entropy() - 0.5 * prior.entropy();
    let exact = 0.5 * j.p_u.kl(&j.q_u) + 0.5 * j.p_r.kl(&j.q_r);
    let objective = p.rhs / p.n as f64;
    Ok(IdentityReport::build("reverse_kl", p, constants, exact, ("constants omitted", objective)))
}

/// Sum of both KLs against half the difference of the log-ratio
/// expectations under the two paths. The alternative drops the half.
pub fn mc_symmetric_identity(m: &ToyJointModel, n: usize, seed: u64) -> Result<IdentityReport> {
    ToyJointModel::check_n(n)?;
    let j = m.joints()?;
    let (mu, mr) = (m.marginal_u()?, m.marginal_r()?);
    let p = for_each_draw(m, n, seed, |d| {
        let [x, z, e] = &d.q_u;
        let [xr, zr] = &d.q_r;
        let [gx, gz, ge] = &d.p_u;
        let [gxr, gzr] = &d.p_r;
        let forward = 0.5 * (j.q_u.log_pdf(&stack(&[x, z, e])) - j.p_u.log_pdf(&stack(&[x, z, e])))
            + 0.5 * (j.q_r.log_pdf(&stack(&[xr, zr])) - j.p_r.log_pdf(&stack(&[xr, zr])));
        let reverse = 0.5 * (j.p_u.log_pdf(&stack(&[gx, gz, ge])) - j.q_u.log_pdf(&stack(&[gx, gz, ge])))
            + 0.5 * (j.p_r.log_pdf(&stack(&[gxr, gzr])) - j.q_r.log_pdf(&stack(&[gxr, gzr])));
        let rhs = 0.5
            * (m.log_ratio_xze(&mu, x, z, e) + m.log_ratio_xz(&mr, xr, zr)
                - m.log_ratio_xze(&mu, gx, gz, ge)
                - m.log_ratio_xz(&mr, gxr, gzr));
        Ok((forward + reverse, rhs))
    })?;
    let exact = 0.5 * (j.q_u.kl(&j.p_u) + j.q_r.kl(&j.p_r) + j.p_u.kl(&j.q_u) + j.p_r.kl(&j.q_r));
    let objective = p.rhs / p.n as f64;
    Ok(IdentityReport::build("symmetric_kl", p, 0.0, exact, ("without the 1/2 scale", 2.0 * objective)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mvn_kl_of_itself_is_zero() {
        let j = ToyJointModel::default().joints().unwrap();
        assert!(j.q_u.kl(&j.q_u).abs() < 1e-12);
        assert!(j.q_u.kl(&j.p_u) > 0.0);
    }

    #[test]
    fn matched_joints_coincide() {
        let j = ToyJointModel::matched(1.2, 0.8, 0.5).joints().unwrap();
        assert!((&j.q_u.cov - &j.p_u.cov).abs().max() < 1e-12);
        assert!((&j.q_u.mean - &j.p_u.mean).abs().max() < 1e-12);
        assert!((&j.q_r.cov - &j.p_r.cov).abs().max() < 1e-12);
        assert!((&j.q_r.mean - &j.p_r.mean).abs().max() < 1e-12);
    }
}
