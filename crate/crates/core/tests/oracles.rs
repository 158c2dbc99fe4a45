use std::f64::consts::PI;

use candle_core::{DType, Device, Tensor, Var};
use refvae::oracles::*;

// Entropy of a d-dimensional standard normal.
fn std_entropy(d: f64) -> f64 {
    0.5 * d * (1.0 + (2.0 * PI).ln())
}

#[test]
fn default_model_identities_hold() {
    let m = ToyJointModel::default();
    for r in [
        mc_kl_forward_identity(&m, 100_000, 1).unwrap(),
        mc_kl_reverse_identity(&m, 100_000, 1).unwrap(),
        mc_symmetric_identity(&m, 100_000, 1).unwrap(),
    ] {
        assert!(r.passes(), "{r:?}");
        assert!((r.lhs - r.exact).abs() <= 4.0 * r.lhs_std_error, "{r:?}");
        assert_eq!(r.n_samples, 100_000);
    }
}

#[test]
fn matched_model_gives_zero() {
    let m = ToyJointModel::matched(1.3, 0.9, 0.4);
    for r in [
        mc_kl_forward_identity(&m, 20_000, 2).unwrap(),
        mc_kl_reverse_identity(&m, 20_000, 2).unwrap(),
    ] {
        assert!(r.exact.abs() < 1e-10, "{r:?}");
        assert!(r.lhs.abs() < 1e-9, "{r:?}");
        assert!(r.rhs.abs() <= 3.0 * r.std_error, "{r:?}");
    }
}

#[test]
fn standard_error_scales_with_root_n() {
    let m = ToyJointModel::default();
    let a = mc_kl_forward_identity(&m, 20_000, 3).unwrap();
    let b = mc_kl_forward_identity(&m, 40_000, 3).unwrap();
    let ratio = b.std_error / a.std_error;
    assert!((ratio - 0.5f64.sqrt()).abs() < 0.07, "{ratio}");
}

#[test]
fn reverse_constants_are_prior_entropies() {
    let r = mc_kl_reverse_identity(&ToyJointModel::default(), 50_000, 4).unwrap();
    let c = -std_entropy(2.0) - 0.5 * std_entropy(2.0);
    assert!((r.constants - c).abs() < 1e-12);
    // Without them the sides differ by exactly that constant.
    assert!(((r.lhs - r.alt_rhs) - c).abs() <= 3.0 * r.std_error);
    assert!(!r.alt_passes());
}

#[test]
fn forward_entropies_carry_a_half() {
    let m = ToyJointModel::default();
    let r = mc_kl_forward_identity(&m, 50_000, 5).unwrap();
    // Gaussian entropy from the determinant of the 2x2 covariance.
    let h = |c: &nalgebra::Matrix2<f64>| std_entropy(2.0) + 0.5 * c.determinant().ln();
    let expected = -0.5 * h(&m.cov_u) - 0.5 * h(&m.cov_r);
    assert!((r.constants - expected).abs() < 1e-12);
    assert!(r.passes());
    assert!(!r.alt_passes(), "{r:?}");
}

#[test]
fn symmetric_kl_properties() {
    let m = ToyJointModel::default();
    let s = mc_symmetric_identity(&m, 50_000, 6).unwrap();
    let f = mc_kl_forward_identity(&m, 50_000, 6).unwrap();
    let r = mc_kl_reverse_identity(&m, 50_000, 6).unwrap();
    assert!(s.lhs >= 0.0 && s.exact >= 0.0);
    assert!((s.exact - (f.exact + r.exact)).abs() < 1e-12);
    assert!(!s.alt_passes());
}

#[test]
fn mvn_kl_matches_scalar_formula() {
    let (m1, s1, m2, s2) = (0.3, 0.7, -0.4, 1.6);
    let p = Mvn::new(nalgebra::DVector::from_vec(vec![m1]), nalgebra::DMatrix::from_element(1, 1, s1 * s1)).unwrap();
    let q = Mvn::new(nalgebra::DVector::from_vec(vec![m2]), nalgebra::DMatrix::from_element(1, 1, s2 * s2)).unwrap();
    let want = (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5;
    assert!((p.kl(&q) - want).abs() < 1e-12);
    assert!((p.entropy() - (0.5 * (2.0 * PI * std::f64::consts::E).ln() + s1.ln())).abs() < 1e-12);
}

#[test]
fn identical_gaussians_have_zero_log_ratio() {
    let x = Tensor::new(&[-2.0f64, 0.0, 1.5, 3.0], &Device::Cpu).unwrap();
    let p = gauss1(0.0, 1.0).unwrap();
    let r = analytic_gauss_log_ratio(&p, &p, &x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    assert!(r.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn shifted_unit_gaussians_ratio_is_linear() {
    let xs = [-2.0f64, -0.5, 0.0, 0.7, 3.0];
    let x = Tensor::new(&xs, &Device::Cpu).unwrap();
    let r = analytic_gauss_log_ratio(&gauss1(1.0, 1.0).unwrap(), &gauss1(0.0, 1.0).unwrap(), &x)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();
    for (x, r) in xs.iter().zip(r) {
        assert!((r - (x - 0.5)).abs() < 1e-12);
    }
}

#[test]
fn fitted_discriminator_recovers_ratio() {
    let t = std::time::Instant::now();
    let fit = density_ratio_fit_check(&gauss1(1.0, 1.0).unwrap(), &gauss1(0.0, 1.0).unwrap(), 10_000, (-2.0, 3.0), 7)
        .unwrap();
    assert!(fit.mae < 0.1, "{fit:?}");
    assert_eq!(fit.grid.len(), GRID_POINTS);
    assert!(t.elapsed().as_secs() < 60);
}

fn quad_params() -> Vec<(String, Var)> {
    let v = Var::from_tensor(&Tensor::new(&[0.3f64, -1.2, 2.5], &Device::Cpu).unwrap()).unwrap();
    vec![("w".into(), v)]
}

#[test]
fn quadratic_gradient_is_exact() {
    let p = quad_params();
    let v = p[0].1.clone();
    let g = finite_diff_grad_check(|| Ok(v.as_tensor().sqr()?.sum_all()?.affine(1.5, 0.2)?), &p, DEFAULT_EPS, 10)
        .unwrap();
    assert!(g.max_rel_error < 1e-8, "{g:?}");
    assert_eq!(g.coords, 3);
}

#[test]
fn injected_sign_error_is_caught() {
    let p = quad_params();
    let v = p[0].1.clone();
    // Same value as sum(3 w), but the gradient path is negated.
    let g = finite_diff_grad_check(
        || {
            let w = v.as_tensor();
            let flipped = (w.detach() * 2.0 - w)?;
            Ok(flipped.sum_all()?.affine(3.0, 0.0)?)
        },
        &p,
        DEFAULT_EPS,
        10,
    )
    .unwrap();
    assert!(g.max_rel_error > 1.0, "{g:?}");
}

#[test]
fn f32_parameters_rejected() {
    let v = Var::from_tensor(&Tensor::new(&[1.0f32], &Device::Cpu).unwrap()).unwrap();
    let p = vec![("w".to_string(), v.clone())];
    assert!(finite_diff_grad_check(|| Ok(v.as_tensor().to_dtype(DType::F64)?.sum_all()?), &p, 1e-4, 1).is_err());
}

#[test]
fn batch_objectives_pass_gradient_check() {
    for (name, g) in loss_grad_checks(0).unwrap() {
        assert!(g.max_rel_error < 1e-3, "{name}: {g:?}");
        assert!(g.coords <= 10, "{name}: {g:?}");
    }
}

#[test]
fn suite_report_lines() {
    let cfg = SuiteConfig { n: 10_000, ratio_n: 2_000, seed: 3 };
    let report = run_suite(&cfg).unwrap();
    let text = report.to_string();
    assert_eq!(report.checks.len(), 7);
    for c in &report.checks {
        assert!(text.contains(&format!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name)));
    }
}
