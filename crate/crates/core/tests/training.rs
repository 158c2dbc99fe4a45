mod common;

use candle_core::{DType, Device, Tensor};
use common::{pixels, tiny_arch, values};
use refvae::data::make_toy_dataset;
use refvae::nets::{ConvModel, LatentModel, ScalarInit, ScalarModel, Variant};
use refvae::objectives::{rbvae_unlabelled_terms, Loss, ReconScale, ReconWeights};
use refvae::rng::{substream, Stream};
use refvae::train::*;
use refvae::Error;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn adam_matches_hand_formula() {
    let hp = AdamConfig {
        learning_rate: 0.05,
        beta1: 0.5,
        beta2: 0.99,
        eps: 1e-8,
    };
    let grads = [[0.3, -2.0], [-0.1, 0.5], [1.5, 0.0]];
    let mut p = Tensor::new(&[1.0f64, -1.0], &Device::Cpu).unwrap();
    let mut mom = Moments::zeros_like(&p).unwrap();
    let (mut hp_p, mut m, mut v) = ([1.0f64, -1.0], [0.0; 2], [0.0; 2]);
    for (t, g) in grads.iter().enumerate() {
        let t = t as u64 + 1;
        let gt = Tensor::new(&g[..], &Device::Cpu).unwrap();
        (p, mom) = adam_update(&p, &gt, &mom, t, &hp).unwrap();
        for i in 0..2 {
            m[i] = 0.5 * m[i] + 0.5 * g[i];
            v[i] = 0.99 * v[i] + 0.01 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.5f64.powi(t as i32));
            let vh = v[i] / (1.0 - 0.99f64.powi(t as i32));
            hp_p[i] -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        for (a, b) in values(&p).iter().zip(&hp_p) {
            assert!((a - b).abs() < 1e-12, "step {t}: {a} vs {b}");
        }
    }
    // The first step has magnitude lr whatever the gradient scale.
    let g = Tensor::new(&[1e-3f64], &Device::Cpu).unwrap();
    let p0 = Tensor::new(&[0.0f64], &Device::Cpu).unwrap();
    let (p1, _) = adam_update(&p0, &g, &Moments::zeros_like(&p0).unwrap(), 1, &hp).unwrap();
    assert!((values(&p1)[0] + 0.05).abs() < 1e-6);
    assert!(adam_update(&p0, &g, &Moments::zeros_like(&p0).unwrap(), 0, &hp).is_err());
}

struct Expected {
    a: f64,
    b: f64,
    theta: f64,
    r: f64,
    xi: f64,
    gamma: f64,
}

/// Hand-derived gradient signs for the saddle model at unit inputs.
fn hand_directions(a: f64, b: f64, theta: f64, r: f64, xi: f64, gamma: f64) -> Expected {
    // Descent on xi (1 + a + b) - xi theta + gamma (1 + a) - gamma (theta - r).
    let da = -(xi + gamma);
    let db = -xi;
    let dtheta = xi + gamma;
    let dr = -gamma;
    // Ascent on half the logistic objective, encoder path positive.
    let (pu, nu) = (1.0 + a + b, theta);
    let dxi = 0.5 * (pu * (1.0 - sigmoid(xi * pu)) - nu * sigmoid(xi * nu));
    let (pr, nr) = (1.0 + a, theta - r);
    let dgamma = 0.5 * (pr * (1.0 - sigmoid(gamma * pr)) - nr * sigmoid(gamma * nr));
    Expected {
        a: da,
        b: db,
        theta: dtheta,
        r: dr,
        xi: dxi,
        gamma: dgamma,
    }
}

fn saddle_step(a: f64, b: f64, theta: f64, r: f64, xi: f64, gamma: f64) -> (TrainState<ScalarModel>, f64) {
    let init = ScalarInit::saddle(a, b, theta, r, xi, gamma);
    let model = ScalarModel::new(&init, Variant::SrbVae, DType::F64).unwrap();
    let mut state = TrainState::new(model).unwrap();
    let mut cfg = TrainConfig::new(TrainVariant::Srbvae, 1, 5);
    cfg.recon_weights = ReconWeights::zero();
    let lr = cfg.adam.learning_rate;
    let ones = pixels(&[1.0; 6]);
    train_step_srbvae(&mut state, &ones, &ones, &cfg).unwrap();
    (state, lr)
}

#[test]
fn saddle_updates_follow_hand_signs() {
    let cases = [
        (0.3, -0.2, 0.5, 0.1, 0.7, 0.4),
        (0.3, -0.2, 0.5, 0.1, -0.7, 0.4),
        (-0.5, 0.4, -1.2, 0.8, 0.2, -0.9),
        (1.0, 1.0, 2.0, -1.0, -0.3, -0.6),
    ];
    for (a, b, theta, r, xi, gamma) in cases {
        let want = hand_directions(a, b, theta, r, xi, gamma);
        let (state, lr) = saddle_step(a, b, theta, r, xi, gamma);
        let m = &state.model;
        let moved = [
            ("psi_z.w", a, want.a),
            ("psi_e.w", b, want.b),
            ("theta.b", theta, want.theta),
            ("theta.e_ref", r, want.r),
            ("xi.w", xi, want.xi),
            ("gamma.w", gamma, want.gamma),
        ];
        for (name, before, dir) in moved {
            let delta = m.value(name).unwrap() - before;
            assert!(dir.abs() > 1e-3, "{name}: degenerate case");
            assert_eq!(delta.signum(), dir.signum(), "{name} moved {delta:e}, expected sign of {dir}");
            // A first Adam step has magnitude lr.
            assert!((delta.abs() - lr).abs() < 1e-3 * lr, "{name}: |{delta:e}| != {lr:e}");
        }
        // Frozen coefficients stay put.
        assert_eq!(m.value("theta.w_z").unwrap(), -1.0);
        assert_eq!(m.value("xi.b").unwrap(), 0.0);
    }
}

#[test]
fn frozen_discriminators_do_not_move() {
    let init = ScalarInit::saddle(0.3, -0.2, 0.5, 0.1, 0.7, 0.4);
    let mut state = TrainState::new(ScalarModel::new(&init, Variant::SrbVae, DType::F64).unwrap()).unwrap();
    let mut cfg = TrainConfig::new(TrainVariant::Srbvae, 1, 5);
    cfg.freeze_discriminators = true;
    let ones = pixels(&[1.0; 4]);
    train_step_srbvae(&mut state, &ones, &ones, &cfg).unwrap();
    assert_eq!(state.model.value("xi.w").unwrap(), 0.7);
    assert_eq!(state.model.value("gamma.w").unwrap(), 0.4);
    assert_ne!(state.model.value("theta.b").unwrap(), 0.5);
}

#[test]
fn step_variants_are_dispatched_correctly() {
    let model = ScalarModel::new(&ScalarInit::default(), Variant::SrbVae, DType::F64).unwrap();
    let mut state = TrainState::new(model).unwrap();
    let x = pixels(&[0.2, -0.4]);
    let rb = TrainConfig::new(TrainVariant::Rbvae, 1, 0);
    assert!(matches!(train_step_srbvae(&mut state, &x, &x, &rb), Err(Error::Config(_))));
    let srb = TrainConfig::new(TrainVariant::Srbvae, 1, 0);
    assert!(matches!(train_step_simple(&mut state, Some(&x), Some(&x), &srb), Err(Error::Config(_))));
    assert!(matches!(train_step(&mut state, &x, None, &srb), Err(Error::Config(_))));
    assert_eq!(state.step, 0);
    let r = train_step(&mut state, &x, Some(&x), &srb).unwrap();
    assert!(r.get("disc_xi").is_some() && r.get("disc_gamma").is_some());
    assert_eq!(state.step, 1);
}

#[test]
fn leak_audit_catches_unlabelled_terms() {
    let model = ScalarModel::new(&ScalarInit::default(), Variant::RbVae, DType::F64).unwrap();
    let x = pixels(&[0.5, -0.25, 0.1]);
    let s = ReconScale::new(0.5).unwrap();
    let terms = rbvae_unlabelled_terms(&model, &x, s, &mut substream(0, Stream::Step, 0)).unwrap();
    let loss = Loss::new(terms).unwrap();
    match assert_no_reference_leak(&model, &loss.total) {
        Err(Error::ReferenceLeak { param }) => assert!(param.starts_with("psi_e")),
        other => panic!("expected a leak, got {other:?}"),
    }
}

#[test]
fn reference_terms_never_reach_e_encoder_in_loop() {
    let data = make_toy_dataset(24, 16, 9).unwrap();
    for variant in [TrainVariant::Rbvae, TrainVariant::Srbvae] {
        let mut cfg = TrainConfig::new(variant, 2, 4);
        cfg.batch_size = 8;
        cfg.audit_reference_grad = true;
        let model = ConvModel::new(&tiny_arch(16), variant.model_variant(), 4).unwrap();
        let mut state = TrainState::new(model).unwrap();
        train_model(&mut state, &data, &cfg, None, false, |_| Ok(())).unwrap();
        assert_eq!(state.step, 2 * (48 / 8));
    }
}

fn tensors_equal(a: &Tensor, b: &Tensor) -> bool {
    a.dims() == b.dims() && a.dtype() == b.dtype() && values(a) == values(b)
}

fn same_weights(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.tensors.len() == b.tensors.len()
        && a.tensors
            .iter()
            .zip(&b.tensors)
            .all(|((na, ta), (nb, tb))| na == nb && tensors_equal(ta, tb))
}

#[test]
fn checkpoint_round_trip_determinism_and_resume() {
    let t = tempfile::tempdir().unwrap();
    let data = make_toy_dataset(16, 16, 2).unwrap();
    let arch = tiny_arch(16);
    let mut cfg = TrainConfig::new(TrainVariant::Srbvae, 2, 11);
    cfg.batch_size = 8;
    let run = |cfg: &TrainConfig, out: Option<&std::path::Path>, resume: Option<Checkpoint>| {
        let opts = RunOptions {
            out_dir: out.map(|p| p.to_path_buf()),
            resume,
            verbose: false,
        };
        train(&data, &arch, cfg, &opts).unwrap()
    };

    let full = run(&cfg, Some(&t.path().join("a")), None);
    let again = run(&cfg, None, None);
    assert!(same_weights(&full, &again), "fixed-seed runs differ");

    let path = t.path().join("a").join(CHECKPOINT_FILE);
    let loaded = load_checkpoint(&path).unwrap();
    assert!(same_weights(&full, &loaded));
    assert_eq!((loaded.step, loaded.epoch), (full.step, full.epoch));
    assert_eq!(loaded.arch, full.arch);
    assert_eq!(loaded.train, full.train);
    assert_eq!(loaded.dataset, Some(data.fingerprint()));
    assert_eq!(loaded.history.len(), 2);
    // Saving the loaded checkpoint reproduces the file byte for byte.
    let copy = t.path().join("copy.safetensors");
    save_checkpoint(&loaded, &copy).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());

    // One epoch, then resume for the second: same weights and moments.
    let mut one = cfg.clone();
    one.epochs = 1;
    let half = run(&one, None, None);
    let resumed = run(&cfg, None, Some(half));
    assert!(same_weights(&full, &resumed), "resumed run diverged");

    let mut other = cfg.clone();
    other.seed = 12;
    let different = run(&other, None, None);
    assert!(!same_weights(&full, &different));

    let rows = read_metrics(&t.path().join("a").join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len() as u64, full.step);
    assert!(rows.iter().all(|r| r.parts.contains_key("adv_u") && r.total.is_finite()));
}

#[test]
fn resume_rejects_mismatched_runs() {
    let data = make_toy_dataset(8, 16, 2).unwrap();
    let mut cfg = TrainConfig::new(TrainVariant::Rbvae, 1, 1);
    cfg.batch_size = 8;
    let opts = RunOptions::default();
    let ck = train(&data, &tiny_arch(16), &cfg, &opts).unwrap();
    let mut other = cfg.clone();
    other.seed = 2;
    let opts = RunOptions {
        resume: Some(ck),
        ..RunOptions::default()
    };
    assert!(matches!(train(&data, &tiny_arch(16), &other, &opts), Err(Error::Config(_))));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("bad.safetensors");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    assert!(load_checkpoint(&p).is_err());
    assert!(matches!(load_checkpoint(&t.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn model_restored_from_checkpoint_matches() {
    let data = make_toy_dataset(8, 16, 3).unwrap();
    let mut cfg = TrainConfig::new(TrainVariant::Rbvae, 1, 1);
    cfg.batch_size = 8;
    let ck = train(&data, &tiny_arch(16), &cfg, &RunOptions::default()).unwrap();
    let model = ck.model().unwrap();
    let x = data.unlabelled.images.batch(&[0, 1], DType::F32, &Device::Cpu).unwrap();
    let state = ck.to_state().unwrap();
    let a = model.encode_z(&x).unwrap().mu;
    let b = state.model.encode_z(&x).unwrap().mu;
    assert!(tensors_equal(&a, &b));
    assert_eq!(state.step, ck.step);
}
