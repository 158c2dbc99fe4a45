mod common;

use candle_core::{DType, Device, Tensor};
use common::{scalar, tiny_arch, values};
use refvae::data::make_toy_dataset;
use refvae::nets::*;
use refvae::objectives::*;
use refvae::rng::{seeded, substream, Stream};

fn batch(n: usize) -> (Tensor, Tensor) {
    let d = make_toy_dataset(n, 16, 3).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    (
        d.unlabelled.images.batch(&idx, DType::F32, &Device::Cpu).unwrap(),
        d.reference.batch(&idx, DType::F32, &Device::Cpu).unwrap(),
    )
}

fn assert_all_touched(model: &dyn LatentModel, loss: &Tensor) {
    let grads = loss.backward().unwrap();
    for p in model.params().iter() {
        let g = grads.get(p.var.as_tensor()).unwrap_or_else(|| panic!("{} got no gradient", p.name));
        let mass = scalar(&g.abs().unwrap().sum_all().unwrap());
        assert!(mass > 0.0 && mass.is_finite(), "{}: gradient mass {mass}", p.name);
    }
}

#[test]
fn parameter_groups_follow_the_variant() {
    let arch = tiny_arch(16);
    let has = |v: Variant| {
        let m = ConvModel::new(&arch, v, 0).unwrap();
        Group::ALL.map(|g| m.params().has_group(g))
    };
    assert_eq!(has(Variant::Vae), [true, false, true, false, false]);
    assert_eq!(has(Variant::RbVae), [true, true, true, false, false]);
    assert_eq!(has(Variant::SrbVae), [true; 5]);
    let vae = ConvModel::new(&arch, Variant::Vae, 0).unwrap();
    let (x, _) = batch(2);
    // A VAE splits its single joint code into the two halves.
    let joint = vae.encode_joint(&x).unwrap();
    assert_eq!(joint.dim(), arch.d_z + arch.d_e);
    assert_eq!(values(&vae.encode_z(&x).unwrap().mu), values(&joint.narrow(0, arch.d_z).unwrap().mu));
    assert_eq!(values(&vae.encode_e(&x).unwrap().mu), values(&joint.narrow(arch.d_z, arch.d_e).unwrap().mu));
    assert!(vae.e_ref().is_err());
    assert!(vae.disc_ref(&x, &joint.narrow(0, arch.d_z).unwrap().mu, None).is_err());
}

#[test]
fn every_parameter_receives_gradient() {
    let arch = tiny_arch(16);
    let s = ReconScale::new(0.1).unwrap();
    let (x_u, x_r) = batch(4);

    let vae = ConvModel::new(&arch, Variant::Vae, 1).unwrap();
    let loss = vae_batch_loss(&vae, &x_u, 1.0, s, &mut seeded(0)).unwrap();
    assert_all_touched(&vae, &loss.total);

    let rb = ConvModel::new(&arch, Variant::RbVae, 1).unwrap();
    let loss = rbvae_batch_loss(&rb, &x_u, &x_r, s, &mut seeded(0)).unwrap();
    assert_all_touched(&rb, &loss.total);

    let srb = ConvModel::new(&arch, Variant::SrbVae, 1).unwrap();
    let mut rng = seeded(0);
    let enc = EncoderPath::sample(&srb, &x_u, &x_r, &mut rng).unwrap();
    let gen = GeneratorPath::sample(&srb, 4, 4, &mut rng).unwrap();
    let (bj, br) = srb.disc_blocks();
    let p = srb.disc_dropout();
    let mask = |rng: &mut refvae::rng::Rng, b| Some(block_dropout_mask(rng, 4, b, p, DType::F32, &Device::Cpu).unwrap());
    let masks = DiscMasks {
        joint_enc: mask(&mut rng, bj),
        joint_gen: mask(&mut rng, bj),
        ref_enc: mask(&mut rng, br),
        ref_gen: mask(&mut rng, br),
    };
    let logits = Logits::compute(&srb, &enc, &gen, &masks).unwrap();
    let mut terms = logits.adversarial_terms().unwrap();
    terms.extend(explicit_recon_from(&srb, &enc, &gen, s, &ReconWeights::default()).unwrap());
    let j = Loss::new(terms).unwrap().total;
    let d = (discriminator_loss(&logits.joint_enc, &logits.joint_gen).unwrap()
        + discriminator_loss(&logits.ref_enc, &logits.ref_gen).unwrap())
    .unwrap();
    assert_all_touched(&srb, &(j + d).unwrap());
}

#[test]
fn shapes_and_output_range() {
    let arch = tiny_arch(16);
    let m = ConvModel::new(&arch, Variant::SrbVae, 2).unwrap();
    let (x, _) = batch(3);
    let qz = m.encode_z(&x).unwrap();
    let qe = m.encode_e(&x).unwrap();
    assert_eq!(qz.mu.dims(), &[3, arch.d_z]);
    assert_eq!(qe.log_sigma.dims(), &[3, arch.d_e]);
    let big = Tensor::full(40f32, (3, arch.d_z), &Device::Cpu).unwrap();
    let out = m.generate(&big, &qe.mu).unwrap();
    assert_eq!(out.dims(), &[3, 3, 16, 16]);
    assert!(values(&out).iter().all(|v| (-1.0..=1.0).contains(v)));
    let logits = m.disc_joint(&x, &qz.mu, &qe.mu, None).unwrap();
    assert_eq!(logits.dims(), &[3]);
    assert_eq!(m.disc_ref(&x, &qz.mu, None).unwrap().dims(), &[3]);
    assert_eq!(values(&m.e_ref().unwrap()), vec![0.0; arch.d_e]);
    let wrong = Tensor::zeros((1, 3, 8, 8), DType::F32, &Device::Cpu).unwrap();
    assert!(matches!(m.encode_z(&wrong), Err(refvae::Error::Shape(_))));
}

#[test]
fn initialisation_is_seeded() {
    let arch = tiny_arch(16);
    let sum = |seed| ConvModel::new(&arch, Variant::SrbVae, seed).unwrap().params().checksum().unwrap();
    assert_eq!(sum(4), sum(4));
    assert_ne!(sum(4), sum(5));
}

#[test]
fn block_dropout_drops_a_quarter_and_rescales() {
    let m = block_dropout_mask(&mut seeded(1), 20_000, 3, 0.25, DType::F64, &Device::Cpu).unwrap();
    let v = values(&m);
    let zeros = v.iter().filter(|&&x| x == 0.0).count() as f64 / v.len() as f64;
    // Binomial sd is 0.0025 at this size.
    assert!((zeros - 0.25).abs() < 0.01, "dropped {zeros}");
    assert!(v.iter().all(|&x| x == 0.0 || (x - 4.0 / 3.0).abs() < 1e-12));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.015);
    assert!(block_dropout_mask(&mut seeded(1), 2, 2, 1.0, DType::F64, &Device::Cpu).is_err());
}

#[test]
fn masked_blocks_change_the_logit() {
    let m = ConvModel::new(&tiny_arch(16), Variant::SrbVae, 3).unwrap();
    let (x, _) = batch(1);
    let z = Tensor::ones((1, 3), DType::F32, &Device::Cpu).unwrap();
    let e = Tensor::ones((1, 2), DType::F32, &Device::Cpu).unwrap();
    let keep = Tensor::ones((1, 3), DType::F32, &Device::Cpu).unwrap();
    let full = scalar(&m.disc_joint(&x, &z, &e, None).unwrap());
    assert_eq!(full, scalar(&m.disc_joint(&x, &z, &e, Some(&keep)).unwrap()));
    // Zeroing the e block makes the logit independent of e.
    let drop_e = Tensor::new(&[[1f32, 1.0, 0.0]], &Device::Cpu).unwrap();
    let e2 = e.affine(-3.0, 0.0).unwrap();
    let a = scalar(&m.disc_joint(&x, &z, &e, Some(&drop_e)).unwrap());
    let b = scalar(&m.disc_joint(&x, &z, &e2, Some(&drop_e)).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, scalar(&m.disc_joint(&x, &z, &e2, None).unwrap()));
}

#[test]
fn log_sigma_is_clamped() {
    let mu = Tensor::zeros((1, 3), DType::F64, &Device::Cpu).unwrap();
    let ls = Tensor::new(&[[-50.0f64, 0.5, 50.0]], &Device::Cpu).unwrap();
    let g = GaussianParams::new(mu, ls).unwrap();
    assert_eq!(values(&g.log_sigma), vec![LOG_SIGMA_MIN, 0.5, LOG_SIGMA_MAX]);
    let eps = Tensor::ones((1, 3), DType::F64, &Device::Cpu).unwrap();
    let s = values(&g.sample_with(&eps).unwrap());
    assert!((s[1] - 0.5f64.exp()).abs() < 1e-12);
}

#[test]
fn scalar_model_matches_its_formulas() {
    let init = ScalarInit::default();
    let m = ScalarModel::new(&init, Variant::SrbVae, DType::F64).unwrap();
    assert_eq!(m.params().num_scalars(), 14);
    let x = common::pixels(&[0.5, -1.0]);
    let q = m.encode_z(&x).unwrap();
    let want: Vec<f64> = [0.5, -1.0].iter().map(|x| init.enc_z[0] * x + init.enc_z[1]).collect();
    assert_eq!(values(&q.mu), want);
    let z = Tensor::new(&[[0.2f64], [0.4]], &Device::Cpu).unwrap();
    let e = Tensor::new(&[[-1.0f64], [0.0]], &Device::Cpu).unwrap();
    let g = values(&m.generate(&z, &e).unwrap());
    for (i, (zv, ev)) in [(0.2, -1.0), (0.4, 0.0)].iter().enumerate() {
        let want = init.gen[0] * zv + init.gen[1] * ev + init.gen[2];
        assert!((g[i] - want).abs() < 1e-12);
    }
    let d = values(&m.disc_ref(&x, &z, None).unwrap());
    assert!((d[0] - (init.disc_ref[0] * (0.5 + 0.2) + init.disc_ref[1])).abs() < 1e-12);
    let frozen = ScalarInit {
        frozen: vec!["nope".into()],
        ..ScalarInit::default()
    };
    assert!(ScalarModel::new(&frozen, Variant::SrbVae, DType::F64).is_err());
}

#[test]
fn prior_draws_are_standard_normal() {
    let t = sample_prior(&mut substream(3, Stream::Step, 0), 20_000, 2, DType::F64, &Device::Cpu).unwrap();
    let v = values(&t);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.03);
}
