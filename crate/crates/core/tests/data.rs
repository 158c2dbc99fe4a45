mod common;

use std::collections::{HashMap, HashSet};
use std::io::Write;

use common::{chi2_sf, chi2_uniform};
use proptest::prelude::*;
use refvae::data::idx::encode_images;
use refvae::data::style::{apply_style, boundary_preprocess, sample_style_factors, MAX_WIDTH, MIN_SCALE};
use refvae::data::*;
use refvae::rng::{seeded, substream, Stream};

#[test]
fn chi2_tail_matches_tables() {
    // 1% critical values.
    for (stat, dof) in [(6.635, 1), (21.666, 9), (37.566, 20)] {
        assert!((chi2_sf(stat, dof) - 0.01).abs() < 2e-5, "dof {dof}: {}", chi2_sf(stat, dof));
    }
    assert!((chi2_sf(2.0, 2) - (-1.0f64).exp()).abs() < 1e-12);
    assert_eq!(chi2_sf(0.0, 5), 1.0);
    assert!(chi2_sf(200.0, 9) < 1e-30);
}

#[test]
fn factor_draws_have_the_stated_distributions() {
    let mut rng = seeded(17);
    let n = 10_000;
    let mut widths = vec![0usize; MAX_WIDTH as usize];
    let (mut scale_sum, mut color_sum) = (0.0, [0.0; 3]);
    for _ in 0..n {
        let f = sample_style_factors(&mut rng);
        widths[f.width as usize - 1] += 1;
        assert!((MIN_SCALE..=1.0).contains(&f.scale));
        assert!(f.color.iter().all(|&c| c >= 0.0));
        assert!((f.color.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        scale_sum += f.scale;
        for c in 0..3 {
            color_sum[c] += f.color[c];
        }
    }
    let p = chi2_sf(chi2_uniform(&widths), widths.len() - 1);
    assert!(p > 0.01, "width counts {widths:?}, p = {p}");
    // Uniform scale on [0.5, 1] has mean 0.75 and sd 0.144.
    assert!((scale_sum / n as f64 - 0.75).abs() < 4.0 * 0.144 / (n as f64).sqrt());
    for c in color_sum {
        assert!((c / n as f64 - 1.0 / 3.0).abs() < 0.01);
    }
}

fn digit(seed: u64) -> GrayImage {
    let mut rng = substream(seed, Stream::Toy, 0);
    toy::toy_template(28, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn styled_pixels_carry_the_colour(seed in any::<u64>()) {
        let f = sample_style_factors(&mut seeded(seed));
        f.validate().unwrap();
        let img = apply_style(&boundary_preprocess(&digit(seed)), &f).unwrap();
        let n = img.size * img.size;
        let mut lit = 0;
        for p in 0..n {
            let gray: f64 = (0..3).map(|c| img.plane(c)[p] as f64).sum();
            prop_assert!(gray <= 1.0 + 1e-5);
            if gray > 1e-3 {
                lit += 1;
                for c in 0..3 {
                    prop_assert!((img.plane(c)[p] as f64 / gray - f.color[c]).abs() < 1e-3);
                }
            }
        }
        prop_assert!(lit > 0);
    }

    #[test]
    fn targets_lie_in_the_unit_box(seed in any::<u64>()) {
        let t = sample_style_factors(&mut seeded(seed)).targets();
        prop_assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(((t[0] + t[1] + t[2]) - 1.0).abs() < 1e-9);
    }
}

fn raw_set(n: usize) -> RawImageSet {
    let mut pixels = Vec::with_capacity(n * 784);
    for i in 0..n {
        pixels.extend(digit(i as u64).pixels);
    }
    RawImageSet::new(28, 28, pixels, (0..n).map(|i| (i % 10) as u8).collect()).unwrap()
}

#[test]
fn splits_halve_the_sources_and_double_the_rest() {
    for n in [7, 10] {
        let pair = build_splits(&raw_set(n), 3, 16).unwrap();
        assert_eq!(pair.reference.len(), n / 2);
        assert_eq!(pair.unlabelled.len(), 2 * (n - n / 2));
        let mut seen: HashMap<usize, usize> = HashMap::new();
        for s in &pair.unlabelled.sources {
            *seen.entry(*s).or_default() += 1;
        }
        assert_eq!(seen.len(), n - n / 2);
        assert!(seen.values().all(|&c| c == 2));
        // The two copies of a source get independent factors.
        let f = &pair.unlabelled.factors;
        let half = n - n / 2;
        assert!((0..half).any(|i| f[i] != f[i + half]));
    }
}

#[test]
fn holdout_probe_sets_are_disjoint_from_training() {
    let raw = raw_set(24);
    let opts = MnistSynth {
        seed: 5,
        output_size: 16,
        holdout: 8,
        probe_copies: 2,
    };
    let pair = synth_mnist(&raw, None, &opts).unwrap();
    let fit = pair.probe_fit.as_ref().unwrap();
    let eval = pair.probe_eval.as_ref().unwrap();
    assert_eq!((fit.len(), eval.len()), (8, 8));
    assert_eq!(pair.reference.len() + pair.unlabelled.len() / 2, 16);
    let train: HashSet<usize> = pair.unlabelled.sources.iter().copied().collect();
    let a: HashSet<usize> = fit.sources.iter().copied().collect();
    let b: HashSet<usize> = eval.sources.iter().copied().collect();
    assert!(a.is_disjoint(&b) && a.is_disjoint(&train) && b.is_disjoint(&train));
    assert!(matches!(
        synth_mnist(&raw, None, &MnistSynth { holdout: 24, ..opts }),
        Err(refvae::Error::Config(_))
    ));
}

#[test]
fn gzipped_idx_files_load() {
    let t = tempfile::tempdir().unwrap();
    let raw = raw_set(3);
    let gz = |name: &str, bytes: &[u8]| {
        let path = t.path().join(name);
        let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&path).unwrap(), flate2::Compression::fast());
        enc.write_all(bytes).unwrap();
        enc.finish().unwrap();
        path
    };
    let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 3];
    labels.extend(&raw.labels);
    let images = gz("img.gz", &encode_images(&raw));
    let labels = gz("lab.gz", &labels);
    let back = load_idx_pair(&images, &labels).unwrap();
    assert_eq!(back.labels, raw.labels);
    for (a, b) in back.pixels.iter().zip(&raw.pixels) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn toy_corpus_survives_the_store() {
    let t = tempfile::tempdir().unwrap();
    let pair = make_toy_dataset(6, 16, 1).unwrap();
    let m = store::save_dataset(&pair, t.path()).unwrap();
    assert_eq!(m.counts.unlabelled, 12);
    assert_eq!(store::load_dataset(t.path()).unwrap(), pair);
    // A relabelled factor row breaks the digest.
    let csv = t.path().join("unlabelled.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[1].split(',').map(String::from).collect();
    cols[1] = if cols[1] == "1" { "2".into() } else { "1".into() };
    lines[1] = cols.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    assert!(matches!(store::load_dataset(t.path()), Err(refvae::Error::Corrupt(_))));
}
