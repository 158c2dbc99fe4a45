use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn refvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_toy(dir: &Path, seed: &str) -> Output {
    refvae(&["synth", "--toy", "--n", "40", "--size", "16", "--seed", seed, "--out", s(dir)])
}

const SMALL_ARCH: [&str; 10] = [
    "--base-channels",
    "4",
    "--max-channels",
    "8",
    "--hidden",
    "16",
    "--d-z",
    "4",
    "--d-e",
    "4",
];

fn train_small(data: &Path, out: &Path, variant: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(out),
        "--variant",
        variant,
        "--epochs",
        "1",
        "--seed",
        "1",
        "--batch-size",
        "8",
        "--quiet",
    ];
    args.extend(SMALL_ARCH);
    args.extend(extra);
    refvae(&args)
}

#[test]
fn synth_toy_counts_and_determinism() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    let out = synth_toy(&a, "5");
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("40 reference, 80 unlabelled"));
    ok(&synth_toy(&b, "5"));
    let manifest = |d: &Path| fs::read_to_string(d.join("manifest.toml")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    assert!(a.join("synth.config.toml").exists());
}

#[test]
fn synth_without_source_is_config_error() {
    let t = tempfile::tempdir().unwrap();
    let out = refvae(&["synth", "--out", s(t.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_missing_mnist_files_is_io_error() {
    let t = tempfile::tempdir().unwrap();
    let out = refvae(&["synth", "--mnist-dir", s(t.path()), "--out", s(&t.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_eval_generate_transfer_pipeline() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    let run = t.path().join("run");
    ok(&synth_toy(&data, "2"));
    ok(&train_small(&data, &run, "srbvae", &["--audit"]));
    let ckpt = run.join("checkpoint.safetensors");
    assert!(ckpt.exists());

    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    for col in ["adv_u", "adv_r", "recon_u", "recon_r", "latrec_e_u", "disc_xi", "disc_gamma"] {
        assert!(header.contains(col), "{header}");
    }
    let cfg = fs::read_to_string(run.join("train.config.toml")).unwrap();
    assert!(cfg.contains("command = \"train\""));
    assert!(cfg.contains("variant = \"srbvae\""));
    assert!(cfg.contains("image_size = 16"));

    let csv = t.path().join("probe.csv");
    for f in ["e", "z"] {
        ok(&refvae(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--features", f, "--out", s(&csv)]));
    }
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "features,R,G,B,Scale,Width,Avg");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("e,") && lines[2].starts_with("z,"));
    assert_eq!(lines[1].split(',').count(), 7);

    let grid = |name: &str, seed: &str| {
        let p = t.path().join(name);
        ok(&refvae(&[
            "generate", "--ckpt", s(&ckpt), "--data", s(&data), "--inputs", "4", "--samples", "6", "--seed", seed,
            "--out", s(&p),
        ]));
        p
    };
    let (g1, g2) = (grid("g1.png", "2"), grid("g2.png", "2"));
    assert_eq!(fs::read(&g1).unwrap(), fs::read(&g2).unwrap());
    let img = image::open(&g1).unwrap();
    // 2-px gutters around 16-px tiles: 7 columns, 4 rows.
    assert_eq!((img.width(), img.height()), (7 * 18 + 2, 4 * 18 + 2));

    let tr = t.path().join("t.png");
    ok(&refvae(&[
        "transfer", "--ckpt", s(&ckpt), "--data", s(&data), "--a", "0", "--b", "1", "--out", s(&tr),
    ]));
    let img = image::open(&tr).unwrap();
    assert_eq!((img.width(), img.height()), (3 * 18 + 2, 18 + 2));
    // A PNG tile of the right size works as an input too.
    let tile = t.path().join("tile.png");
    image::open(&g1).unwrap().crop_imm(2, 2, 16, 16).save(&tile).unwrap();
    ok(&refvae(&[
        "transfer", "--ckpt", s(&ckpt), "--a", s(&tile), "--b", s(&tile), "--out", s(&t.path().join("t2.png")),
    ]));
    let bad = refvae(&["transfer", "--ckpt", s(&ckpt), "--data", s(&data), "--a", "0", "1", "--b", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn beta_is_recorded_and_config_replays() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&synth_toy(&data, "3"));
    let run = t.path().join("beta");
    ok(&train_small(&data, &run, "beta_vae", &["--beta", "4"]));
    let cfg_path = run.join("train.config.toml");
    let cfg = fs::read_to_string(&cfg_path).unwrap();
    assert!(cfg.contains("beta = 4.0"), "{cfg}");

    // Replaying the persisted settings reproduces the checkpoint; the flag
    // overrides the file.
    let again = t.path().join("again");
    ok(&refvae(&["train", "--config", s(&cfg_path), "--out", s(&again)]));
    assert_eq!(
        fs::read(run.join("checkpoint.safetensors")).unwrap(),
        fs::read(again.join("checkpoint.safetensors")).unwrap()
    );
}

#[test]
fn reference_variant_without_reference_set_is_config_error() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&synth_toy(&data, "4"));
    // Drop the reference images from the manifest and the digest check still
    // has to pass, so rebuild the dataset through the library instead.
    let mut pair = refvae::data::store::load_dataset(&data).unwrap();
    pair.reference = refvae::data::ImageSet::empty(16, 3);
    let bare = t.path().join("bare");
    refvae::data::store::save_dataset(&pair, &bare).unwrap();
    let out = train_small(&bare, &t.path().join("r"), "srbvae", &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_is_config_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.toml");
    fs::write(&cfg, "n = 100\nbogus = 1\n").unwrap();
    let out = refvae(&["verify", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_for_another_command_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("c.toml");
    fs::write(&cfg, "command = \"train\"\n").unwrap();
    assert_eq!(refvae(&["verify", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_reports() {
    let t = tempfile::tempdir().unwrap();
    let report = t.path().join("v.txt");
    let out = refvae(&["verify", "--n", "20000", "--ratio-n", "5000", "--out", s(&report)]);
    ok(&out);
    let text = fs::read_to_string(&report).unwrap();
    for name in ["forward_kl", "reverse_kl", "symmetric_kl", "density_ratio", "grad_rbvae_batch_loss"] {
        assert!(text.contains(&format!("PASS {name}")), "{text}");
    }
    let cfg = fs::read_to_string(t.path().join("v.txt.config.toml")).unwrap();
    assert!(cfg.contains("n = 20000"));
}

#[test]
fn verify_failure_exits_with_verify_code() {
    // A 10-sample fit cannot pin the ratio down to 0.1.
    let t = tempfile::tempdir().unwrap();
    let out = refvae(&["verify", "--n", "1000", "--ratio-n", "10", "--out", s(&t.path().join("v.txt"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stderr).contains("density_ratio"));
}

#[test]
fn eval_without_labels_is_error() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    ok(&synth_toy(&data, "6"));
    let run = t.path().join("run");
    ok(&train_small(&data, &run, "rbvae", &[]));
    let mut pair = refvae::data::store::load_dataset(&data).unwrap();
    pair.probe_fit = None;
    pair.probe_eval = None;
    let bare = t.path().join("bare");
    refvae::data::store::save_dataset(&pair, &bare).unwrap();
    let out = refvae(&[
        "eval",
        "--ckpt",
        s(&run.join("checkpoint.safetensors")),
        "--data",
        s(&bare),
        "--out",
        s(&t.path().join("p.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
