use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use refvae::data::{load_idx_pair, make_toy_dataset, store, synth_mnist, DatasetPair, ImageSet, LabeledSet, MnistSynth};
use refvae::eval::{
    attribute_transfer, conditional_generate, probe_protocol, save_grid, FeatureSource, InferenceMode, ProbeResult,
};
use refvae::nets::{ConvModel, LatentModel};
use refvae::oracles::{run_suite, SuiteConfig};
use refvae::rng::{substream, Stream};
use refvae::train::{load_checkpoint, train, RunOptions, CHECKPOINT_FILE, METRICS_FILE};

use crate::error::CliError;
use crate::settings::*;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// `<dir>/<command>.config.toml`, or `<file>.config.toml` beside a file.
pub fn config_path(out: &Path, command: &str, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(format!("{command}.config.toml"))
    } else {
        let mut name = out.as_os_str().to_owned();
        name.push(".config.toml");
        PathBuf::from(name)
    }
}

fn idx_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
}

pub fn synth(s: &SynthSettings) -> Result<DatasetPair, CliError> {
    let pair = match (&s.mnist_dir, s.toy) {
        (Some(_), true) => return Err(CliError::Config("give either --toy or --mnist-dir, not both".into())),
        (None, false) => return Err(CliError::Config("a source is required: --toy or --mnist-dir".into())),
        (None, true) => make_toy_dataset(s.n, s.size, s.seed)?,
        (Some(dir), false) => {
            let need = |stem: &str| {
                idx_file(dir, stem).ok_or_else(|| io_err(&dir.join(stem), "not found (also tried .gz)"))
            };
            let train = load_idx_pair(need("train-images-idx3-ubyte")?, need("train-labels-idx1-ubyte")?)?;
            let test = match (idx_file(dir, "t10k-images-idx3-ubyte"), idx_file(dir, "t10k-labels-idx1-ubyte")) {
                (Some(i), Some(l)) => Some(load_idx_pair(i, l)?),
                _ => None,
            };
            let opts = MnistSynth {
                seed: s.seed,
                output_size: s.size,
                holdout: s.holdout,
                probe_copies: s.probe_copies,
            };
            synth_mnist(&train, test.as_ref(), &opts)?
        }
    };
    let m = store::save_dataset(&pair, &s.out)?;
    persist(s, "synth", &config_path(&s.out, "synth", true))?;
    println!(
        "{}: {} reference, {} unlabelled, {} probe-fit, {} probe-eval at {}px (sha256 {})",
        s.out.display(),
        m.counts.reference,
        m.counts.unlabelled,
        m.counts.probe_fit,
        m.counts.probe_eval,
        m.image_size,
        m.sha256.dataset
    );
    Ok(pair)
}

pub fn cmd_train(s: &TrainSettings) -> Result<(), CliError> {
    let data = store::load_dataset(&s.data)?;
    if s.train.variant.uses_reference() && data.reference.is_empty() {
        return Err(CliError::Config(format!(
            "variant {:?} needs a reference set and {} has none",
            s.train.variant,
            s.data.display()
        )));
    }
    let resume = s.resume.as_deref().map(load_checkpoint).transpose()?;
    fs::create_dir_all(&s.out).map_err(|e| io_err(&s.out, e))?;
    persist(s, "train", &config_path(&s.out, "train", true))?;
    let opts = RunOptions {
        out_dir: Some(s.out.clone()),
        resume,
        verbose: s.verbose,
    };
    let ck = train(&data, &s.arch, &s.train, &opts)?;
    println!(
        "{} after {} steps ({} epochs); metrics in {}",
        s.out.join(CHECKPOINT_FILE).display(),
        ck.step,
        ck.epoch,
        s.out.join(METRICS_FILE).display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ConvModel, CliError> {
    Ok(load_checkpoint(path)?.model()?)
}

fn parse_mode(s: &str) -> Result<InferenceMode, CliError> {
    match s {
        "mean" => Ok(InferenceMode::Mean),
        "sample" => Ok(InferenceMode::Sample),
        other => Err(CliError::Config(format!("unknown inference mode `{other}` (mean, sample)"))),
    }
}

fn probe_sets(data: &DatasetPair, dir: &Path) -> Result<(LabeledSet, LabeledSet), CliError> {
    match (&data.probe_fit, &data.probe_eval) {
        (Some(f), Some(e)) => Ok((f.clone(), e.clone())),
        _ => Err(CliError::Config(format!("{} has no labeled probe sets", dir.display()))),
    }
}

pub fn cmd_eval(s: &EvalSettings) -> Result<ProbeResult, CliError> {
    let source: FeatureSource = s.features.parse()?;
    let mode = parse_mode(&s.mode)?;
    let model = load_model(&s.ckpt)?;
    let data = store::load_dataset(&s.data)?;
    let (fit, eval) = probe_sets(&data, &s.data)?;
    let mut rng = substream(s.seed, Stream::Eval, 0);
    let r = probe_protocol(&model, &fit, &eval, source, mode, &mut rng)?;

    let fresh = fs::metadata(&s.out).map(|m| m.len() == 0).unwrap_or(true);
    if let Some(dir) = s.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&s.out)
        .map_err(|e| io_err(&s.out, e))?;
    let header = ProbeResult::CSV_HEADER.join(",");
    let row = r.csv_row().join(",");
    if fresh {
        writeln!(f, "{header}").map_err(|e| io_err(&s.out, e))?;
    }
    writeln!(f, "{row}").map_err(|e| io_err(&s.out, e))?;
    persist(s, "eval", &config_path(&s.out, "eval", false))?;
    println!("{header}\n{row}");
    Ok(r)
}

pub fn cmd_generate(s: &GenerateSettings) -> Result<(), CliError> {
    if s.inputs == 0 || s.samples == 0 {
        return Err(CliError::Config("--inputs and --samples must be positive".into()));
    }
    let model = load_model(&s.ckpt)?;
    let data = store::load_dataset(&s.data)?;
    let set = data.probe_eval.as_ref().unwrap_or(&data.unlabelled);
    if set.len() < s.inputs {
        return Err(CliError::Config(format!("{} inputs requested, {} available", s.inputs, set.len())));
    }
    let mut rng = substream(s.seed, Stream::Eval, 1);
    let mut rows = Vec::with_capacity(s.inputs);
    for i in 0..s.inputs {
        let x = set.images.batch(&[i], model.dtype(), model.device())?;
        let gen = conditional_generate(&model, &x, s.samples, &mut rng)?;
        rows.push(Tensor::cat(&[&x, &gen], 0)?);
    }
    save_grid(&rows, &s.out)?;
    persist(s, "generate", &config_path(&s.out, "generate", false))?;
    println!("{}: {} x {} grid", s.out.display(), s.inputs, s.samples + 1);
    Ok(())
}

/// A PNG path, or an index into the unlabelled set of `data`.
fn load_image(spec: &str, data: Option<&DatasetPair>, model: &ConvModel) -> Result<Tensor, CliError> {
    let size = model.config().image_size;
    let set = if let Ok(i) = spec.parse::<usize>() {
        let data = data.ok_or_else(|| CliError::Config(format!("image index {i} needs --data")))?;
        if data.image_size != size {
            return Err(CliError::Config(format!("dataset is {}px, model is {size}px", data.image_size)));
        }
        let set = &data.unlabelled.images;
        if i >= set.len() {
            return Err(CliError::Config(format!("index {i} out of {} unlabelled images", set.len())));
        }
        set.select(&[i])
    } else {
        let path = Path::new(spec);
        let img = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
        if img.width() as usize != size || img.height() as usize != size {
            return Err(CliError::Config(format!(
                "{} is {}x{}, model expects {size}x{size}",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        let mut set = ImageSet::empty(size, 3);
        let mut chw = vec![0.0f32; 3 * size * size];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                chw[c * size * size + y as usize * size + x as usize] = p[c] as f32 / 255.0;
            }
        }
        set.push_raw(&chw);
        set
    };
    Ok(set.batch(&[0], model.dtype(), model.device())?)
}

pub fn cmd_transfer(s: &TransferSettings) -> Result<(), CliError> {
    if s.a.is_empty() || s.a.len() != s.b.len() {
        return Err(CliError::Config(format!(
            "need matching image lists, got {} for --a and {} for --b",
            s.a.len(),
            s.b.len()
        )));
    }
    let model = load_model(&s.ckpt)?;
    let data = s.data.as_deref().map(store::load_dataset).transpose()?;
    let mut rows = Vec::with_capacity(s.a.len());
    for (a, b) in s.a.iter().zip(&s.b) {
        let xa = load_image(a, data.as_ref(), &model)?;
        let xb = load_image(b, data.as_ref(), &model)?;
        let out = attribute_transfer(&model, &xa, &xb)?;
        rows.push(Tensor::cat(&[&xa, &xb, &out], 0)?);
    }
    save_grid(&rows, &s.out)?;
    persist(s, "transfer", &config_path(&s.out, "transfer", false))?;
    println!("{}: {} transfer rows (A, B, result)", s.out.display(), rows.len());
    Ok(())
}

pub fn cmd_verify(s: &VerifySettings) -> Result<(), CliError> {
    let cfg = SuiteConfig {
        n: s.n,
        ratio_n: s.ratio_n,
        seed: s.seed,
    };
    let report = run_suite(&cfg)?;
    let text = format!("{report}\n");
    print!("{text}");
    if let Some(dir) = s.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(&s.out, &text).map_err(|e| io_err(&s.out, e))?;
    persist(s, "verify", &config_path(&s.out, "verify", false))?;
    if !report.passed() {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        return Err(CliError::Verify(names.join(", ")));
    }
    Ok(())
}
