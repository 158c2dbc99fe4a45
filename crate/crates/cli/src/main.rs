//! `refvae`: dataset synthesis, training, probing, image grids and the
//! oracle suite.
//!
//! Every command takes `--config <file.toml>`; flags given on the command
//! line override it. The effective settings are written next to the output
//! so the run can be repeated with `--config` alone.

mod commands;
mod error;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refvae::data::store::Manifest;

use crate::error::CliError;
use crate::settings::*;

#[derive(Parser)]
#[command(name = "refvae", version, about = "Reference-based VAEs on desk-scale corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset directory from MNIST IDX files or the toy generator.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and metrics log.
    Train(TrainArgs),
    /// Fit linear probes on frozen features and append a CSV row.
    Eval(EvalArgs),
    /// Grid of inputs followed by prior draws of the target factors.
    Generate(GenerateArgs),
    /// Grid of (A, B, target factors of A on common factors of B) rows.
    Transfer(TransferArgs),
    /// Run the numerical oracle suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    toy: bool,
    /// Toy reference count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Directory holding train-images-idx3-ubyte[.gz] and labels.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    holdout: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// vae, beta_vae, rbvae or srbvae.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Laplace scale of the pixel likelihood.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    max_channels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    d_z: Option<usize>,
    #[arg(long)]
    d_e: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Check at every step that reference terms leave the e encoder alone.
    #[arg(long)]
    audit: bool,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// e, z or all.
    #[arg(long)]
    features: Option<String>,
    /// mean or sample.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    inputs: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Target-factor sources: PNG paths or unlabelled indices.
    #[arg(long, num_args = 1..)]
    a: Vec<String>,
    /// Common-factor sources, paired with --a.
    #[arg(long, num_args = 1..)]
    b: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte-Carlo samples per identity.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    ratio_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn strings(v: &[String]) -> Option<Vec<toml::Value>> {
    (!v.is_empty()).then(|| v.iter().map(|s| toml::Value::String(s.clone())).collect())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => {
            let mut f = Flags::default();
            f.path(&["out"], a.out.as_ref())
                .seed(&["seed"], a.seed)
                .switch(&["toy"], a.toy)
                .count(&["n"], a.n)
                .count(&["size"], a.size)
                .path(&["mnist_dir"], a.mnist_dir.as_ref())
                .count(&["holdout"], a.holdout);
            let s: SynthSettings = resolve(&SynthSettings::default(), a.config.as_deref(), "synth", f.into_table())?;
            commands::synth(&s).map(|_| ())
        }
        Command::Train(a) => {
            let mut f = Flags::default();
            f.path(&["data"], a.data.as_ref())
                .path(&["out"], a.out.as_ref())
                .path(&["resume"], a.resume.as_ref())
                .set(&["train", "variant"], a.variant.clone())
                .count(&["train", "epochs"], a.epochs)
                .seed(&["train", "seed"], a.seed)
                .count(&["train", "batch_size"], a.batch_size)
                .set(&["train", "adam", "learning_rate"], a.lr)
                .set(&["train", "beta"], a.beta)
                .set(&["train", "lambda_recon"], a.lambda)
                .count(&["train", "checkpoint_every"], a.checkpoint_every)
                .switch(&["train", "audit_reference_grad"], a.audit)
                .count(&["arch", "base_channels"], a.base_channels)
                .count(&["arch", "max_channels"], a.max_channels)
                .count(&["arch", "hidden"], a.hidden)
                .count(&["arch", "d_z"], a.d_z)
                .count(&["arch", "d_e"], a.d_e);
            if a.quiet {
                f.set(&["verbose"], Some(false));
            }
            let flags = f.into_table();
            // The image size follows the dataset unless set explicitly.
            let mut base = TrainSettings::default();
            let probe: TrainSettings = resolve(&base, a.config.as_deref(), "train", flags.clone())?;
            base.arch.image_size = read_image_size(&probe.data)?;
            let s: TrainSettings = resolve(&base, a.config.as_deref(), "train", flags)?;
            commands::cmd_train(&s)
        }
        Command::Eval(a) => {
            let mut f = Flags::default();
            f.path(&["ckpt"], a.ckpt.as_ref())
                .path(&["data"], a.data.as_ref())
                .set(&["features"], a.features)
                .set(&["mode"], a.mode)
                .path(&["out"], a.out.as_ref())
                .seed(&["seed"], a.seed);
            let s: EvalSettings = resolve(&EvalSettings::default(), a.config.as_deref(), "eval", f.into_table())?;
            commands::cmd_eval(&s).map(|_| ())
        }
        Command::Generate(a) => {
            let mut f = Flags::default();
            f.path(&["ckpt"], a.ckpt.as_ref())
                .path(&["data"], a.data.as_ref())
                .count(&["inputs"], a.inputs)
                .count(&["samples"], a.samples)
                .seed(&["seed"], a.seed)
                .path(&["out"], a.out.as_ref());
            let base = GenerateSettings::default();
            let s: GenerateSettings = resolve(&base, a.config.as_deref(), "generate", f.into_table())?;
            commands::cmd_generate(&s)
        }
        Command::Transfer(a) => {
            let mut f = Flags::default();
            f.path(&["ckpt"], a.ckpt.as_ref())
                .path(&["data"], a.data.as_ref())
                .set(&["a"], strings(&a.a))
                .set(&["b"], strings(&a.b))
                .path(&["out"], a.out.as_ref());
            let base = TransferSettings::default();
            let s: TransferSettings = resolve(&base, a.config.as_deref(), "transfer", f.into_table())?;
            commands::cmd_transfer(&s)
        }
        Command::Verify(a) => {
            let mut f = Flags::default();
            f.count(&["n"], a.n)
                .count(&["ratio_n"], a.ratio_n)
                .seed(&["seed"], a.seed)
                .path(&["out"], a.out.as_ref());
            let s: VerifySettings = resolve(&VerifySettings::default(), a.config.as_deref(), "verify", f.into_table())?;
            commands::cmd_verify(&s)
        }
    }
}

fn read_image_size(data: &Path) -> Result<usize, CliError> {
    Ok(Manifest::read(data)?.image_size)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("refvae: {e}");
            e.exit()
        }
    }
}
