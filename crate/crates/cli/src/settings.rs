//! Effective settings of each command: built-in defaults, overlaid by an
//! optional TOML file, overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use refvae::nets::ArchConfig;
use refvae::train::{TrainConfig, TrainVariant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub seed: u64,
    /// Procedural shapes instead of digits.
    pub toy: bool,
    /// Toy reference count; the unlabelled set is twice this.
    pub n: usize,
    pub size: usize,
    pub mnist_dir: Option<PathBuf>,
    /// Training images held out for probes when no test split is present.
    pub holdout: usize,
    pub probe_copies: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            out: PathBuf::from("runs/data"),
            seed: 0,
            toy: false,
            n: 100,
            size: 32,
            mnist_dir: None,
            holdout: 1000,
            probe_copies: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub verbose: bool,
    pub arch: ArchConfig,
    pub train: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            data: PathBuf::from("runs/data"),
            out: PathBuf::from("runs/train"),
            resume: None,
            verbose: true,
            arch: ArchConfig::default(),
            train: TrainConfig::new(TrainVariant::Srbvae, 3, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    /// `e`, `z` or `all`.
    pub features: String,
    /// `mean` or `sample`.
    pub mode: String,
    /// CSV file; a row is appended per run.
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ckpt: PathBuf::from("runs/train/checkpoint.safetensors"),
            data: PathBuf::from("runs/data"),
            features: "e".into(),
            mode: "mean".into(),
            out: PathBuf::from("probe.csv"),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSettings {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    /// Rows of the grid, taken from the start of the evaluation probe set.
    pub inputs: usize,
    /// Prior draws of `e` per input.
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            ckpt: PathBuf::from("runs/train/checkpoint.safetensors"),
            data: PathBuf::from("runs/data"),
            inputs: 4,
            samples: 6,
            seed: 0,
            out: PathBuf::from("generate.png"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSettings {
    pub ckpt: PathBuf,
    /// Needed when images are given as indices into the unlabelled set.
    pub data: Option<PathBuf>,
    /// Sources of the target factors: PNG paths or unlabelled indices.
    pub a: Vec<String>,
    /// Sources of the common factors, paired with `a`.
    pub b: Vec<String>,
    pub out: PathBuf,
}

impl Default for TransferSettings {
    fn default() -> Self {
        TransferSettings {
            ckpt: PathBuf::from("runs/train/checkpoint.safetensors"),
            data: None,
            a: Vec::new(),
            b: Vec::new(),
            out: PathBuf::from("transfer.png"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySettings {
    pub n: usize,
    pub ratio_n: usize,
    pub seed: u64,
    /// Report file.
    pub out: PathBuf,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            n: 100_000,
            ratio_n: 10_000,
            seed: 0,
            out: PathBuf::from("verify.txt"),
        }
    }
}

/// Recursive overlay; tables merge, everything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn to_table<T: Serialize>(v: &T) -> Result<Table, CliError> {
    match Value::try_from(v) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => Err(CliError::Config("settings must serialize to a table".into())),
        Err(e) => Err(CliError::Config(e.to_string())),
    }
}

/// Read a settings file written by hand or persisted by an earlier run.
pub fn read_file(path: &Path, command: &str) -> Result<Table, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut t: Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(c) = t.remove("command") {
        if c.as_str() != Some(command) {
            return Err(CliError::Config(format!(
                "{} holds settings for `{}`, not `{command}`",
                path.display(),
                c
            )));
        }
    }
    Ok(t)
}

/// `base` <- file <- flags, then typed.
pub fn resolve<T: Serialize + DeserializeOwned>(
    base: &T,
    file: Option<&Path>,
    command: &str,
    flags: Table,
) -> Result<T, CliError> {
    let mut t = to_table(base)?;
    if let Some(f) = file {
        merge(&mut t, read_file(f, command)?);
    }
    merge(&mut t, flags);
    Value::Table(t)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

/// Write `settings` as `<command>` settings to `path`.
pub fn persist<T: Serialize>(settings: &T, command: &str, path: &Path) -> Result<(), CliError> {
    let mut t = Table::new();
    t.insert("command".into(), Value::String(command.into()));
    merge(&mut t, to_table(settings)?);
    let text = toml::to_string_pretty(&t).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Flag overlay builder: only flags that were given end up in the table.
#[derive(Default)]
pub struct Flags(Table);

impl Flags {
    pub fn set<V: Into<Value>>(&mut self, path: &[&str], v: Option<V>) -> &mut Self {
        let Some(v) = v else { return self };
        let mut t = &mut self.0;
        for key in &path[..path.len() - 1] {
            t = t
                .entry(key.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("flag paths only nest tables");
        }
        t.insert(path[path.len() - 1].to_string(), v.into());
        self
    }

    pub fn path(&mut self, key: &[&str], v: Option<&PathBuf>) -> &mut Self {
        self.set(key, v.map(|p| p.display().to_string()))
    }

    pub fn count(&mut self, key: &[&str], v: Option<usize>) -> &mut Self {
        self.set(key, v.map(|n| n as i64))
    }

    pub fn seed(&mut self, key: &[&str], v: Option<u64>) -> &mut Self {
        self.set(key, v.map(|n| n as i64))
    }

    pub fn switch(&mut self, key: &[&str], on: bool) -> &mut Self {
        self.set(key, on.then_some(true))
    }

    pub fn into_table(self) -> Table {
        self.0
    }
}
