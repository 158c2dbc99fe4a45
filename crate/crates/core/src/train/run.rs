use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetPair, ImageSet};
use crate::error::{Error, Result};
use crate::nets::{ArchConfig, ConvModel, LatentModel};
use crate::objectives::{LossReport, PART_NAMES};
use crate::rng::{substream, Stream};

use super::{save_checkpoint, train_step, Checkpoint, TrainConfig, TrainState};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";

/// Substream indices at or above this band order the reference set.
const REFERENCE_BAND: u64 = 1 << 32;

const EXTRA_COLUMNS: [&str; 2] = ["disc_xi", "disc_gamma"];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where checkpoints and the metrics log go. Nothing is written if unset.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<Checkpoint>,
    /// One summary line per epoch on stderr.
    pub verbose: bool,
}

/// Per-epoch averages of every logged part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub steps: u64,
    pub means: BTreeMap<String, f64>,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: u64,
    pub total: f64,
    pub parts: BTreeMap<String, f64>,
}

fn columns() -> impl Iterator<Item = &'static str> {
    PART_NAMES.iter().chain(EXTRA_COLUMNS.iter()).copied()
}

struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl MetricsLog {
    fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut log = MetricsLog {
            writer: csv::Writer::from_writer(file),
            path,
        };
        if fresh {
            let header: Vec<&str> = ["step", "epoch", "total"].into_iter().chain(columns()).collect();
            log.write(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
        }
        Ok(log)
    }

    fn write(&mut self, rec: &[String]) -> Result<()> {
        let p = &self.path;
        self.writer
            .write_record(rec)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
    }

    fn row(&mut self, step: u64, epoch: u64, r: &LossReport) -> Result<()> {
        let mut rec = vec![step.to_string(), epoch.to_string(), r.total.to_string()];
        for c in columns() {
            rec.push(r.get(c).map(|v| v.to_string()).unwrap_or_default());
        }
        self.write(&rec)
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Parse a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("{}: column {i}: {e}", path.display())))
        };
        let mut parts = BTreeMap::new();
        for (i, h) in headers.iter().enumerate().skip(3) {
            if let Some(v) = rec.get(i).filter(|s| !s.is_empty()) {
                let v = v
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("{}: {h}: {e}", path.display())))?;
                parts.insert(h.to_string(), v);
            }
        }
        rows.push(MetricsRow {
            step: num(0)? as u64,
            epoch: num(1)? as u64,
            total: num(2)?,
            parts,
        });
    }
    Ok(rows)
}

fn permutation(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut substream(seed, Stream::Shuffle, index));
    v
}

/// Reference batches walk an endless chain of independent permutations; the
/// batch for a step depends only on the step number.
struct ReferenceOrder {
    n: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl ReferenceOrder {
    fn batch(&mut self, step: u64, m: usize) -> Vec<usize> {
        let start = step * m as u64;
        (0..m as u64)
            .map(|k| {
                let pos = start + k;
                let cycle = pos / self.n as u64;
                if self.cached.as_ref().map(|c| c.0) != Some(cycle) {
                    self.cached = Some((cycle, permutation(self.n, self.seed, REFERENCE_BAND + cycle)));
                }
                self.cached.as_ref().expect("filled above").1[(pos % self.n as u64) as usize]
            })
            .collect()
    }
}

fn to_batch<M: LatentModel>(set: &ImageSet, idx: &[usize], model: &M) -> Result<Tensor> {
    set.batch(idx, model.dtype(), model.device())
}

/// Run epochs `state.epoch..cfg.epochs` on any model. `on_epoch` sees the
/// state after each completed epoch.
pub fn train_model<M: LatentModel>(
    state: &mut TrainState<M>,
    data: &DatasetPair,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    verbose: bool,
    mut on_epoch: impl FnMut(&TrainState<M>) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let unlabelled = &data.unlabelled.images;
    let reference = &data.reference;
    let m = cfg.batch_size;
    if unlabelled.len() < m {
        return Err(Error::Config(format!(
            "{} unlabelled images cannot fill a batch of {m}",
            unlabelled.len()
        )));
    }
    if cfg.variant.uses_reference() && reference.is_empty() {
        return Err(Error::Config("reference-based training needs reference images".into()));
    }
    let mut log = match out_dir {
        Some(d) => Some(MetricsLog::open(d)?),
        None => None,
    };
    let mut ref_order = ReferenceOrder {
        n: reference.len().max(1),
        seed: cfg.seed,
        cached: None,
    };
    let per_epoch = unlabelled.len() / m;
    while (state.epoch as usize) < cfg.epochs {
        let epoch = state.epoch;
        let order = permutation(unlabelled.len(), cfg.seed, epoch);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for b in 0..per_epoch {
            let x_u = to_batch(unlabelled, &order[b * m..(b + 1) * m], &state.model)?;
            let x_r = if cfg.variant.uses_reference() {
                Some(to_batch(reference, &ref_order.batch(state.step, m), &state.model)?)
            } else {
                None
            };
            let step = state.step;
            let report = train_step(state, &x_u, x_r.as_ref(), cfg)?;
            *sums.entry("total".into()).or_default() += report.total;
            for p in &report.parts {
                *sums.entry(p.name.clone()).or_default() += p.value;
            }
            if let Some(log) = log.as_mut() {
                log.row(step, epoch, &report)?;
            }
        }
        if let Some(log) = log.as_mut() {
            log.flush()?;
        }
        let means: BTreeMap<String, f64> = sums.into_iter().map(|(k, v)| (k, v / per_epoch as f64)).collect();
        if verbose {
            let line: Vec<String> = means.iter().map(|(k, v)| format!("{k}={v:.3}")).collect();
            eprintln!("epoch {} ({} steps): {}", epoch + 1, per_epoch, line.join(" "));
        }
        state.history.push(EpochMetrics {
            epoch,
            steps: per_epoch as u64,
            means,
        });
        state.epoch += 1;
        on_epoch(state)?;
    }
    Ok(())
}

/// Train the convolutional model on `data` and return the final checkpoint.
///
/// With an output directory, the metrics log is appended to
/// `<out>/metrics.csv`, the final checkpoint goes to
/// `<out>/checkpoint.safetensors`, and with `checkpoint_every = k > 0` every
/// k-th epoch is also kept as `<out>/checkpoint-epoch-<n>.safetensors`.
pub fn train(data: &DatasetPair, arch: &ArchConfig, cfg: &TrainConfig, opts: &RunOptions) -> Result<Checkpoint> {
    cfg.validate()?;
    if arch.image_size != data.image_size {
        return Err(Error::Config(format!(
            "architecture is for {}px images, dataset has {}px",
            arch.image_size, data.image_size
        )));
    }
    let mut state = match &opts.resume {
        Some(c) => {
            if c.arch != *arch || c.train.variant != cfg.variant || c.train.seed != cfg.seed {
                return Err(Error::Config(
                    "resume checkpoint was trained with a different architecture, variant or seed".into(),
                ));
            }
            c.to_state()?
        }
        None => TrainState::new(ConvModel::new(arch, cfg.variant.model_variant(), cfg.seed)?)?,
    };
    let fingerprint = Some(data.fingerprint());
    let out = opts.out_dir.as_deref();
    train_model(&mut state, data, cfg, out, opts.verbose, |s| {
        if let (Some(dir), k) = (out, cfg.checkpoint_every) {
            if k > 0 && s.epoch % k as u64 == 0 {
                let ck = Checkpoint::from_state(s, cfg, fingerprint.clone())?;
                save_checkpoint(&ck, &dir.join(format!("checkpoint-epoch-{}.safetensors", s.epoch)))?;
            }
        }
        Ok(())
    })?;
    let ck = Checkpoint::from_state(&state, cfg, fingerprint)?;
    if let Some(dir) = out {
        save_checkpoint(&ck, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(ck)
}
