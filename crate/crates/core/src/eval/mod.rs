//! Linear-probe evaluation of learned codes and the qualitative operations
//! (conditional generation, attribute transfer, reconstruction).

mod grid;
mod probe;

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{ImageSet, LabeledSet, MAX_WIDTH};
use crate::error::{Error, Result};
use crate::nets::{sample_prior, LatentModel};
use crate::rng::Rng;

pub use grid::{save_grid, tensor_to_rgb8};
pub use probe::{
    column_mae, fit_linear_probe, fit_logistic, fit_ridge, Labels, LogisticProbe, Probe, ProbeTask,
    RidgeProbe, MAX_CONDITION, RIDGE,
};

/// Column order of regression targets and probe reports.
pub const FACTOR_NAMES: [&str; 5] = ["R", "G", "B", "Scale", "Width"];

const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    E,
    Z,
    All,
}

impl FromStr for FeatureSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" => Ok(FeatureSource::E),
            "z" => Ok(FeatureSource::Z),
            "all" => Ok(FeatureSource::All),
            _ => Err(Error::Config(format!("feature source must be e, z or all, got {s}"))),
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureSource::E => "e",
            FeatureSource::Z => "z",
            FeatureSource::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Posterior means.
    Mean,
    /// One reparametrised draw per image.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub source: FeatureSource,
    pub mode: InferenceMode,
}

fn to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    let (n, d) = t.dims2()?;
    let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(DMatrix::from_row_slice(n, d, &flat))
}

/// Encode every image of `images`. `rng` is used only in sample mode.
pub fn extract_features(
    model: &dyn LatentModel,
    images: &ImageSet,
    source: FeatureSource,
    mode: InferenceMode,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    let (c, h, w) = model.image_shape();
    if images.channels != c || images.size != h || images.size != w {
        return Err(Error::Shape(format!(
            "model takes {c}x{h}x{w} images, dataset has {}x{}x{}",
            images.channels, images.size, images.size
        )));
    }
    let mut rows: Vec<DMatrix<f64>> = Vec::new();
    for start in (0..images.len()).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(images.len())).collect();
        let x = images.batch(&idx, model.dtype(), model.device())?;
        let q = match source {
            FeatureSource::E => model.encode_e(&x)?,
            FeatureSource::Z => model.encode_z(&x)?,
            FeatureSource::All => model.encode_joint(&x)?,
        };
        let f = match mode {
            InferenceMode::Mean => q.mu,
            InferenceMode::Sample => q.sample(rng)?,
        };
        rows.push(to_matrix(&f.detach())?);
    }
    let (d_z, d_e) = model.latent_dims();
    let d = match source {
        FeatureSource::E => d_e,
        FeatureSource::Z => d_z,
        FeatureSource::All => d_z + d_e,
    };
    let n: usize = rows.iter().map(|r| r.nrows()).sum();
    let mut values = DMatrix::zeros(n, d);
    let mut at = 0;
    for r in rows {
        values.rows_mut(at, r.nrows()).copy_from(&r);
        at += r.nrows();
    }
    Ok(FeatureMatrix { values, source, mode })
}

/// Regression targets of a labeled set, one row per image, columns in
/// [`FACTOR_NAMES`] order.
pub fn factor_targets(set: &LabeledSet) -> DMatrix<f64> {
    let t = set.targets();
    DMatrix::from_fn(t.len(), 5, |i, j| t[i][j])
}

/// Per-factor errors of a regression probe, or accuracy of a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub features: String,
    /// MAE in [`FACTOR_NAMES`] order; width on the unit scale.
    pub mae: Vec<f64>,
    /// Mean of `mae`.
    pub avg: f64,
    /// Mean over the three colour channels.
    pub color_mae: f64,
    /// Width MAE in pixels.
    pub width_raw_mae: f64,
    pub accuracy: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
}

impl ProbeResult {
    pub const CSV_HEADER: [&'static str; 7] = ["features", "R", "G", "B", "Scale", "Width", "Avg"];

    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.features.clone()];
        row.extend(self.mae.iter().map(|v| format!("{v:.6}")));
        row.push(format!("{:.6}", self.avg));
        row
    }
}

/// Score a probe on held-out features. Regression targets must use the
/// [`FACTOR_NAMES`] layout.
pub fn evaluate_probe(probe: &Probe, features: &FeatureMatrix, labels: &Labels) -> Result<ProbeResult> {
    let name = features.source.to_string();
    match (probe, labels) {
        (Probe::Ridge(p), Labels::Continuous(y)) => {
            let pred = p.predict(&features.values)?;
            let mae = column_mae(&pred, y)?;
            if mae.len() != 5 {
                return Err(Error::Shape(format!("expected 5 factor columns, got {}", mae.len())));
            }
            Ok(ProbeResult {
                features: name,
                avg: mae.iter().sum::<f64>() / mae.len() as f64,
                color_mae: (mae[0] + mae[1] + mae[2]) / 3.0,
                width_raw_mae: mae[4] * (MAX_WIDTH as f64 - 1.0),
                mae,
                accuracy: None,
                per_class_accuracy: Vec::new(),
            })
        }
        (Probe::Logistic(p), Labels::Classes { labels, num_classes }) => {
            let pred = p.predict(&features.values)?;
            if pred.len() != labels.len() {
                return Err(Error::Shape("prediction and label counts differ".into()));
            }
            let mut hit = vec![0usize; *num_classes];
            let mut seen = vec![0usize; *num_classes];
            for (&p, &t) in pred.iter().zip(labels) {
                seen[t] += 1;
                hit[t] += usize::from(p == t);
            }
            let total: usize = hit.iter().sum();
            Ok(ProbeResult {
                features: name,
                mae: Vec::new(),
                avg: f64::NAN,
                color_mae: f64::NAN,
                width_raw_mae: f64::NAN,
                accuracy: Some(total as f64 / labels.len().max(1) as f64),
                per_class_accuracy: hit
                    .iter()
                    .zip(&seen)
                    .map(|(&h, &s)| if s == 0 { f64::NAN } else { h as f64 / s as f64 })
                    .collect(),
            })
        }
        _ => Err(Error::Config("probe kind and labels do not match".into())),
    }
}

/// Fit a regression probe on `fit` and score it on the disjoint `eval` set.
pub fn probe_protocol(
    model: &dyn LatentModel,
    fit: &LabeledSet,
    eval: &LabeledSet,
    source: FeatureSource,
    mode: InferenceMode,
    rng: &mut Rng,
) -> Result<ProbeResult> {
    let train = extract_features(model, &fit.images, source, mode, rng)?;
    let test = extract_features(model, &eval.images, source, mode, rng)?;
    let probe = fit_linear_probe(&train.values, &Labels::Continuous(factor_targets(fit)), ProbeTask::Regression)?;
    evaluate_probe(&probe, &test, &Labels::Continuous(factor_targets(eval)))
}

/// `G(mean_z(x), mean_e(x))`.
pub fn reconstruct(model: &dyn LatentModel, x: &Tensor) -> Result<Tensor> {
    attribute_transfer(model, x, x)
}

/// `G(mean_z(x_b), mean_e(x_a))`: the target factors of `x_a` on the common
/// factors of `x_b`.
pub fn attribute_transfer(model: &dyn LatentModel, x_a: &Tensor, x_b: &Tensor) -> Result<Tensor> {
    if x_a.dims() != x_b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", x_a.dims(), x_b.dims())));
    }
    let e = model.encode_e(x_a)?.mu;
    let z = model.encode_z(x_b)?.mu;
    Ok(model.generate(&z, &e)?.detach())
}

/// `n` images `G(mean_z(x), e_i)` with `e_i` drawn from the prior, for a
/// single image `x` of shape `(1, C, H, W)`.
pub fn conditional_generate(model: &dyn LatentModel, x: &Tensor, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if x.dim(0)? != 1 {
        return Err(Error::Shape(format!("expected one image, got {}", x.dim(0)?)));
    }
    let (_, d_e) = model.latent_dims();
    let z = model.encode_z(x)?.mu;
    let z = z.broadcast_as((n, z.dim(1)?))?.contiguous()?;
    let e = sample_prior(rng, n, d_e, model.dtype(), model.device())?;
    Ok(model.generate(&z, &e)?.detach())
}

/// Per-pixel mean absolute error between two image batches.
pub fn mean_abs_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    crate::objectives::scalar(&(a - b)?.abs()?.mean_all()?)
}
