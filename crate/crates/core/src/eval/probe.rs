use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge penalty of the regression probe. The intercept is not penalised.
pub const RIDGE: f64 = 1e-4;
/// Regularised normal matrices worse conditioned than this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    Regression,
    Classification,
}

/// Probe targets: real-valued columns or class indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Continuous(DMatrix<f64>),
    Classes { labels: Vec<usize>, num_classes: usize },
}

impl Labels {
    pub fn rows(&self) -> usize {
        match self {
            Labels::Continuous(y) => y.nrows(),
            Labels::Classes { labels, .. } => labels.len(),
        }
    }
}

/// Affine least-squares map `y = (x - x_mean) B + y_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeProbe {
    pub coef: DMatrix<f64>,
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    /// Condition number of the regularised normal matrix.
    pub condition: f64,
}

impl RidgeProbe {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_cols(x, self.x_mean.len())?;
        let mut out = center(x, &self.x_mean) * &self.coef;
        for mut row in out.row_iter_mut() {
            row += self.y_mean.transpose();
        }
        Ok(out)
    }
}

/// Multinomial logistic regression on standardised features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub x_mean: DVector<f64>,
    pub x_scale: DVector<f64>,
}

impl LogisticProbe {
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_cols(x, self.x_mean.len())?;
        let mut z = standardize(x, &self.x_mean, &self.x_scale) * &self.weights;
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(z)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let s = self.scores(x)?;
        Ok(s.row_iter().map(|r| r.transpose().argmax().0).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    Ridge(RidgeProbe),
    Logistic(LogisticProbe),
}

fn check_cols(x: &DMatrix<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::Shape(format!("probe fitted on {d} features, got {}", x.ncols())));
    }
    Ok(())
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()))
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

fn standardize(x: &DMatrix<f64>, mean: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let mut c = center(x, mean);
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col /= scale[j];
    }
    c
}

/// Ridge regression with penalty `ridge` on the slopes, solved by Cholesky
/// on the centred normal equations.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> Result<RidgeProbe> {
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::Shape(format!(
            "{} feature rows for {} label rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let x_mean = column_means(x);
    let y_mean = column_means(y);
    let xc = center(x, &x_mean);
    let yc = center(y, &y_mean);
    let d = x.ncols();
    let gram = xc.transpose() * &xc + DMatrix::identity(d, d) * ridge;
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Degenerate { condition });
    }
    let chol = gram.cholesky().ok_or(Error::Degenerate { condition })?;
    let coef = chol.solve(&(xc.transpose() * yc));
    Ok(RidgeProbe {
        coef,
        x_mean,
        y_mean,
        condition,
    })
}

/// Full-batch gradient descent on the mean cross-entropy plus a small L2
/// penalty. Deterministic: fixed step, fixed iteration count, zero start.
pub fn fit_logistic(x: &DMatrix<f64>, labels: &[usize], num_classes: usize) -> Result<LogisticProbe> {
    const ITERS: usize = 500;
    const STEP: f64 = 0.5;
    const L2: f64 = 1e-4;
    let n = x.nrows();
    if n != labels.len() || n == 0 {
        return Err(Error::Shape(format!("{n} feature rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Validation(format!("class {bad} outside 0..{num_classes}")));
    }
    let x_mean = column_means(x);
    let x_scale = DVector::from_iterator(
        x.ncols(),
        x.column_iter().zip(x_mean.iter()).map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        }),
    );
    let xs = standardize(x, &x_mean, &x_scale);
    let mut onehot = DMatrix::zeros(n, num_classes);
    for (i, &l) in labels.iter().enumerate() {
        onehot[(i, l)] = 1.0;
    }
    let mut w = DMatrix::zeros(x.ncols(), num_classes);
    let mut b = DVector::zeros(num_classes);
    for _ in 0..ITERS {
        let mut p = &xs * &w;
        for mut row in p.row_iter_mut() {
            row += b.transpose();
            let m = row.max();
            row.apply(|v| *v = (*v - m).exp());
            let s = row.sum();
            row /= s;
        }
        let err = (p - &onehot) / n as f64;
        let gw = xs.transpose() * &err + &w * L2;
        let gb = DVector::from_iterator(num_classes, err.column_iter().map(|c| c.sum()));
        w -= gw * STEP;
        b -= gb * STEP;
    }
    Ok(LogisticProbe {
        weights: w,
        bias: b,
        x_mean,
        x_scale,
    })
}

pub fn fit_linear_probe(features: &DMatrix<f64>, labels: &Labels, task: ProbeTask) -> Result<Probe> {
    if features.nrows() != labels.rows() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} label rows",
            features.nrows(),
            labels.rows()
        )));
    }
    match (task, labels) {
        (ProbeTask::Regression, Labels::Continuous(y)) => Ok(Probe::Ridge(fit_ridge(features, y, RIDGE)?)),
        (ProbeTask::Classification, Labels::Classes { labels, num_classes }) => {
            Ok(Probe::Logistic(fit_logistic(features, labels, *num_classes)?))
        }
        _ => Err(Error::Config(format!("{task:?} probe needs matching labels"))),
    }
}

/// Mean absolute error per target column.
pub fn column_mae(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok((0..pred.ncols())
        .map(|j| {
            pred.column(j)
                .iter()
                .zip(truth.column(j).iter())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / pred.nrows().max(1) as f64
        })
        .collect())
}
