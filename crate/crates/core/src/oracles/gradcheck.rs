//! Central finite differences against reverse-mode gradients.

use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

/// Default half-width of the difference stencil.
pub const DEFAULT_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: Option<String>,
    pub coords: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn scalar(t: &Tensor) -> Result<f64> {
    if t.elem_count() != 1 {
        return Err(Error::Shape(format!("loss must be a scalar, got {:?}", t.dims())));
    }
    Ok(t.flatten_all()?.to_vec1::<f64>()?[0])
}

/// Compare the gradient of `loss_fn` at the current parameter values with
/// central differences of step `eps`. At most `max_coords` evenly spaced
/// coordinates are checked per parameter.
///
/// `loss_fn` must be deterministic (frozen noise) and every parameter must
/// be `f64`. Parameters the loss does not reach count as zero gradient.
pub fn finite_diff_grad_check(
    mut loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[(String, Var)],
    eps: f64,
    max_coords: usize,
) -> Result<GradCheck> {
    if !(eps > 0.0) || max_coords == 0 {
        return Err(Error::Config(format!("bad check settings eps={eps}, max_coords={max_coords}")));
    }
    if let Some((name, _)) = params.iter().find(|(_, v)| v.dtype() != DType::F64) {
        return Err(Error::Config(format!("gradient check needs f64 parameters, {name} is not")));
    }
    let loss = loss_fn()?;
    let grads = loss.backward()?;
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coords: 0,
    };
    for (name, var) in params {
        let dims = var.dims().to_vec();
        let n = var.elem_count();
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; n],
        };
        let base = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let stride = n.div_ceil(max_coords).max(1);
        for i in (0..n).step_by(stride) {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, dims.as_slice(), var.device())?)?;
                scalar(&loss_fn()?)
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            var.set(&Tensor::from_vec(base.clone(), dims.as_slice(), var.device())?)?;
            let err = rel_error(analytic[i], numeric);
            out.coords += 1;
            if err > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = out.max_rel_error.max(err);
                out.worst = Some(format!("{name}[{i}]"));
            }
        }
    }
    Ok(out)
}
