//! Batch losses in residual form with their output-space curvature blocks.
//!
//! Both losses are written so that the gradient is `g = (1/b)·Jᵀr` and the
//! Gauss-Newton Hessian is `(1/b)·JᵀQJ` with `Q` block diagonal.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::nn::StackedJacobian;
use crate::{Error, Result};

/// Largest `d` for which a dense `d × d` Hessian may be built.
pub const DENSE_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    #[serde(alias = "ce")]
    CrossEntropy,
}

/// Block-diagonal curvature `Q`, one `c × c` block per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum QBlocks {
    /// `Q = I_n`, kept implicit.
    Identity { n: usize },
    Blocks { c: usize, blocks: Vec<DMatrix<f64>> },
}

impl QBlocks {
    /// Side length `b·c` of the full matrix.
    pub fn dim(&self) -> usize {
        match self {
            QBlocks::Identity { n } => *n,
            QBlocks::Blocks { c, blocks } => c * blocks.len(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, QBlocks::Identity { .. })
    }

    /// `Q v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.dim(), "QBlocks::apply length");
        match self {
            QBlocks::Identity { .. } => v.clone(),
            QBlocks::Blocks { c, blocks } => {
                let mut out = DVector::zeros(v.len());
                for (i, q) in blocks.iter().enumerate() {
                    let vi = v.rows(i * c, *c);
                    out.rows_mut(i * c, *c).copy_from(&(q * vi));
                }
                out
            }
        }
    }

    /// `Q M` for a `bc × k` matrix.
    pub fn mul_left(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.dim(), "QBlocks::mul_left rows");
        match self {
            QBlocks::Identity { .. } => m.clone(),
            QBlocks::Blocks { c, blocks } => {
                let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                for (i, q) in blocks.iter().enumerate() {
                    let mi = m.rows(i * c, *c);
                    out.rows_mut(i * c, *c).copy_from(&(q * mi));
                }
                out
            }
        }
    }

    /// `vᵀ Q v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.apply(v))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            QBlocks::Identity { n } => DMatrix::identity(*n, *n),
            QBlocks::Blocks { c, blocks } => {
                let n = self.dim();
                let mut out = DMatrix::zeros(n, n);
                for (i, q) in blocks.iter().enumerate() {
                    out.view_mut((i * c, i * c), (*c, *c)).copy_from(q);
                }
                out
            }
        }
    }
}

/// Loss value plus the Gauss-Newton ingredients at the current outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub loss: f64,
    /// Sample-major residuals, length `b·c`.
    pub residuals: DVector<f64>,
    pub q: QBlocks,
}

fn check_shapes(outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if outputs.shape() != targets.shape() {
        return Err(Error::mismatch(
            "outputs vs targets",
            format!("{}x{}", outputs.nrows(), outputs.ncols()),
            format!("{}x{}", targets.nrows(), targets.ncols()),
        ));
    }
    if outputs.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

fn flatten_rows(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

/// `L = (1/2b)·Σ‖Φᵢ − yᵢ‖²` with `Q = I`.
pub fn mse_bundle(outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LossBundle> {
    check_shapes(outputs, targets)?;
    let b = outputs.nrows() as f64;
    let residuals = flatten_rows(&(outputs - targets));
    let loss = residuals.norm_squared() / (2.0 * b);
    if !loss.is_finite() {
        return Err(Error::NonFinite("mse loss".into()));
    }
    let n = residuals.len();
    Ok(LossBundle {
        loss,
        residuals,
        q: QBlocks::Identity { n },
    })
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn true_class(row: &[f64], i: usize) -> Result<usize> {
    let mut hot = None;
    for (k, &y) in row.iter().enumerate() {
        if y == 1.0 && hot.is_none() {
            hot = Some(k);
        } else if y != 0.0 {
            hot = None;
            break;
        }
    }
    hot.ok_or_else(|| Error::InvalidArgument(format!("target row {i} is not one-hot: {row:?}")))
}

/// Softmax cross-entropy, `r_i = p_i − y_i`, `Q_i = diag(p_i) − p_i p_iᵀ`.
pub fn ce_bundle(logits: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LossBundle> {
    check_shapes(logits, targets)?;
    let (b, c) = logits.shape();
    if c < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy needs at least 2 classes, got {c}"
        )));
    }
    if !linalg::all_finite(logits.as_slice()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut residuals = DVector::zeros(b * c);
    let mut blocks = Vec::with_capacity(b);
    let mut total = 0.0;
    let mut z = vec![0.0; c];
    let mut y = vec![0.0; c];
    for i in 0..b {
        for k in 0..c {
            z[k] = logits[(i, k)];
            y[k] = targets[(i, k)];
        }
        let star = true_class(&y, i)?;
        let lse = log_sum_exp(&z);
        total += lse - z[star];
        let p: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        for k in 0..c {
            residuals[i * c + k] = p[k] - y[k];
        }
        blocks.push(DMatrix::from_fn(c, c, |j, k| {
            if j == k {
                p[j] - p[j] * p[j]
            } else {
                -p[j] * p[k]
            }
        }));
    }
    Ok(LossBundle {
        loss: total / b as f64,
        residuals,
        q: QBlocks::Blocks { c, blocks },
    })
}

pub fn bundle(kind: LossKind, outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LossBundle> {
    match kind {
        LossKind::Mse => mse_bundle(outputs, targets),
        LossKind::CrossEntropy => ce_bundle(outputs, targets),
    }
}

/// Batch loss only.
pub fn loss_value(kind: LossKind, outputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    match kind {
        LossKind::Mse => {
            check_shapes(outputs, targets)?;
            let loss = (outputs - targets).norm_squared() / (2.0 * outputs.nrows() as f64);
            if loss.is_finite() {
                Ok(loss)
            } else {
                Err(Error::NonFinite("mse loss".into()))
            }
        }
        LossKind::CrossEntropy => ce_bundle(outputs, targets).map(|bundle| bundle.loss),
    }
}

/// Residual derivative of the loss per output, `b × c`, i.e. `b·∂L/∂Φ`.
pub fn residual_matrix(residuals: &DVector<f64>, c: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(residuals.len() / c, c, residuals.as_slice())
}

/// `g = (1/b)·Jᵀr`.
pub fn batch_gradient(j: &StackedJacobian, r: &DVector<f64>, b: usize) -> Result<DVector<f64>> {
    if r.len() != j.rows() {
        return Err(Error::mismatch("residual length", j.rows(), r.len()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    Ok(j.tr_mul_vec(r) / b as f64)
}

/// Dense `(1/b)·JᵀQJ`; test-scale only.
pub fn ggn_hessian_dense(j: &StackedJacobian, q: &QBlocks, b: usize) -> Result<DMatrix<f64>> {
    if j.params() > DENSE_CAP {
        return Err(Error::TooLarge {
            dim: j.params(),
            cap: DENSE_CAP,
        });
    }
    if q.dim() != j.rows() {
        return Err(Error::mismatch("Q dimension", j.rows(), q.dim()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let qj = q.mul_left(&j.to_matrix());
    let mut h = linalg::tr_mul(&j.to_matrix(), &qj) / b as f64;
    linalg::symmetrize(&mut h);
    Ok(h)
}
