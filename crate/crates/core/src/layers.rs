//! Feed-forward building blocks with explicit forward/backward passes:
//! dense layers, the temporal derivative (delta) operator, and the softmax
//! cross-entropy head.
//!
//! Feature sequences are `Matrix` values with frames as rows (T x D).

use crate::error::{Error, Result};
use crate::rng::{glorot_init, RngState};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Dense layer `y = act(W x + b)` with `W` stored out x in.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub activation: Activation,
}

/// Gradients of one dense layer plus the gradient w.r.t. its input.
#[derive(Clone, Debug)]
pub struct LayerGradients {
    pub dw: Matrix,
    pub db: Vec<f64>,
    pub dx: Matrix,
}

impl DenseLayer {
    pub fn new(w: Matrix, b: Vec<f64>, activation: Activation) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(Error::Shape {
                op: "dense_new",
                left: w.shape(),
                right: (b.len(), 1),
            });
        }
        Ok(DenseLayer { w, b, activation })
    }

    pub fn glorot(rng: &mut RngState, in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        let w = glorot_init(rng, in_dim, out_dim)?;
        Ok(DenseLayer {
            w,
            b: vec![0.0; out_dim],
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    /// Per-frame `y = act(W x + b)`; the frame count is preserved.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape {
                op: "dense_forward",
                left: x.shape(),
                right: self.w.shape(),
            });
        }
        let mut y = x.matmul_transpose(&self.w)?;
        for r in 0..y.rows() {
            let row = y.row_mut(r);
            for (v, &b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        if self.activation == Activation::Relu {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(y)
    }

    /// Analytic gradients of the forward map. `y` must be the output of
    /// `forward(x)`; for ReLU the derivative is recovered from `y > 0`.
    pub fn backward(&self, x: &Matrix, y: &Matrix, d_out: &Matrix) -> Result<LayerGradients> {
        if d_out.shape() != y.shape() || x.rows() != y.rows() || x.cols() != self.in_dim() {
            return Err(Error::Shape {
                op: "dense_backward",
                left: x.shape(),
                right: d_out.shape(),
            });
        }
        let dz = match self.activation {
            Activation::Linear => d_out.clone(),
            Activation::Relu => {
                let mut dz = d_out.clone();
                for (d, &yv) in dz.data_mut().iter_mut().zip(y.data()) {
                    if yv <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz
            }
        };
        // dW = dZ^T x ; db = column sums of dZ ; dX = dZ W
        let dw = dz.transpose().matmul(x)?;
        let mut db = vec![0.0; self.out_dim()];
        for r in 0..dz.rows() {
            for (acc, &d) in db.iter_mut().zip(dz.row(r)) {
                *acc += d;
            }
        }
        let dx = dz.matmul(&self.w)?;
        Ok(LayerGradients { dw, db, dx })
    }
}

/// Window configuration for the temporal-derivative operator.
///
/// `delta[t] = sum_{k=1..window} k * (x[t+k] - x[t-k]) / (2 * sum k^2)`,
/// with edge frames replicated. Second derivatives apply the same operator
/// to the first derivatives.
#[derive(Clone, Copy, Debug)]
pub struct DeltaConfig {
    pub window: usize,
}

impl DeltaConfig {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Argument("delta window must be >= 1".into()));
        }
        Ok(DeltaConfig { window })
    }

    fn denom(&self) -> f64 {
        2.0 * (1..=self.window).map(|k| (k * k) as f64).sum::<f64>()
    }
}

impl Default for DeltaConfig {
    fn default() -> Self {
        DeltaConfig { window: 2 }
    }
}

fn delta_apply(cfg: &DeltaConfig, x: &Matrix) -> Matrix {
    let t_len = x.rows();
    let denom = cfg.denom();
    let mut out = Matrix::zeros(t_len, x.cols());
    for t in 0..t_len {
        let row = out.row_mut(t);
        for k in 1..=cfg.window {
            let ahead = (t + k).min(t_len - 1);
            let behind = t.saturating_sub(k);
            let coeff = k as f64 / denom;
            for ((o, &a), &b) in row.iter_mut().zip(x.row(ahead)).zip(x.row(behind)) {
                *o += coeff * (a - b);
            }
        }
    }
    out
}

/// Adjoint of `delta_apply`: scatters each coefficient back onto the
/// (clamped) source frame it read from.
fn delta_adjoint(cfg: &DeltaConfig, u: &Matrix) -> Matrix {
    let t_len = u.rows();
    let denom = cfg.denom();
    let mut out = Matrix::zeros(t_len, u.cols());
    for t in 0..t_len {
        for k in 1..=cfg.window {
            let ahead = (t + k).min(t_len - 1);
            let behind = t.saturating_sub(k);
            let coeff = k as f64 / denom;
            for (c, &uv) in u.row(t).iter().enumerate() {
                out.data_mut()[ahead * u.cols() + c] += coeff * uv;
                out.data_mut()[behind * u.cols() + c] -= coeff * uv;
            }
        }
    }
    out
}

/// Appends first and second temporal derivatives: output is `[x | dx | ddx]`
/// with dimension `3 * x.cols()`.
pub fn delta_forward(cfg: &DeltaConfig, x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Argument("delta_forward needs at least one frame".into()));
    }
    let d1 = delta_apply(cfg, x);
    let d2 = delta_apply(cfg, &d1);
    x.hcat(&d1)?.hcat(&d2)
}

/// Exact adjoint of [`delta_forward`], including the edge-replication adjoint.
pub fn delta_backward(cfg: &DeltaConfig, d_out: &Matrix) -> Result<Matrix> {
    if d_out.cols() % 3 != 0 {
        return Err(Error::Shape {
            op: "delta_backward",
            left: d_out.shape(),
            right: (d_out.rows(), d_out.cols() / 3 * 3),
        });
    }
    let dim = d_out.cols() / 3;
    let dx_id = d_out.col_slice(0, dim)?;
    let du1 = d_out.col_slice(dim, dim)?;
    let du2 = d_out.col_slice(2 * dim, dim)?;
    // d2 = A(A(x)) so its adjoint is A^T(A^T(u2)).
    let mut dx = delta_adjoint(cfg, &delta_adjoint(cfg, &du2));
    dx.add_scaled(&delta_adjoint(cfg, &du1), 1.0)?;
    dx.add_scaled(&dx_id, 1.0)?;
    Ok(dx)
}

/// Mean per-frame softmax cross-entropy.
///
/// Returns the loss and `dLogits = (softmax - onehot) / T`. Per-frame
/// probabilities sum to 1 within 1e-12.
pub fn softmax_xent(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let t_len = logits.rows();
    let classes = logits.cols();
    if labels.len() != t_len {
        return Err(Error::Shape {
            op: "softmax_xent",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if t_len == 0 {
        return Err(Error::Argument("softmax_xent needs at least one frame".into()));
    }
    let mut d_logits = Matrix::zeros(t_len, classes);
    let mut loss = 0.0;
    for t in 0..t_len {
        let label = labels[t];
        if label >= classes {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes at frame {}",
                label, classes, t
            )));
        }
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let d_row = d_logits.row_mut(t);
        for (d, &z) in d_row.iter_mut().zip(row) {
            let e = (z - max).exp();
            *d = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for d in d_row.iter_mut() {
            *d *= inv;
        }
        loss -= d_row[label].ln();
        let scale = 1.0 / t_len as f64;
        for (c, d) in d_row.iter_mut().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            *d = (*d - onehot) * scale;
        }
    }
    Ok((loss / t_len as f64, d_logits))
}

/// Per-frame softmax probabilities. Rows sum to 1 within 1e-12.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = Matrix::zeros(logits.rows(), logits.cols());
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let p_row = p.row_mut(t);
        for (d, &z) in p_row.iter_mut().zip(row) {
            let e = (z - max).exp();
            *d = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for d in p_row.iter_mut() {
            *d *= inv;
        }
    }
    p
}
