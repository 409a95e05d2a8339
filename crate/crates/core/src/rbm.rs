//! Gaussian-visible RBMs trained with one-step contrastive divergence, plus
//! the greedy layer-wise pretraining driver that seeds the encoder layers.
//!
//! Visible units are real-valued with unit variance assumed, which is why
//! z-normalization of the data is mandatory before training.

use crate::error::{Error, Result};
use crate::layers::{Activation, DenseLayer};
use crate::rng::{gaussian_sample, RngState};
use crate::tensor::Matrix;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden-unit family. Intermediate encoder layers use noisy rectified
/// linear units; the bottleneck layer uses linear units with unit-variance
/// Gaussian noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HiddenKind {
    NoisyRelu,
    Linear,
}

/// RBM with Gaussian visible units. `w` is visible x hidden.
#[derive(Clone, Debug)]
pub struct GaussianRbm {
    pub w: Matrix,
    pub vbias: Vec<f64>,
    pub hbias: Vec<f64>,
    pub hidden_kind: HiddenKind,
}

impl GaussianRbm {
    /// Small-Gaussian weight init (stddev 0.01), zero biases.
    pub fn new(visible: usize, hidden: usize, kind: HiddenKind, rng: &mut RngState) -> Result<Self> {
        Ok(GaussianRbm {
            w: gaussian_sample(rng, visible, hidden, 0.0, 0.01)?,
            vbias: vec![0.0; visible],
            hbias: vec![0.0; hidden],
            hidden_kind: kind,
        })
    }

    pub fn visible(&self) -> usize {
        self.w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w.cols()
    }

    /// Pre-activations `v W + hbias` for a batch of visible rows.
    fn hidden_pre(&self, v: &Matrix) -> Result<Matrix> {
        let mut z = v.matmul(&self.w)?;
        for r in 0..z.rows() {
            for (zv, &b) in z.row_mut(r).iter_mut().zip(&self.hbias) {
                *zv += b;
            }
        }
        Ok(z)
    }

    /// Deterministic mean hidden activation (used for stacking and for the
    /// CD statistics): `max(0, z)` for noisy-ReLU, `z` for linear.
    pub fn hidden_mean(&self, v: &Matrix) -> Result<Matrix> {
        let z = self.hidden_pre(v)?;
        Ok(match self.hidden_kind {
            HiddenKind::NoisyRelu => z.map(|x| x.max(0.0)),
            HiddenKind::Linear => z,
        })
    }

    /// Stochastic hidden sample. Noisy-ReLU: `max(0, z + N(0, sigmoid(z)))`;
    /// linear: `z + N(0, 1)`.
    fn hidden_sample(&self, v: &Matrix, rng: &mut RngState) -> Result<Matrix> {
        let z = self.hidden_pre(v)?;
        let mut s = Matrix::zeros(z.rows(), z.cols());
        for (out, &zv) in s.data_mut().iter_mut().zip(z.data()) {
            *out = match self.hidden_kind {
                HiddenKind::NoisyRelu => (zv + sigmoid(zv).sqrt() * rng.gaussian()).max(0.0),
                HiddenKind::Linear => zv + rng.gaussian(),
            };
        }
        Ok(s)
    }

    /// Mean-field Gaussian reconstruction `h W^T + vbias`.
    fn visible_mean(&self, h: &Matrix) -> Result<Matrix> {
        let mut v = h.matmul_transpose(&self.w)?;
        for r in 0..v.rows() {
            for (vv, &b) in v.row_mut(r).iter_mut().zip(&self.vbias) {
                *vv += b;
            }
        }
        Ok(v)
    }
}

/// Contrastive-divergence hyperparameters, defaulting to 20 epochs,
/// mini-batches of 100, L2 coefficient 0.0002 and learning rate 0.001.
#[derive(Clone, Copy, Debug)]
pub struct CdConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub cd_steps: usize,
}

impl Default for CdConfig {
    fn default() -> Self {
        CdConfig {
            epochs: 20,
            batch_size: 100,
            l2: 0.0002,
            learning_rate: 0.001,
            cd_steps: 1,
        }
    }
}

fn weight_decay_term(w: &Matrix, l2: f64) -> Matrix {
    w.map(|x| -l2 * x)
}

/// One CD-1 update on a batch (rows = samples). Returns the batch's mean
/// squared reconstruction error.
///
/// `W += lr * ((<v h>_data - <v h>_recon) / batch - l2 * W)`; biases move by
/// the mean activation differences, without weight decay.
pub fn cd1_update(rbm: &mut GaussianRbm, batch: &Matrix, cfg: &CdConfig, rng: &mut RngState) -> Result<f64> {
    if batch.cols() != rbm.visible() {
        return Err(Error::Shape {
            op: "cd1_update",
            left: batch.shape(),
            right: rbm.w.shape(),
        });
    }
    if batch.rows() == 0 {
        return Err(Error::Argument("cd1_update needs a non-empty batch".into()));
    }
    let n = batch.rows() as f64;
    let h0_mean = rbm.hidden_mean(batch)?;
    let h0_sample = rbm.hidden_sample(batch, rng)?;
    let v1 = rbm.visible_mean(&h0_sample)?;
    let h1_mean = rbm.hidden_mean(&v1)?;

    let pos = batch.transpose().matmul(&h0_mean)?;
    let neg = v1.transpose().matmul(&h1_mean)?;

    let lr = cfg.learning_rate;
    let mut dw = pos;
    dw.add_scaled(&neg, -1.0)?;
    dw.scale(1.0 / n);
    dw.add_scaled(&weight_decay_term(&rbm.w, cfg.l2), 1.0)?;
    dw.scale(lr);

    let mut rec_err = 0.0;
    for (a, b) in batch.data().iter().zip(v1.data()) {
        let d = a - b;
        rec_err += d * d;
    }
    rec_err /= batch.data().len() as f64;

    let mut dvb = vec![0.0; rbm.visible()];
    for r in 0..batch.rows() {
        for ((acc, &a), &b) in dvb.iter_mut().zip(batch.row(r)).zip(v1.row(r)) {
            *acc += a - b;
        }
    }
    let mut dhb = vec![0.0; rbm.hidden()];
    for r in 0..h0_mean.rows() {
        for ((acc, &a), &b) in dhb.iter_mut().zip(h0_mean.row(r)).zip(h1_mean.row(r)) {
            *acc += a - b;
        }
    }

    if !dw.is_finite()
        || dvb.iter().any(|v| !v.is_finite())
        || dhb.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Training("non-finite CD-1 update".into()));
    }

    rbm.w.add_scaled(&dw, 1.0)?;
    for (b, d) in rbm.vbias.iter_mut().zip(&dvb) {
        *b += lr * d / n;
    }
    for (b, d) in rbm.hbias.iter_mut().zip(&dhb) {
        *b += lr * d / n;
    }
    Ok(rec_err)
}

/// Result of greedy layer-wise pretraining: one dense-layer initialization
/// per stack entry plus the per-RBM, per-epoch mean reconstruction errors.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub layers: Vec<DenseLayer>,
    pub epoch_errors: Vec<Vec<f64>>,
}

/// Trains one Gaussian RBM per entry of `layer_sizes`, each on the mean
/// hidden representation of the previous one. The final entry is the linear
/// bottleneck; earlier entries are noisy-ReLU. The returned dense layers
/// carry `W_rbm^T` as weights and the hidden biases.
pub fn pretrain_stack(
    layer_sizes: &[usize],
    data: &Matrix,
    cfg: &CdConfig,
    rng: &mut RngState,
) -> Result<PretrainOutcome> {
    if layer_sizes.is_empty() {
        return Err(Error::Argument("pretrain_stack needs at least one layer".into()));
    }
    if data.rows() == 0 {
        return Err(Error::Argument("pretrain_stack needs data".into()));
    }
    let mut layers = Vec::with_capacity(layer_sizes.len());
    let mut epoch_errors = Vec::with_capacity(layer_sizes.len());
    let mut current = data.clone();
    let last = layer_sizes.len() - 1;
    for (idx, &hidden) in layer_sizes.iter().enumerate() {
        let kind = if idx == last {
            HiddenKind::Linear
        } else {
            HiddenKind::NoisyRelu
        };
        let mut rbm = GaussianRbm::new(current.cols(), hidden, kind, rng)?;
        let mut errors = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..current.rows()).collect();
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut sq_sum = 0.0;
            let mut count = 0usize;
            for (batch_no, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
                let batch = Matrix::from_rows(
                    &chunk.iter().map(|&i| current.row(i).to_vec()).collect::<Vec<_>>(),
                )?;
                let err = cd1_update(&mut rbm, &batch, cfg, rng).map_err(|e| match e {
                    Error::Training(msg) => Error::Training(format!(
                        "layer {} epoch {} batch {}: {}",
                        idx, epoch, batch_no, msg
                    )),
                    other => other,
                })?;
                sq_sum += err * batch.data().len() as f64;
                count += batch.data().len();
            }
            errors.push(sq_sum / count as f64);
        }
        let next = rbm.hidden_mean(&current)?;
        let activation = match kind {
            HiddenKind::NoisyRelu => Activation::Relu,
            HiddenKind::Linear => Activation::Linear,
        };
        layers.push(DenseLayer::new(rbm.w.transpose(), rbm.hbias.clone(), activation)?);
        epoch_errors.push(errors);
        current = next;
    }
    Ok(PretrainOutcome { layers, epoch_errors })
}

/// Column-wise z-normalization: per-column mean 0 and population standard
/// deviation 1. Zero-variance columns map to 0 with their std recorded as 1.
pub fn znormalize(data: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    if data.rows() < 2 {
        return Err(Error::Argument(format!(
            "znormalize needs at least 2 rows, got {}",
            data.rows()
        )));
    }
    let n = data.rows() as f64;
    let cols = data.cols();
    let mut mean = vec![0.0; cols];
    for r in 0..data.rows() {
        for (m, &v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; cols];
    for r in 0..data.rows() {
        for ((v, &x), &m) in var.iter_mut().zip(data.row(r)).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let s = (v / n).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        })
        .collect();
    let zero_var: Vec<bool> = var.iter().map(|&v| (v / n).sqrt() < 1e-12).collect();
    let mut out = Matrix::zeros(data.rows(), cols);
    for r in 0..data.rows() {
        let row = out.row_mut(r);
        for c in 0..cols {
            row[c] = if zero_var[c] {
                0.0
            } else {
                (data.get(r, c) - mean[c]) / std[c]
            };
        }
    }
    Ok((out, mean, std))
}

/// Stored normalization statistics, applied to features at train and eval
/// time with the conventions of [`znormalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(data: &Matrix) -> Result<(Matrix, Normalizer)> {
        let (normalized, mean, std) = znormalize(data)?;
        Ok((normalized, Normalizer { mean, std }))
    }

    pub fn apply(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.mean.len() {
            return Err(Error::Shape {
                op: "normalize",
                left: data.shape(),
                right: (1, self.mean.len()),
            });
        }
        let mut out = Matrix::zeros(data.rows(), data.cols());
        for r in 0..data.rows() {
            let row = out.row_mut(r);
            for c in 0..data.cols() {
                row[c] = (data.get(r, c) - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }
}
