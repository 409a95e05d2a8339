//! Adam optimization, LSTM gradient clipping, early stopping, and the
//! two-phase training schedule: each stream end-to-end on its own, then
//! joint audiovisual fine-tuning at a lower learning rate.

use crate::error::{Error, Result};
use crate::layers::softmax_xent;
use crate::model::{
    fusion_backward, fusion_logits_cached, majority_vote, FramePredictions, FusionGradients,
    FusionModel, StreamClassifier, StreamClassifierGradients,
};
use crate::recurrent::LstmGradients;
use crate::rng::RngState;
use crate::tensor::Matrix;

/// Whether a parameter block belongs to an LSTM cell; only those blocks are
/// gradient-clipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Dense,
    Lstm,
}

/// Named gradient buffer for one parameter block.
#[derive(Clone, Debug)]
pub struct GradBlock {
    pub name: String,
    pub kind: BlockKind,
    pub values: Vec<f64>,
}

/// Mutable view of one parameter block, paired with [`GradBlock`]s by order.
pub struct ParamBlock<'a> {
    pub name: String,
    pub kind: BlockKind,
    pub values: &'a mut [f64],
}

fn lstm_grad_blocks(prefix: &str, g: &LstmGradients, out: &mut Vec<GradBlock>) {
    let push = |out: &mut Vec<GradBlock>, name: String, values: Vec<f64>| {
        out.push(GradBlock {
            name,
            kind: BlockKind::Lstm,
            values,
        })
    };
    push(out, format!("{}.wi", prefix), g.wi.data().to_vec());
    push(out, format!("{}.wf", prefix), g.wf.data().to_vec());
    push(out, format!("{}.wg", prefix), g.wg.data().to_vec());
    push(out, format!("{}.wo", prefix), g.wo.data().to_vec());
    push(out, format!("{}.ui", prefix), g.ui.data().to_vec());
    push(out, format!("{}.uf", prefix), g.uf.data().to_vec());
    push(out, format!("{}.ug", prefix), g.ug.data().to_vec());
    push(out, format!("{}.uo", prefix), g.uo.data().to_vec());
    push(out, format!("{}.bi", prefix), g.bi.clone());
    push(out, format!("{}.bf", prefix), g.bf.clone());
    push(out, format!("{}.bg", prefix), g.bg.clone());
    push(out, format!("{}.bo", prefix), g.bo.clone());
}

fn lstm_param_blocks<'a>(
    prefix: &str,
    p: &'a mut crate::recurrent::LstmParams,
    out: &mut Vec<ParamBlock<'a>>,
) {
    let push = |out: &mut Vec<ParamBlock<'a>>, name: String, values: &'a mut [f64]| {
        out.push(ParamBlock {
            name,
            kind: BlockKind::Lstm,
            values,
        })
    };
    push(out, format!("{}.wi", prefix), p.wi.data_mut());
    push(out, format!("{}.wf", prefix), p.wf.data_mut());
    push(out, format!("{}.wg", prefix), p.wg.data_mut());
    push(out, format!("{}.wo", prefix), p.wo.data_mut());
    push(out, format!("{}.ui", prefix), p.ui.data_mut());
    push(out, format!("{}.uf", prefix), p.uf.data_mut());
    push(out, format!("{}.ug", prefix), p.ug.data_mut());
    push(out, format!("{}.uo", prefix), p.uo.data_mut());
    push(out, format!("{}.bi", prefix), &mut p.bi);
    push(out, format!("{}.bf", prefix), &mut p.bf);
    push(out, format!("{}.bg", prefix), &mut p.bg);
    push(out, format!("{}.bo", prefix), &mut p.bo);
}

fn stream_grad_blocks(prefix: &str, g: &crate::model::StreamGradients, out: &mut Vec<GradBlock>) {
    for (idx, (dw, db)) in g.encoder.iter().enumerate() {
        out.push(GradBlock {
            name: format!("{}.encoder.{}.w", prefix, idx),
            kind: BlockKind::Dense,
            values: dw.data().to_vec(),
        });
        out.push(GradBlock {
            name: format!("{}.encoder.{}.b", prefix, idx),
            kind: BlockKind::Dense,
            values: db.clone(),
        });
    }
    lstm_grad_blocks(&format!("{}.blstm.fwd", prefix), &g.blstm.0, out);
    lstm_grad_blocks(&format!("{}.blstm.bwd", prefix), &g.blstm.1, out);
}

fn stream_param_blocks<'a>(
    prefix: &str,
    s: &'a mut crate::model::StreamParams,
    out: &mut Vec<ParamBlock<'a>>,
) {
    for (idx, layer) in s.encoder.iter_mut().enumerate() {
        out.push(ParamBlock {
            name: format!("{}.encoder.{}.w", prefix, idx),
            kind: BlockKind::Dense,
            values: layer.w.data_mut(),
        });
        out.push(ParamBlock {
            name: format!("{}.encoder.{}.b", prefix, idx),
            kind: BlockKind::Dense,
            values: &mut layer.b,
        });
    }
    lstm_param_blocks(&format!("{}.blstm.fwd", prefix), &mut s.blstm.fwd, out);
    lstm_param_blocks(&format!("{}.blstm.bwd", prefix), &mut s.blstm.bwd, out);
}

/// Parameter-block enumeration for the single-stream classifier, in the
/// fixed order matched by its gradient enumeration.
pub fn stream_classifier_param_blocks(c: &mut StreamClassifier) -> Vec<ParamBlock<'_>> {
    let mut out = Vec::new();
    stream_param_blocks("stream", &mut c.stream, &mut out);
    out.push(ParamBlock {
        name: "output.w".into(),
        kind: BlockKind::Dense,
        values: c.output.w.data_mut(),
    });
    out.push(ParamBlock {
        name: "output.b".into(),
        kind: BlockKind::Dense,
        values: &mut c.output.b,
    });
    out
}

pub fn stream_classifier_grad_blocks(g: &StreamClassifierGradients) -> Vec<GradBlock> {
    let mut out = Vec::new();
    stream_grad_blocks("stream", &g.stream, &mut out);
    out.push(GradBlock {
        name: "output.w".into(),
        kind: BlockKind::Dense,
        values: g.output_dw.data().to_vec(),
    });
    out.push(GradBlock {
        name: "output.b".into(),
        kind: BlockKind::Dense,
        values: g.output_db.clone(),
    });
    out
}

pub fn fusion_param_blocks(m: &mut FusionModel) -> Vec<ParamBlock<'_>> {
    let mut out = Vec::new();
    for (idx, s) in m.streams.iter_mut().enumerate() {
        stream_param_blocks(&format!("stream{}", idx), s, &mut out);
    }
    lstm_param_blocks("fusion.fwd", &mut m.fusion_blstm.fwd, &mut out);
    lstm_param_blocks("fusion.bwd", &mut m.fusion_blstm.bwd, &mut out);
    out.push(ParamBlock {
        name: "output.w".into(),
        kind: BlockKind::Dense,
        values: m.output.w.data_mut(),
    });
    out.push(ParamBlock {
        name: "output.b".into(),
        kind: BlockKind::Dense,
        values: &mut m.output.b,
    });
    out
}

pub fn fusion_grad_blocks(g: &FusionGradients) -> Vec<GradBlock> {
    let mut out = Vec::new();
    for (idx, s) in g.streams.iter().enumerate() {
        stream_grad_blocks(&format!("stream{}", idx), s, &mut out);
    }
    lstm_grad_blocks("fusion.fwd", &g.fusion_blstm.0, &mut out);
    lstm_grad_blocks("fusion.bwd", &g.fusion_blstm.1, &mut out);
    out.push(GradBlock {
        name: "output.w".into(),
        kind: BlockKind::Dense,
        values: g.output_dw.data().to_vec(),
    });
    out.push(GradBlock {
        name: "output.b".into(),
        kind: BlockKind::Dense,
        values: g.output_db.clone(),
    });
    out
}

/// Element-wise accumulation of one gradient set into a running sum.
pub fn accumulate_grads(sum: &mut Option<Vec<GradBlock>>, grads: Vec<GradBlock>) -> Result<()> {
    match sum {
        None => {
            *sum = Some(grads);
            Ok(())
        }
        Some(acc) => {
            if acc.len() != grads.len() {
                return Err(Error::Training("gradient block count mismatch".into()));
            }
            for (a, g) in acc.iter_mut().zip(grads) {
                if a.values.len() != g.values.len() {
                    return Err(Error::Training(format!(
                        "gradient size mismatch in {}",
                        a.name
                    )));
                }
                for (av, gv) in a.values.iter_mut().zip(&g.values) {
                    *av += gv;
                }
            }
            Ok(())
        }
    }
}

/// Adam state: per-block first and second moments plus the step counter.
/// Defaults beta1 = 0.9, beta2 = 0.999, eps = 1e-8; only the learning rate
/// varies between phases.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)` with bias
    /// correction. Errors on a non-finite gradient, naming the block.
    pub fn step(&mut self, params: &mut [ParamBlock<'_>], grads: &[GradBlock]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Training(format!(
                "optimizer got {} parameter blocks and {} gradient blocks",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        }
        for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.values.len() != g.values.len() {
                return Err(Error::Training(format!(
                    "block {} size mismatch: {} vs {}",
                    p.name,
                    p.values.len(),
                    g.values.len()
                )));
            }
            if p.name != g.name {
                return Err(Error::Training(format!(
                    "block order mismatch at {}: {} vs {}",
                    idx, p.name, g.name
                )));
            }
            if g.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in block {}",
                    g.name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.values.len() {
                let gv = g.values[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales each LSTM block whose global L2 norm exceeds `threshold` to norm
/// `threshold` exactly; dense blocks pass through untouched.
pub fn clip_lstm_gradients(grads: &mut [GradBlock], threshold: f64) {
    debug_assert!(threshold > 0.0);
    for g in grads {
        if g.kind != BlockKind::Lstm {
            continue;
        }
        let norm = g.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > threshold {
            let scale = threshold / norm;
            for v in &mut g.values {
                *v *= scale;
            }
        }
    }
}

/// Training-schedule hyperparameters. Stream and fusion phases share
/// everything but the learning rate.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub batch_utterances: usize,
    pub lr_stream: f64,
    pub lr_fusion: f64,
    pub early_stop_delay: usize,
    pub clip_threshold: f64,
    pub max_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_utterances: 10,
            lr_stream: 0.0003,
            lr_fusion: 0.0001,
            early_stop_delay: 5,
            clip_threshold: 5.0,
            max_epochs: 100,
        }
    }
}

/// Early-stopping bookkeeping over validation losses.
#[derive(Clone, Debug)]
pub struct EarlyStopState {
    pub delay: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopState {
    pub fn new(delay: usize) -> Self {
        EarlyStopState {
            delay,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            since_improvement: 0,
        }
    }

    /// Records the validation loss of `epoch`; returns true when it improved
    /// on the best so far (caller snapshots the model then).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            true
        } else {
            self.since_improvement += 1;
            false
        }
    }

    /// True once `delay` epochs passed without improvement; with the loop
    /// breaking on this, training halts exactly at `best_epoch + delay`.
    pub fn should_stop(&self) -> bool {
        self.since_improvement >= self.delay
    }
}

/// One per-epoch, per-split line of the training log.
#[derive(Clone, Debug)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub cr: f64,
    pub uar: f64,
    pub mean_f1: f64,
}

/// Per-utterance training sample for one stream: normalized feature matrix
/// plus the utterance label (every frame carries it).
pub type StreamSample = (Matrix, usize);

/// Per-utterance training sample for fusion: one feature matrix per stream.
pub type FusionSample = (Vec<Matrix>, usize);

fn utterance_metrics(predictions: &[(usize, usize)], classes: usize) -> (f64, f64, f64) {
    let mut cm = crate::eval::ConfusionMatrix::new(classes);
    for &(truth, pred) in predictions {
        cm.record(truth, pred);
    }
    match crate::eval::metrics(&cm) {
        Ok(m) => (m.cr, m.uar, m.mean_f1),
        Err(_) => (0.0, 0.0, 0.0),
    }
}

/// Trains a single-stream classifier with Adam at `lr_stream`, mini-batches
/// of utterances, LSTM clipping, and early stopping on validation loss.
/// Returns the per-epoch log; the classifier is left at the best-epoch
/// parameters.
pub fn train_stream(
    classifier: &mut StreamClassifier,
    train: &[StreamSample],
    validation: &[StreamSample],
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<Vec<TrainLogRow>> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Argument("train and validation splits must be non-empty".into()));
    }
    let classes = classifier.classes();
    let mut adam = AdamState::new(cfg.lr_stream);
    let mut stop = EarlyStopState::new(cfg.early_stop_delay);
    let mut best = classifier.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut train_loss_sum = 0.0;
        let mut train_votes = Vec::with_capacity(train.len());
        for chunk in order.chunks(cfg.batch_utterances.max(1)) {
            let mut grad_sum: Option<Vec<GradBlock>> = None;
            for &idx in chunk {
                let (x, label) = &train[idx];
                let (logits, cache) = classifier.logits_cached(x)?;
                let labels = vec![*label; x.rows()];
                let (loss, d_logits) = softmax_xent(&logits, &labels)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "divergence: non-finite loss at epoch {}",
                        epoch
                    )));
                }
                train_loss_sum += loss;
                train_votes.push((*label, majority_vote(&FramePredictions::from_logits(&logits))));
                let grads = classifier.backward(&cache, &d_logits)?;
                accumulate_grads(&mut grad_sum, stream_classifier_grad_blocks(&grads))?;
            }
            let mut grads = grad_sum.unwrap();
            let scale = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                for v in &mut g.values {
                    *v *= scale;
                }
            }
            clip_lstm_gradients(&mut grads, cfg.clip_threshold);
            let mut params = stream_classifier_param_blocks(classifier);
            adam.step(&mut params, &grads)?;
        }
        let (tc, tu, tf) = utterance_metrics(&train_votes, classes);
        log.push(TrainLogRow {
            epoch,
            split: "train",
            loss: train_loss_sum / train.len() as f64,
            cr: tc,
            uar: tu,
            mean_f1: tf,
        });

        let mut val_loss = 0.0;
        let mut val_votes = Vec::with_capacity(validation.len());
        for (x, label) in validation {
            let (logits, _) = classifier.logits_cached(x)?;
            let labels = vec![*label; x.rows()];
            let (loss, _) = softmax_xent(&logits, &labels)?;
            val_loss += loss;
            val_votes.push((*label, majority_vote(&FramePredictions::from_logits(&logits))));
        }
        val_loss /= validation.len() as f64;
        let (vc, vu, vf) = utterance_metrics(&val_votes, classes);
        log.push(TrainLogRow {
            epoch,
            split: "validation",
            loss: val_loss,
            cr: vc,
            uar: vu,
            mean_f1: vf,
        });

        if stop.observe(epoch, val_loss) {
            best = classifier.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    *classifier = best;
    Ok(log)
}

/// Joint fine-tuning of the assembled fusion model at `lr_fusion`, with the
/// same batching, clipping and early-stopping protocol as stream training.
pub fn train_fusion(
    model: &mut FusionModel,
    train: &[FusionSample],
    validation: &[FusionSample],
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<Vec<TrainLogRow>> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Argument("train and validation splits must be non-empty".into()));
    }
    for (inputs, _) in train.iter().chain(validation) {
        if inputs.len() != model.streams.len() {
            return Err(Error::Config(format!(
                "sample has {} streams, model expects {}",
                inputs.len(),
                model.streams.len()
            )));
        }
        for (x, s) in inputs.iter().zip(&model.streams) {
            if x.cols() != s.input_dim() {
                return Err(Error::Config(format!(
                    "stream input dim {} does not match model dim {}",
                    x.cols(),
                    s.input_dim()
                )));
            }
        }
    }
    let classes = model.classes();
    let mut adam = AdamState::new(cfg.lr_fusion);
    let mut stop = EarlyStopState::new(cfg.early_stop_delay);
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut train_loss_sum = 0.0;
        let mut train_votes = Vec::with_capacity(train.len());
        for chunk in order.chunks(cfg.batch_utterances.max(1)) {
            let mut grad_sum: Option<Vec<GradBlock>> = None;
            for &idx in chunk {
                let (inputs, label) = &train[idx];
                let (logits, cache) = fusion_logits_cached(model, inputs)?;
                let labels = vec![*label; logits.rows()];
                let (loss, d_logits) = softmax_xent(&logits, &labels)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "divergence: non-finite loss at epoch {}",
                        epoch
                    )));
                }
                train_loss_sum += loss;
                train_votes.push((*label, majority_vote(&FramePredictions::from_logits(&logits))));
                let grads = fusion_backward(model, &cache, &d_logits)?;
                accumulate_grads(&mut grad_sum, fusion_grad_blocks(&grads))?;
            }
            let mut grads = grad_sum.unwrap();
            let scale = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                for v in &mut g.values {
                    *v *= scale;
                }
            }
            clip_lstm_gradients(&mut grads, cfg.clip_threshold);
            let mut params = fusion_param_blocks(model);
            adam.step(&mut params, &grads)?;
        }
        let (tc, tu, tf) = utterance_metrics(&train_votes, classes);
        log.push(TrainLogRow {
            epoch,
            split: "train",
            loss: train_loss_sum / train.len() as f64,
            cr: tc,
            uar: tu,
            mean_f1: tf,
        });

        let mut val_loss = 0.0;
        let mut val_votes = Vec::with_capacity(validation.len());
        for (inputs, label) in validation {
            let (logits, _) = fusion_logits_cached(model, inputs)?;
            let labels = vec![*label; logits.rows()];
            let (loss, _) = softmax_xent(&logits, &labels)?;
            val_loss += loss;
            val_votes.push((*label, majority_vote(&FramePredictions::from_logits(&logits))));
        }
        val_loss /= validation.len() as f64;
        let (vc, vu, vf) = utterance_metrics(&val_votes, classes);
        log.push(TrainLogRow {
            epoch,
            split: "validation",
            loss: val_loss,
            cr: vc,
            uar: vu,
            mean_f1: vf,
        });

        if stop.observe(epoch, val_loss) {
            best = model.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    *model = best;
    Ok(log)
}

/// Renders a training log as CSV: `epoch,split,loss,cr,uar,mean_f1`.
pub fn log_to_csv(log: &[TrainLogRow]) -> String {
    let mut out = String::from("epoch,split,loss,cr,uar,mean_f1\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6}\n",
            row.epoch, row.split, row.loss, row.cr, row.uar, row.mean_f1
        ));
    }
    out
}
