//! Stream and fusion network assembly.
//!
//! A stream runs encoder -> delta append -> BLSTM. The fusion model
//! concatenates the per-frame BLSTM outputs of all streams, feeds them to a
//! fusion BLSTM, and classifies every frame through a linear output layer
//! plus softmax. The majority label over the utterance labels it.

use crate::error::{Error, Result};
use crate::layers::{
    delta_backward, delta_forward, softmax_rows, Activation, DeltaConfig, DenseLayer,
};
use crate::recurrent::{
    blstm_backward, blstm_forward, BlstmCache, BlstmGradients, BlstmParams,
};
use crate::rng::RngState;
use crate::tensor::Matrix;

/// All learnable parameters of one modality stream.
#[derive(Clone, Debug)]
pub struct StreamParams {
    pub encoder: Vec<DenseLayer>,
    pub delta: DeltaConfig,
    pub blstm: BlstmParams,
}

impl StreamParams {
    /// Glorot-initialized stream: hidden encoder layers are ReLU, the final
    /// (bottleneck) layer is linear, and the BLSTM consumes the bottleneck
    /// together with its temporal derivatives.
    pub fn glorot(
        rng: &mut RngState,
        input_dim: usize,
        encoder_sizes: &[usize],
        delta: DeltaConfig,
        hidden: usize,
    ) -> Result<Self> {
        if encoder_sizes.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let mut encoder = Vec::with_capacity(encoder_sizes.len());
        let mut in_dim = input_dim;
        for (idx, &out_dim) in encoder_sizes.iter().enumerate() {
            let act = if idx == encoder_sizes.len() - 1 {
                Activation::Linear
            } else {
                Activation::Relu
            };
            encoder.push(DenseLayer::glorot(rng, in_dim, out_dim, act)?);
            in_dim = out_dim;
        }
        let blstm = BlstmParams::glorot(rng, 3 * in_dim, hidden)?;
        Ok(StreamParams { encoder, delta, blstm })
    }

    /// Replaces the Glorot encoder with RBM-pretrained layers. Shapes must
    /// match the configured stack.
    pub fn with_encoder(mut self, encoder: Vec<DenseLayer>) -> Result<Self> {
        if encoder.len() != self.encoder.len() {
            return Err(Error::Config(format!(
                "pretrained stack has {} layers, model expects {}",
                encoder.len(),
                self.encoder.len()
            )));
        }
        for (new, old) in encoder.iter().zip(&self.encoder) {
            if new.w.shape() != old.w.shape() {
                return Err(Error::Shape {
                    op: "with_encoder",
                    left: new.w.shape(),
                    right: old.w.shape(),
                });
            }
        }
        self.encoder = encoder;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim()
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.encoder.last().unwrap().out_dim()
    }

    /// Output dimension: two directions of the stream BLSTM.
    pub fn out_dim(&self) -> usize {
        self.blstm.out_dim()
    }
}

/// Activations retained by a stream forward pass for backward.
#[derive(Clone, Debug)]
pub struct StreamCache {
    /// layer_io[0] is the input; layer_io[k+1] the k-th encoder output.
    layer_io: Vec<Matrix>,
    blstm_in: Matrix,
    blstm: BlstmCache,
}

/// Gradients of all stream parameters.
#[derive(Clone, Debug)]
pub struct StreamGradients {
    pub encoder: Vec<(Matrix, Vec<f64>)>,
    pub blstm: BlstmGradients,
}

/// Encoder -> delta append -> BLSTM. Frame count is preserved.
pub fn stream_forward(s: &StreamParams, x: &Matrix) -> Result<Matrix> {
    Ok(stream_forward_cached(s, x)?.0)
}

pub fn stream_forward_cached(s: &StreamParams, x: &Matrix) -> Result<(Matrix, StreamCache)> {
    let mut layer_io = Vec::with_capacity(s.encoder.len() + 1);
    layer_io.push(x.clone());
    for layer in &s.encoder {
        let y = layer.forward(layer_io.last().unwrap())?;
        layer_io.push(y);
    }
    let blstm_in = delta_forward(&s.delta, layer_io.last().unwrap())?;
    let (out, blstm) = blstm_forward(&s.blstm, &blstm_in)?;
    Ok((
        out,
        StreamCache {
            layer_io,
            blstm_in,
            blstm,
        },
    ))
}

/// Backward through BLSTM, delta adjoint, and the encoder stack.
/// Returns the parameter gradients and the gradient w.r.t. the stream input.
pub fn stream_backward(
    s: &StreamParams,
    cache: &StreamCache,
    d_out: &Matrix,
) -> Result<(StreamGradients, Matrix)> {
    let (blstm_grads, d_blstm_in) = blstm_backward(&s.blstm, &cache.blstm_in, &cache.blstm, d_out)?;
    let mut d_enc_out = delta_backward(&s.delta, &d_blstm_in)?;
    let mut encoder_grads = vec![None; s.encoder.len()];
    for (idx, layer) in s.encoder.iter().enumerate().rev() {
        let g = layer.backward(&cache.layer_io[idx], &cache.layer_io[idx + 1], &d_enc_out)?;
        encoder_grads[idx] = Some((g.dw, g.db));
        d_enc_out = g.dx;
    }
    Ok((
        StreamGradients {
            encoder: encoder_grads.into_iter().map(|g| g.unwrap()).collect(),
            blstm: blstm_grads,
        },
        d_enc_out,
    ))
}

/// Two stream networks, a fusion BLSTM over their concatenated outputs, and
/// a linear per-frame output layer of `C` classes.
#[derive(Clone, Debug)]
pub struct FusionModel {
    pub streams: Vec<StreamParams>,
    pub fusion_blstm: BlstmParams,
    pub output: DenseLayer,
}

impl FusionModel {
    /// Assembles the fusion network from already-trained streams. The fusion
    /// BLSTM and output layer are freshly Glorot-initialized.
    pub fn from_streams(
        streams: Vec<StreamParams>,
        fusion_hidden: usize,
        classes: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if streams.is_empty() {
            return Err(Error::Config("fusion needs at least one stream".into()));
        }
        let concat_dim: usize = streams.iter().map(|s| s.out_dim()).sum();
        let fusion_blstm = BlstmParams::glorot(rng, concat_dim, fusion_hidden)?;
        let output = DenseLayer::glorot(rng, 2 * fusion_hidden, classes, Activation::Linear)?;
        Ok(FusionModel {
            streams,
            fusion_blstm,
            output,
        })
    }

    pub fn classes(&self) -> usize {
        self.output.out_dim()
    }
}

/// Per-frame class posteriors and argmax labels.
#[derive(Clone, Debug)]
pub struct FramePredictions {
    pub posteriors: Matrix,
    pub labels: Vec<usize>,
}

impl FramePredictions {
    pub fn from_logits(logits: &Matrix) -> Self {
        let posteriors = softmax_rows(logits);
        let labels = (0..posteriors.rows())
            .map(|t| {
                let row = posteriors.row(t);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        FramePredictions { posteriors, labels }
    }

    pub fn frames(&self) -> usize {
        self.posteriors.rows()
    }
}

#[derive(Clone, Debug)]
pub struct FusionCache {
    stream_caches: Vec<StreamCache>,
    concat: Matrix,
    blstm: BlstmCache,
    blstm_out: Matrix,
    logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct FusionGradients {
    pub streams: Vec<StreamGradients>,
    pub fusion_blstm: BlstmGradients,
    pub output_dw: Matrix,
    pub output_db: Vec<f64>,
}

/// Per-frame logits of the full fusion network. All inputs must share the
/// same frame count (the pipeline synchronizes them beforehand).
pub fn fusion_logits_cached(m: &FusionModel, inputs: &[Matrix]) -> Result<(Matrix, FusionCache)> {
    if inputs.len() != m.streams.len() {
        return Err(Error::Config(format!(
            "model has {} streams but {} inputs were supplied",
            m.streams.len(),
            inputs.len()
        )));
    }
    let frames = inputs[0].rows();
    for (idx, x) in inputs.iter().enumerate() {
        if x.rows() != frames {
            return Err(Error::Synchronization(format!(
                "stream {} has {} frames, stream 0 has {}",
                idx,
                x.rows(),
                frames
            )));
        }
    }
    let mut stream_caches = Vec::with_capacity(m.streams.len());
    let mut concat: Option<Matrix> = None;
    for (s, x) in m.streams.iter().zip(inputs) {
        let (out, cache) = stream_forward_cached(s, x)?;
        stream_caches.push(cache);
        concat = Some(match concat {
            None => out,
            Some(prev) => prev.hcat(&out)?,
        });
    }
    let concat = concat.unwrap();
    let (blstm_out, blstm) = blstm_forward(&m.fusion_blstm, &concat)?;
    let logits = m.output.forward(&blstm_out)?;
    Ok((
        logits.clone(),
        FusionCache {
            stream_caches,
            concat,
            blstm,
            blstm_out,
            logits,
        },
    ))
}

/// Full forward pass to per-frame posteriors.
pub fn fusion_forward(m: &FusionModel, inputs: &[Matrix]) -> Result<FramePredictions> {
    let (logits, _) = fusion_logits_cached(m, inputs)?;
    Ok(FramePredictions::from_logits(&logits))
}

/// Backward pass of the full fusion network given `dLogits`.
pub fn fusion_backward(
    m: &FusionModel,
    cache: &FusionCache,
    d_logits: &Matrix,
) -> Result<FusionGradients> {
    let out_grads = m.output.backward(&cache.blstm_out, &cache.logits, d_logits)?;
    let (fusion_blstm, d_concat) =
        blstm_backward(&m.fusion_blstm, &cache.concat, &cache.blstm, &out_grads.dx)?;
    let mut streams = Vec::with_capacity(m.streams.len());
    let mut col = 0;
    for (s, cache_s) in m.streams.iter().zip(&cache.stream_caches) {
        let width = s.out_dim();
        let d_stream = d_concat.col_slice(col, width)?;
        col += width;
        let (g, _) = stream_backward(s, cache_s, &d_stream)?;
        streams.push(g);
    }
    Ok(FusionGradients {
        streams,
        fusion_blstm,
        output_dw: out_grads.dw,
        output_db: out_grads.db,
    })
}

/// Single-stream classifier used in the per-modality training phase:
/// one stream plus its own linear output layer.
#[derive(Clone, Debug)]
pub struct StreamClassifier {
    pub stream: StreamParams,
    pub output: DenseLayer,
}

#[derive(Clone, Debug)]
pub struct StreamClassifierCache {
    stream: StreamCache,
    stream_out: Matrix,
    logits: Matrix,
}

#[derive(Clone, Debug)]
pub struct StreamClassifierGradients {
    pub stream: StreamGradients,
    pub output_dw: Matrix,
    pub output_db: Vec<f64>,
}

impl StreamClassifier {
    pub fn glorot(
        rng: &mut RngState,
        input_dim: usize,
        encoder_sizes: &[usize],
        delta: DeltaConfig,
        hidden: usize,
        classes: usize,
    ) -> Result<Self> {
        let stream = StreamParams::glorot(rng, input_dim, encoder_sizes, delta, hidden)?;
        let output = DenseLayer::glorot(rng, stream.out_dim(), classes, Activation::Linear)?;
        Ok(StreamClassifier { stream, output })
    }

    pub fn classes(&self) -> usize {
        self.output.out_dim()
    }

    pub fn logits_cached(&self, x: &Matrix) -> Result<(Matrix, StreamClassifierCache)> {
        let (stream_out, stream) = stream_forward_cached(&self.stream, x)?;
        let logits = self.output.forward(&stream_out)?;
        Ok((
            logits.clone(),
            StreamClassifierCache {
                stream,
                stream_out,
                logits,
            },
        ))
    }

    pub fn predict(&self, x: &Matrix) -> Result<FramePredictions> {
        let (logits, _) = self.logits_cached(x)?;
        Ok(FramePredictions::from_logits(&logits))
    }

    pub fn backward(
        &self,
        cache: &StreamClassifierCache,
        d_logits: &Matrix,
    ) -> Result<StreamClassifierGradients> {
        let out_grads = self
            .output
            .backward(&cache.stream_out, &cache.logits, d_logits)?;
        let (stream, _) = stream_backward(&self.stream, &cache.stream, &out_grads.dx)?;
        Ok(StreamClassifierGradients {
            stream,
            output_dw: out_grads.dw,
            output_db: out_grads.db,
        })
    }
}

/// Most frequent per-frame label; ties go to the label with the higher mean
/// posterior, then to the smaller class id.
pub fn majority_vote(p: &FramePredictions) -> usize {
    let classes = p.posteriors.cols();
    let mut counts = vec![0usize; classes];
    for &l in &p.labels {
        counts[l] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let mut mean = vec![0.0; classes];
    for t in 0..p.posteriors.rows() {
        for (m, &v) in mean.iter_mut().zip(p.posteriors.row(t)) {
            *m += v;
        }
    }
    let mut winner = None;
    for c in 0..classes {
        if counts[c] != top {
            continue;
        }
        winner = match winner {
            None => Some(c),
            Some(best) if mean[c] > mean[best] => Some(c),
            other => other,
        };
    }
    winner.unwrap()
}
