//! Versioned binary checkpoints.
//!
//! Layout: magic string, format version, entry manifest (name + shape),
//! row-major 64-bit little-endian floats per entry, and a trailing FNV-1a
//! checksum over everything before it. Loading verifies magic, version and
//! checksum before reconstructing anything, so a truncated or corrupt file
//! never yields a partial model.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{Activation, DeltaConfig, DenseLayer};
use crate::model::{FusionModel, StreamClassifier, StreamParams};
use crate::rbm::Normalizer;
use crate::recurrent::{BlstmParams, LstmParams};
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"AVFUSCKP";
const VERSION: u32 = 1;

const KIND_PRETRAIN: f64 = 3.0;
const KIND_STREAM: f64 = 1.0;
const KIND_FUSION: f64 = 2.0;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Ordered named-matrix container; the flat representation of every
/// checkpoint kind.
#[derive(Clone, Debug, Default)]
pub struct Entries {
    items: Vec<(String, Matrix)>,
}

impl Entries {
    fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.items.push((name.into(), m));
    }

    fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, Matrix::from_vec(1, v.len(), v.to_vec()).unwrap());
    }

    fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.push(name, Matrix::from_vec(1, 1, vec![v]).unwrap());
    }

    fn get(&self, name: &str) -> Result<&Matrix> {
        self.items
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing entry `{}`", name)))
    }

    fn get_vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.data().to_vec())
    }

    fn get_scalar(&self, name: &str) -> Result<f64> {
        let m = self.get(name)?;
        if m.data().len() != 1 {
            return Err(Error::Format(format!("entry `{}` is not a scalar", name)));
        }
        Ok(m.data()[0])
    }

    fn has(&self, name: &str) -> bool {
        self.items.iter().any(|(n, _)| n == name)
    }
}

fn write_entries(entries: &Entries) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.items.len() as u32).to_le_bytes());
    for (name, m) in &entries.items {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    }
    for (_, m) in &entries.items {
        for &v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checksum);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_entries(bytes: &[u8]) -> Result<Entries> {
    if bytes.len() < MAGIC.len() + 4 + 4 + 8 {
        return Err(Error::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    if fnv1a(body) != stored {
        return Err(Error::Checksum);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {} (expected {})",
            version, VERSION
        )));
    }
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("non-utf8 entry name".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        manifest.push((name, rows, cols));
    }
    let mut entries = Entries::default();
    for (name, rows, cols) in manifest {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        entries.push(name, Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(entries)
}

fn push_dense(entries: &mut Entries, prefix: &str, layer: &DenseLayer) {
    entries.push(format!("{}.w", prefix), layer.w.clone());
    entries.push_vec(format!("{}.b", prefix), &layer.b);
}

fn get_dense(entries: &Entries, prefix: &str, activation: Activation) -> Result<DenseLayer> {
    DenseLayer::new(
        entries.get(&format!("{}.w", prefix))?.clone(),
        entries.get_vec(&format!("{}.b", prefix))?,
        activation,
    )
}

fn push_lstm(entries: &mut Entries, prefix: &str, p: &LstmParams) {
    entries.push(format!("{}.wi", prefix), p.wi.clone());
    entries.push(format!("{}.wf", prefix), p.wf.clone());
    entries.push(format!("{}.wg", prefix), p.wg.clone());
    entries.push(format!("{}.wo", prefix), p.wo.clone());
    entries.push(format!("{}.ui", prefix), p.ui.clone());
    entries.push(format!("{}.uf", prefix), p.uf.clone());
    entries.push(format!("{}.ug", prefix), p.ug.clone());
    entries.push(format!("{}.uo", prefix), p.uo.clone());
    entries.push_vec(format!("{}.bi", prefix), &p.bi);
    entries.push_vec(format!("{}.bf", prefix), &p.bf);
    entries.push_vec(format!("{}.bg", prefix), &p.bg);
    entries.push_vec(format!("{}.bo", prefix), &p.bo);
}

fn get_lstm(entries: &Entries, prefix: &str) -> Result<LstmParams> {
    Ok(LstmParams {
        wi: entries.get(&format!("{}.wi", prefix))?.clone(),
        wf: entries.get(&format!("{}.wf", prefix))?.clone(),
        wg: entries.get(&format!("{}.wg", prefix))?.clone(),
        wo: entries.get(&format!("{}.wo", prefix))?.clone(),
        ui: entries.get(&format!("{}.ui", prefix))?.clone(),
        uf: entries.get(&format!("{}.uf", prefix))?.clone(),
        ug: entries.get(&format!("{}.ug", prefix))?.clone(),
        uo: entries.get(&format!("{}.uo", prefix))?.clone(),
        bi: entries.get_vec(&format!("{}.bi", prefix))?,
        bf: entries.get_vec(&format!("{}.bf", prefix))?,
        bg: entries.get_vec(&format!("{}.bg", prefix))?,
        bo: entries.get_vec(&format!("{}.bo", prefix))?,
    })
}

fn push_stream(entries: &mut Entries, prefix: &str, s: &StreamParams) {
    entries.push_scalar(format!("{}.encoder.layers", prefix), s.encoder.len() as f64);
    for (idx, layer) in s.encoder.iter().enumerate() {
        push_dense(entries, &format!("{}.encoder.{}", prefix, idx), layer);
    }
    entries.push_scalar(format!("{}.delta.window", prefix), s.delta.window as f64);
    push_lstm(entries, &format!("{}.blstm.fwd", prefix), &s.blstm.fwd);
    push_lstm(entries, &format!("{}.blstm.bwd", prefix), &s.blstm.bwd);
}

fn get_stream(entries: &Entries, prefix: &str) -> Result<StreamParams> {
    let n = entries.get_scalar(&format!("{}.encoder.layers", prefix))? as usize;
    let mut encoder = Vec::with_capacity(n);
    for idx in 0..n {
        let act = if idx == n - 1 {
            Activation::Linear
        } else {
            Activation::Relu
        };
        encoder.push(get_dense(entries, &format!("{}.encoder.{}", prefix, idx), act)?);
    }
    let window = entries.get_scalar(&format!("{}.delta.window", prefix))? as usize;
    Ok(StreamParams {
        encoder,
        delta: DeltaConfig::new(window)?,
        blstm: BlstmParams {
            fwd: get_lstm(entries, &format!("{}.blstm.fwd", prefix))?,
            bwd: get_lstm(entries, &format!("{}.blstm.bwd", prefix))?,
        },
    })
}

fn push_norm(entries: &mut Entries, prefix: &str, n: &Normalizer) {
    entries.push_vec(format!("{}.mean", prefix), &n.mean);
    entries.push_vec(format!("{}.std", prefix), &n.std);
}

fn get_norm(entries: &Entries, prefix: &str) -> Result<Normalizer> {
    Ok(Normalizer {
        mean: entries.get_vec(&format!("{}.mean", prefix))?,
        std: entries.get_vec(&format!("{}.std", prefix))?,
    })
}

/// Encoder-only artifact produced by the RBM pretraining phase.
#[derive(Clone, Debug)]
pub struct PretrainCheckpoint {
    pub normalizer: Normalizer,
    pub encoder: Vec<DenseLayer>,
}

/// Trained single-stream classifier with its feature normalizer.
#[derive(Clone, Debug)]
pub struct StreamCheckpoint {
    pub normalizer: Normalizer,
    pub classifier: StreamClassifier,
}

/// Trained fusion model with one normalizer per stream (audio, video).
#[derive(Clone, Debug)]
pub struct FusionCheckpoint {
    pub normalizers: Vec<Normalizer>,
    pub model: FusionModel,
}

/// Any of the three checkpoint kinds, dispatched by the `meta.kind` entry.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Pretrain(PretrainCheckpoint),
    Stream(StreamCheckpoint),
    Fusion(FusionCheckpoint),
}

impl Checkpoint {
    fn to_entries(&self) -> Entries {
        let mut e = Entries::default();
        match self {
            Checkpoint::Pretrain(p) => {
                e.push_scalar("meta.kind", KIND_PRETRAIN);
                push_norm(&mut e, "norm", &p.normalizer);
                e.push_scalar("encoder.layers", p.encoder.len() as f64);
                for (idx, layer) in p.encoder.iter().enumerate() {
                    push_dense(&mut e, &format!("encoder.{}", idx), layer);
                }
            }
            Checkpoint::Stream(s) => {
                e.push_scalar("meta.kind", KIND_STREAM);
                push_norm(&mut e, "norm", &s.normalizer);
                push_stream(&mut e, "stream", &s.classifier.stream);
                push_dense(&mut e, "output", &s.classifier.output);
            }
            Checkpoint::Fusion(f) => {
                e.push_scalar("meta.kind", KIND_FUSION);
                e.push_scalar("meta.streams", f.model.streams.len() as f64);
                for (idx, (norm, stream)) in
                    f.normalizers.iter().zip(&f.model.streams).enumerate()
                {
                    push_norm(&mut e, &format!("stream{}.norm", idx), norm);
                    push_stream(&mut e, &format!("stream{}", idx), stream);
                }
                push_lstm(&mut e, "fusion.fwd", &f.model.fusion_blstm.fwd);
                push_lstm(&mut e, "fusion.bwd", &f.model.fusion_blstm.bwd);
                push_dense(&mut e, "output", &f.model.output);
            }
        }
        e
    }

    fn from_entries(e: &Entries) -> Result<Self> {
        let kind = e.get_scalar("meta.kind")?;
        if kind == KIND_PRETRAIN {
            let n = e.get_scalar("encoder.layers")? as usize;
            let mut encoder = Vec::with_capacity(n);
            for idx in 0..n {
                let act = if idx == n - 1 {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                encoder.push(get_dense(e, &format!("encoder.{}", idx), act)?);
            }
            Ok(Checkpoint::Pretrain(PretrainCheckpoint {
                normalizer: get_norm(e, "norm")?,
                encoder,
            }))
        } else if kind == KIND_STREAM {
            Ok(Checkpoint::Stream(StreamCheckpoint {
                normalizer: get_norm(e, "norm")?,
                classifier: StreamClassifier {
                    stream: get_stream(e, "stream")?,
                    output: get_dense(e, "output", Activation::Linear)?,
                },
            }))
        } else if kind == KIND_FUSION {
            let n_streams = e.get_scalar("meta.streams")? as usize;
            let mut normalizers = Vec::with_capacity(n_streams);
            let mut streams = Vec::with_capacity(n_streams);
            for idx in 0..n_streams {
                normalizers.push(get_norm(e, &format!("stream{}.norm", idx))?);
                streams.push(get_stream(e, &format!("stream{}", idx))?);
            }
            Ok(Checkpoint::Fusion(FusionCheckpoint {
                normalizers,
                model: FusionModel {
                    streams,
                    fusion_blstm: BlstmParams {
                        fwd: get_lstm(e, "fusion.fwd")?,
                        bwd: get_lstm(e, "fusion.bwd")?,
                    },
                    output: get_dense(e, "output", Activation::Linear)?,
                },
            }))
        } else {
            Err(Error::Format(format!("unknown checkpoint kind {}", kind)))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_entries(&self.to_entries())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Checkpoint::from_entries(&read_entries(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Sanity probe used by tests.
    pub fn has_entry(&self, name: &str) -> bool {
        self.to_entries().has(name)
    }
}
