//! Data ingestion and preprocessing: utterance loading, mean-image
//! subtraction, spectrograms, frame-rate synchronization, exact-SNR noise
//! mixing, the synthetic desk-scale dataset, and the on-disk formats
//! (WAV, PGM, manifest CSV, feature cache).

pub mod pgm;
pub mod spectrogram;
pub mod synth;
pub mod wav;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use pgm::{read_pgm, write_pgm, Image};
pub use spectrogram::{spectrogram, SpectrogramConfig};
pub use synth::{babble_noise, synth_dataset, SynthConfig};
pub use wav::{read_wav, write_wav, Wav};

/// T x D matrix of per-frame feature vectors with a frame rate; the
/// universal currency between pipeline stages.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub data: Matrix,
    pub fps: f64,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// One labeled sample: a grayscale image sequence plus its waveform.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub frames: Vec<Image>,
    pub fps_video: f64,
    pub wav: Wav,
    pub label: usize,
    pub subject: u32,
}

/// Dataset split assignment; splits are subject-disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{}`", other))),
        }
    }
}

/// One manifest row: utterance directory (relative to the manifest), label,
/// subject id, split.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub subject: u32,
    pub split: Split,
}

/// Parsed dataset manifest plus its on-disk location.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn entries_for(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Checks that the splits partition utterances subject-disjointly.
    pub fn validate(&self) -> Result<()> {
        let mut seen: Vec<(u32, Split)> = Vec::new();
        for e in &self.entries {
            match seen.iter().find(|(s, _)| *s == e.subject) {
                None => seen.push((e.subject, e.split)),
                Some((_, split)) if *split != e.split => {
                    return Err(Error::Data(format!(
                        "subject {} appears in multiple splits",
                        e.subject
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = String::from("path,label,subject,split\n");
    for e in &manifest.entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.path,
            e.label,
            e.subject,
            e.split.as_str()
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("path,label,subject,split") => {}
        _ => {
            return Err(Error::Data(format!(
                "{}: missing manifest header",
                path.display()
            )))
        }
    }
    let mut entries = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "{}: line {} has {} fields, expected 4",
                path.display(),
                no + 2,
                fields.len()
            )));
        }
        entries.push(ManifestEntry {
            path: fields[0].to_string(),
            label: fields[1]
                .parse()
                .map_err(|_| Error::Data(format!("bad label `{}`", fields[1])))?,
            subject: fields[2]
                .parse()
                .map_err(|_| Error::Data(format!("bad subject `{}`", fields[2])))?,
            split: Split::parse(fields[3])?,
        });
    }
    Ok(DatasetManifest {
        root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        entries,
    })
}

/// Loads one utterance directory: sorted `*.pgm` frames plus `audio.wav`.
pub fn load_utterance(dir: &Path, fps_video: f64, entry: &ManifestEntry) -> Result<Utterance> {
    let mut frame_paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    frame_paths.sort();
    if frame_paths.is_empty() {
        return Err(Error::Data(format!("{}: no PGM frames", dir.display())));
    }
    let frames = frame_paths
        .iter()
        .map(|p| read_pgm(p))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::Data(format!(
            "{}: inconsistent frame sizes",
            dir.display()
        )));
    }
    let wav = read_wav(&dir.join("audio.wav"))?;
    Ok(Utterance {
        frames,
        fps_video,
        wav,
        label: entry.label,
        subject: entry.subject,
    })
}

/// Subtracts the per-pixel mean over the utterance from every frame; the
/// result is a T x (H*W) float matrix whose per-pixel mean is ~0.
pub fn mean_image_subtract(frames: &[Image]) -> Result<Matrix> {
    if frames.is_empty() {
        return Err(Error::Argument("mean_image_subtract needs at least one frame".into()));
    }
    let dim = frames[0].width * frames[0].height;
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in frames {
        for (m, &p) in mean.iter_mut().zip(&f.pixels) {
            *m += p as f64;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut out = Matrix::zeros(frames.len(), dim);
    for (t, f) in frames.iter().enumerate() {
        let row = out.row_mut(t);
        for ((r, &p), &m) in row.iter_mut().zip(&f.pixels).zip(&mean) {
            *r = p as f64 - m;
        }
    }
    Ok(out)
}

/// Linear-interpolation upsampling from the sequence's rate to `fps_out`.
///
/// Output frame `k` samples time `k / fps_out`; source frame `i` sits at
/// `i / fps_in`. Endpoints are exact and affine signals are reproduced
/// exactly. A single-frame input extends as a constant.
pub fn upsample_linear(x: &FeatureSequence, fps_out: f64) -> Result<FeatureSequence> {
    let fps_in = x.fps;
    if !(fps_in > 0.0) || fps_out < fps_in {
        return Err(Error::Argument(format!(
            "upsample requires fps_out >= fps_in > 0, got {} -> {}",
            fps_in, fps_out
        )));
    }
    let t_in = x.frames();
    if t_in == 0 {
        return Err(Error::Argument("upsample needs at least one frame".into()));
    }
    if fps_out == fps_in {
        return Ok(x.clone());
    }
    let ratio = fps_out / fps_in;
    let t_out = ((t_in - 1) as f64 * ratio).floor() as usize + 1;
    let mut out = Matrix::zeros(t_out, x.dim());
    for k in 0..t_out {
        let pos = k as f64 / ratio;
        let i0 = pos.floor() as usize;
        let i0 = i0.min(t_in - 1);
        let i1 = (i0 + 1).min(t_in - 1);
        let frac = pos - i0 as f64;
        let row = out.row_mut(k);
        let a = x.data.row(i0);
        let b = x.data.row(i1);
        for ((r, &av), &bv) in row.iter_mut().zip(a).zip(b) {
            *r = av + frac * (bv - av);
        }
    }
    Ok(FeatureSequence {
        data: out,
        fps: fps_out,
    })
}

/// Truncates both sequences to the shorter frame count. The natural
/// mismatch after synchronization is at most one frame.
pub fn truncate_to_common(a: &mut FeatureSequence, b: &mut FeatureSequence) {
    let n = a.frames().min(b.frames());
    a.data.truncate_rows(n);
    b.data.truncate_rows(n);
}

/// Mixes `noise` into `clean` at exactly `snr_db`:
/// `out = clean + alpha * noise` with
/// `alpha = sqrt(P_clean / (P_noise * 10^(snr/10)))`, powers measured as
/// mean square over the mixed region.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if clean.is_empty() {
        return Err(Error::Argument("mix_at_snr: empty clean signal".into()));
    }
    if noise.len() < clean.len() {
        return Err(Error::Argument(format!(
            "mix_at_snr: noise has {} samples, clean needs {}",
            noise.len(),
            clean.len()
        )));
    }
    let n = clean.len();
    let p_clean = clean.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let p_noise = noise[..n].iter().map(|x| x * x).sum::<f64>() / n as f64;
    if p_clean == 0.0 {
        return Err(Error::Argument("mix_at_snr: clean signal has zero power".into()));
    }
    if p_noise == 0.0 {
        return Err(Error::Argument("mix_at_snr: noise has zero power".into()));
    }
    let alpha = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(clean
        .iter()
        .zip(&noise[..n])
        .map(|(&c, &v)| c + alpha * v)
        .collect())
}

const FEATURE_MAGIC: &[u8; 8] = b"AVFFEAT1";

/// Caches a feature sequence as flat binary: magic, rows, cols, fps, then
/// row-major 64-bit little-endian floats.
pub fn write_features(path: &Path, f: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + f.data.data().len() * 8);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(f.data.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(f.data.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&f.fps.to_le_bytes());
    for &v in f.data.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 24 || &bytes[0..8] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a feature cache file",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fps = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    if bytes.len() != 24 + rows * cols * 8 {
        return Err(Error::Format(format!(
            "{}: feature cache size mismatch",
            path.display()
        )));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(FeatureSequence {
        data: Matrix::from_vec(rows, cols, data)?,
        fps,
    })
}

/// Raw (un-normalized) synchronized features of one utterance: spectrogram
/// at the audio frame rate and upsampled mean-subtracted pixels, both
/// truncated to a common frame count.
pub fn synchronized_features(
    u: &Utterance,
    cfg: &SpectrogramConfig,
) -> Result<(FeatureSequence, FeatureSequence)> {
    let audio = spectrogram(&u.wav.to_f64(), u.wav.sample_rate, cfg)?;
    let video_raw = FeatureSequence {
        data: mean_image_subtract(&u.frames)?,
        fps: u.fps_video,
    };
    let mut video = upsample_linear(&video_raw, audio.fps)?;
    let mut audio = audio;
    truncate_to_common(&mut audio, &mut video);
    Ok((audio, video))
}
