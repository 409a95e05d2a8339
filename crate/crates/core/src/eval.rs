//! Confusion-matrix metrics (classification rate, UAR, mean F1),
//! multi-run aggregation, and the noise-level evaluation sweep.

use crate::checkpoint::{FusionCheckpoint, StreamCheckpoint};
use crate::datapipe::synth::NoiseSource;
use crate::datapipe::{mix_at_snr, spectrogram, FeatureSequence, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::model::{fusion_forward, majority_vote};
use crate::rng::{mix_seed, RngState};
use crate::tensor::Matrix;

/// C x C counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn from_pairs(classes: usize, pairs: &[(usize, usize)]) -> Self {
        let mut cm = ConfusionMatrix::new(classes);
        for &(t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// The three reported quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub cr: f64,
    pub uar: f64,
    pub mean_f1: f64,
}

/// Classification rate, unweighted average recall, and macro F1.
///
/// Conventions: a class with an empty row contributes recall 0; a class with
/// `precision + recall == 0` contributes F1 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("metrics on an empty confusion matrix".into()));
    }
    let c = cm.classes();
    let mut trace = 0u64;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for k in 0..c {
        let tp = cm.get(k, k);
        trace += tp;
        let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let recall = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        let precision = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        recall_sum += recall;
        f1_sum += f1;
    }
    Ok(Metrics {
        cr: trace as f64 / total as f64,
        uar: recall_sum / c as f64,
        mean_f1: f1_sum / c as f64,
    })
}

/// Aggregate over repeated runs: arithmetic mean and sample (n-1) standard
/// deviation, with std 0 for a single run.
#[derive(Clone, Copy, Debug)]
pub struct RunReport {
    pub runs: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

pub fn aggregate_runs(runs: &[Metrics]) -> Result<RunReport> {
    if runs.is_empty() {
        return Err(Error::Argument("aggregate_runs needs at least one run".into()));
    }
    let n = runs.len() as f64;
    let mean = Metrics {
        cr: runs.iter().map(|m| m.cr).sum::<f64>() / n,
        uar: runs.iter().map(|m| m.uar).sum::<f64>() / n,
        mean_f1: runs.iter().map(|m| m.mean_f1).sum::<f64>() / n,
    };
    let std = if runs.len() < 2 {
        Metrics {
            cr: 0.0,
            uar: 0.0,
            mean_f1: 0.0,
        }
    } else {
        let var = |f: fn(&Metrics) -> f64, mu: f64| {
            runs.iter().map(|m| (f(m) - mu) * (f(m) - mu)).sum::<f64>() / (n - 1.0)
        };
        Metrics {
            cr: var(|m| m.cr, mean.cr).sqrt(),
            uar: var(|m| m.uar, mean.uar).sqrt(),
            mean_f1: var(|m| m.mean_f1, mean.mean_f1).sqrt(),
        }
    };
    Ok(RunReport {
        runs: runs.len(),
        mean,
        std,
    })
}

/// Streams that can be evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Audio,
    Video,
    Fusion,
}

impl StreamKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StreamKind::Audio => "audio",
            StreamKind::Video => "video",
            StreamKind::Fusion => "fusion",
        }
    }
}

/// Checkpoints available for evaluation; present streams produce rows.
#[derive(Clone, Debug, Default)]
pub struct EvalModels {
    pub audio: Option<StreamCheckpoint>,
    pub video: Option<StreamCheckpoint>,
    pub fusion: Option<FusionCheckpoint>,
}

/// One preloaded test utterance: the clean waveform plus the precomputed
/// (un-normalized) video features already upsampled to the audio frame rate.
#[derive(Clone, Debug)]
pub struct TestUtterance {
    pub clean_audio: Vec<f64>,
    pub sample_rate: u32,
    pub video_features: FeatureSequence,
    pub label: usize,
}

/// One row of the sweep table: `snr_db = None` is the clean condition.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub snr_db: Option<f64>,
    pub stream: StreamKind,
    pub report: RunReport,
}

fn audio_features_for(
    u: &TestUtterance,
    snr_db: Option<f64>,
    noise: &NoiseSource,
    cfg: &SpectrogramConfig,
    rng: &mut RngState,
) -> Result<FeatureSequence> {
    let samples = match snr_db {
        None => u.clean_audio.clone(),
        Some(db) => {
            let n = noise.samples(u.clean_audio.len(), u.sample_rate, rng)?;
            mix_at_snr(&u.clean_audio, &n, db)?
        }
    };
    spectrogram(&samples, u.sample_rate, cfg)
}

fn classes_of(models: &EvalModels) -> Result<usize> {
    if let Some(a) = &models.audio {
        return Ok(a.classifier.classes());
    }
    if let Some(v) = &models.video {
        return Ok(v.classifier.classes());
    }
    if let Some(f) = &models.fusion {
        return Ok(f.model.classes());
    }
    Err(Error::Argument("no models supplied for evaluation".into()))
}

fn sync_pair(audio: &FeatureSequence, video: &FeatureSequence) -> (Matrix, Matrix) {
    let n = audio.frames().min(video.frames());
    let mut a = audio.data.clone();
    let mut v = video.data.clone();
    a.truncate_rows(n);
    v.truncate_rows(n);
    (a, v)
}

/// Evaluates every available stream per noise level over `runs` seeded
/// repetitions. The clean condition applies no mixing at all, so its result
/// is identical across runs. Video features are never corrupted.
pub fn snr_sweep(
    models: &EvalModels,
    test: &[TestUtterance],
    noise: &NoiseSource,
    levels: &[f64],
    spec_cfg: &SpectrogramConfig,
    runs: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if test.is_empty() {
        return Err(Error::Argument("snr_sweep needs test utterances".into()));
    }
    if runs == 0 {
        return Err(Error::Argument("snr_sweep needs at least one run".into()));
    }
    let classes = classes_of(models)?;
    let mut conditions: Vec<Option<f64>> = vec![None];
    conditions.extend(levels.iter().map(|&l| Some(l)));

    let streams: Vec<StreamKind> = [
        (StreamKind::Audio, models.audio.is_some()),
        (StreamKind::Video, models.video.is_some()),
        (StreamKind::Fusion, models.fusion.is_some()),
    ]
    .iter()
    .filter(|(_, present)| *present)
    .map(|(k, _)| *k)
    .collect();

    // per (stream index, condition index): one Metrics per run
    let mut per_run: Vec<Vec<Vec<Metrics>>> =
        vec![vec![Vec::with_capacity(runs); conditions.len()]; streams.len()];

    for run in 0..runs {
        let mut rng = RngState::new(mix_seed(seed, 0x5EED_0000 + run as u64));
        for (ci, condition) in conditions.iter().enumerate() {
            let mut cms: Vec<ConfusionMatrix> =
                streams.iter().map(|_| ConfusionMatrix::new(classes)).collect();
            for u in test {
                let audio_feats = audio_features_for(u, *condition, noise, spec_cfg, &mut rng)?;
                for (si, stream) in streams.iter().enumerate() {
                    let predicted = match stream {
                        StreamKind::Audio => {
                            let ckpt = models.audio.as_ref().unwrap();
                            let (a, _) = sync_pair(&audio_feats, &u.video_features);
                            let x = ckpt.normalizer.apply(&a)?;
                            majority_vote(&ckpt.classifier.predict(&x)?)
                        }
                        StreamKind::Video => {
                            let ckpt = models.video.as_ref().unwrap();
                            let (_, v) = sync_pair(&audio_feats, &u.video_features);
                            let x = ckpt.normalizer.apply(&v)?;
                            majority_vote(&ckpt.classifier.predict(&x)?)
                        }
                        StreamKind::Fusion => {
                            let ckpt = models.fusion.as_ref().unwrap();
                            let (a, v) = sync_pair(&audio_feats, &u.video_features);
                            let xa = ckpt.normalizers[0].apply(&a)?;
                            let xv = ckpt.normalizers[1].apply(&v)?;
                            majority_vote(&fusion_forward(&ckpt.model, &[xa, xv])?)
                        }
                    };
                    cms[si].record(u.label, predicted);
                }
            }
            for (si, cm) in cms.iter().enumerate() {
                per_run[si][ci].push(metrics(cm)?);
            }
        }
    }

    let mut rows = Vec::new();
    for (si, stream) in streams.iter().enumerate() {
        for (ci, condition) in conditions.iter().enumerate() {
            rows.push(SweepRow {
                snr_db: *condition,
                stream: *stream,
                report: aggregate_runs(&per_run[si][ci])?,
            });
        }
    }
    Ok(rows)
}

fn format_snr(snr: Option<f64>) -> String {
    match snr {
        None => "clean".to_string(),
        Some(db) => {
            if db.fract() == 0.0 {
                format!("{}", db as i64)
            } else {
                format!("{:.1}", db)
            }
        }
    }
}

/// Renders sweep rows as CSV:
/// `snr_db,stream,cr_mean,cr_std,uar_mean,uar_std,f1_mean,f1_std`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("snr_db,stream,cr_mean,cr_std,uar_mean,uar_std,f1_mean,f1_std\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            format_snr(row.snr_db),
            row.stream.as_str(),
            row.report.mean.cr,
            row.report.std.cr,
            row.report.mean.uar,
            row.report.std.uar,
            row.report.mean.mean_f1,
            row.report.std.mean_f1,
        ));
    }
    out
}
