//! End-to-end workflow drivers shared by the CLI and the verification
//! suites: dataset synthesis, RBM pretraining, per-stream training, fusion
//! fine-tuning, and evaluation sweeps, all rooted in one `RunConfig`.

use std::path::{Path, PathBuf};

use crate::checkpoint::{
    Checkpoint, FusionCheckpoint, PretrainCheckpoint, StreamCheckpoint,
};
use crate::datapipe::synth::NoiseSource;
use crate::datapipe::{
    load_utterance, read_manifest, synchronized_features, synth_dataset, DatasetManifest,
    SpectrogramConfig, Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{snr_sweep, EvalModels, SweepRow, TestUtterance};
use crate::layers::DeltaConfig;
use crate::model::{FusionModel, StreamClassifier};
use crate::rbm::{pretrain_stack, CdConfig, Normalizer};
use crate::rng::{mix_seed, RngState};
use crate::tensor::Matrix;
use crate::training::{train_fusion, train_stream, TrainConfig, TrainLogRow};

/// Console verbosity, normally taken from the environment by the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verbosity {
    Quiet,
    Info,
    Debug,
}

/// The two modalities of the v1 pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Video,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }
}

/// Fully resolved run configuration; every workflow function starts from one
/// of these. `validate` rejects dimension inconsistencies before any work.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub runs: usize,
    pub out_dir: PathBuf,
    pub data_dir: PathBuf,
    pub synth: SynthConfig,
    /// Hidden encoder layer widths, bottleneck excluded.
    pub encoder_sizes: Vec<usize>,
    pub bottleneck: usize,
    pub stream_hidden: usize,
    pub fusion_hidden: usize,
    pub delta_window: usize,
    pub spectrogram: SpectrogramConfig,
    pub train: TrainConfig,
    pub pretrain: CdConfig,
    /// Cap on the number of frames fed to RBM pretraining (strided subsample).
    pub pretrain_frame_cap: usize,
    pub snr_levels: Vec<f64>,
    pub noise_wav: Option<PathBuf>,
    pub verbosity: Verbosity,
}

impl RunConfig {
    /// Desk-scale preset: the whole pipeline runs in minutes on one core.
    pub fn desk(out_dir: PathBuf) -> RunConfig {
        let data_dir = out_dir.join("dataset");
        RunConfig {
            preset: "desk".into(),
            seed: 42,
            runs: 3,
            out_dir,
            data_dir,
            synth: SynthConfig {
                classes: 3,
                subjects: 9,
                utterances_per_subject: 10,
                image_width: 12,
                image_height: 12,
                video_fps: 25,
                sample_rate: 8000,
                min_duration_s: 0.5,
                max_duration_s: 0.8,
                video_informativeness: 1.0,
                audio_informativeness: 0.9,
                train_subjects: 5,
                val_subjects: 2,
                test_subjects: 2,
            },
            encoder_sizes: vec![64, 32, 16],
            bottleneck: 8,
            stream_hidden: 16,
            fusion_hidden: 16,
            delta_window: 2,
            spectrogram: SpectrogramConfig::default(),
            train: TrainConfig {
                max_epochs: 25,
                ..TrainConfig::default()
            },
            pretrain: CdConfig::default(),
            pretrain_frame_cap: 6000,
            snr_levels: vec![20.0, 15.0, 10.0, 5.0, 0.0],
            noise_wav: None,
            verbosity: Verbosity::Quiet,
        }
    }

    /// Full-size preset (encoder 2000/1000/500 with a 50-wide bottleneck,
    /// 150-unit BLSTMs, 48 kHz audio); intended for users with real data
    /// and a large time budget.
    pub fn paper(out_dir: PathBuf) -> RunConfig {
        let data_dir = out_dir.join("dataset");
        RunConfig {
            preset: "paper".into(),
            seed: 42,
            runs: 10,
            out_dir,
            data_dir,
            synth: SynthConfig {
                classes: 4,
                subjects: 21,
                utterances_per_subject: 10,
                image_width: 45,
                image_height: 30,
                video_fps: 25,
                sample_rate: 48000,
                min_duration_s: 0.5,
                max_duration_s: 1.5,
                video_informativeness: 1.0,
                audio_informativeness: 1.0,
                train_subjects: 7,
                val_subjects: 7,
                test_subjects: 7,
            },
            encoder_sizes: vec![2000, 1000, 500],
            bottleneck: 50,
            stream_hidden: 150,
            fusion_hidden: 150,
            delta_window: 2,
            spectrogram: SpectrogramConfig::default(),
            train: TrainConfig::default(),
            pretrain: CdConfig::default(),
            pretrain_frame_cap: 50000,
            snr_levels: vec![20.0, 15.0, 10.0, 5.0, 0.0],
            noise_wav: None,
            verbosity: Verbosity::Quiet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.spectrogram.validate()?;
        if self.encoder_sizes.is_empty() || self.encoder_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if self.bottleneck == 0 || self.stream_hidden == 0 || self.fusion_hidden == 0 {
            return Err(Error::Config("bottleneck and hidden sizes must be positive".into()));
        }
        if self.delta_window == 0 {
            return Err(Error::Config("delta window must be >= 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.train.batch_utterances == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.train.lr_stream > 0.0) || !(self.train.lr_fusion > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.train.clip_threshold > 0.0) {
            return Err(Error::Config("clip threshold must be positive".into()));
        }
        if self.snr_levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("SNR levels must be finite".into()));
        }
        // The spectrogram window must fit the shortest utterance.
        let window_s = self.spectrogram.window_ms as f64 / 1000.0;
        if self.synth.min_duration_s < window_s {
            return Err(Error::Config(format!(
                "minimum duration {}s is shorter than the {}s analysis window",
                self.synth.min_duration_s, window_s
            )));
        }
        Ok(())
    }

    fn log(&self, level: Verbosity, msg: &str) {
        if self.verbosity >= level {
            eprintln!("{}", msg);
        }
    }

    /// Stack passed to the RBM pretrainer: hidden sizes plus the bottleneck.
    fn encoder_stack(&self) -> Vec<usize> {
        let mut stack = self.encoder_sizes.clone();
        stack.push(self.bottleneck);
        stack
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir.join("manifest.csv")
    }

    pub fn pretrain_ckpt(&self, m: Modality) -> PathBuf {
        self.out_dir.join(format!("pretrain-{}.ckpt", m.as_str()))
    }

    pub fn stream_ckpt(&self, m: Modality) -> PathBuf {
        self.out_dir.join(format!("stream-{}.ckpt", m.as_str()))
    }

    pub fn fusion_ckpt(&self) -> PathBuf {
        self.out_dir.join("fusion.ckpt")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.csv")
    }
}

/// Summary returned by dataset synthesis.
#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub utterances: usize,
    pub classes: usize,
    pub subjects: usize,
    pub split_counts: (usize, usize, usize),
}

/// Generates the synthetic dataset. Refuses to overwrite a non-empty
/// directory unless `force` is set.
pub fn run_synth(cfg: &RunConfig, force: bool) -> Result<SynthSummary> {
    cfg.validate()?;
    if cfg.data_dir.exists() {
        let non_empty = std::fs::read_dir(&cfg.data_dir)?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::Config(format!(
                    "output directory {} is not empty (use --force to overwrite)",
                    cfg.data_dir.display()
                )));
            }
            std::fs::remove_dir_all(&cfg.data_dir)?;
        }
    }
    let manifest = synth_dataset(&cfg.data_dir, &cfg.synth, mix_seed(cfg.seed, 1))?;
    let summary = SynthSummary {
        utterances: manifest.entries.len(),
        classes: cfg.synth.classes,
        subjects: cfg.synth.subjects,
        split_counts: (
            manifest.entries_for(Split::Train).len(),
            manifest.entries_for(Split::Validation).len(),
            manifest.entries_for(Split::Test).len(),
        ),
    };
    cfg.log(
        Verbosity::Info,
        &format!(
            "synth: {} utterances, {} classes, {} subjects, splits {}/{}/{}",
            summary.utterances,
            summary.classes,
            summary.subjects,
            summary.split_counts.0,
            summary.split_counts.1,
            summary.split_counts.2
        ),
    );
    Ok(summary)
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(Error::Dependency {
            missing: "synth".into(),
        });
    }
    let manifest = read_manifest(&path)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Synchronized raw features of one utterance plus its label.
struct LoadedSample {
    audio: Matrix,
    video: Matrix,
    label: usize,
}

fn load_split(cfg: &RunConfig, manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedSample>> {
    let mut out = Vec::new();
    for entry in manifest.entries_for(split) {
        let utt = load_utterance(
            &manifest.root.join(&entry.path),
            cfg.synth.video_fps as f64,
            entry,
        )?;
        let (audio, video) = synchronized_features(&utt, &cfg.spectrogram)?;
        out.push(LoadedSample {
            audio: audio.data,
            video: video.data,
            label: utt.label,
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("split `{}` is empty", split.as_str())));
    }
    Ok(out)
}

fn modality_features(samples: &[LoadedSample], m: Modality) -> Vec<(&Matrix, usize)> {
    samples
        .iter()
        .map(|s| match m {
            Modality::Audio => (&s.audio, s.label),
            Modality::Video => (&s.video, s.label),
        })
        .collect()
}

/// Stacks all frames of a split into one matrix (for normalization and RBM
/// pretraining), optionally strided down to at most `cap` frames.
fn stack_frames(features: &[(&Matrix, usize)], cap: usize) -> Matrix {
    let total: usize = features.iter().map(|(f, _)| f.rows()).sum();
    let dim = features[0].0.cols();
    let stride = if cap > 0 && total > cap {
        total.div_ceil(cap)
    } else {
        1
    };
    let mut rows = Vec::with_capacity(total / stride + 1);
    let mut idx = 0usize;
    for (f, _) in features {
        for r in 0..f.rows() {
            if idx % stride == 0 {
                rows.push(f.row(r).to_vec());
            }
            idx += 1;
        }
    }
    let mut m = Matrix::zeros(rows.len(), dim);
    for (i, row) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(row);
    }
    m
}

/// RBM-pretrains both encoders on the training split and writes
/// `pretrain-audio.ckpt` / `pretrain-video.ckpt` (normalizer + stack).
pub fn run_pretrain(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let train = load_split(cfg, &manifest, Split::Train)?;
    for modality in [Modality::Audio, Modality::Video] {
        let features = modality_features(&train, modality);
        let stacked = stack_frames(&features, 0);
        let (_, normalizer) = Normalizer::fit(&stacked)?;
        let capped = stack_frames(&features, cfg.pretrain_frame_cap);
        let normalized = normalizer.apply(&capped)?;
        let mut rng = RngState::new(mix_seed(cfg.seed, match modality {
            Modality::Audio => 2,
            Modality::Video => 3,
        }));
        cfg.log(
            Verbosity::Info,
            &format!(
                "pretrain {}: {} frames of dim {}",
                modality.as_str(),
                normalized.rows(),
                normalized.cols()
            ),
        );
        let outcome = pretrain_stack(&cfg.encoder_stack(), &normalized, &cfg.pretrain, &mut rng)?;
        for (layer_idx, errs) in outcome.epoch_errors.iter().enumerate() {
            if let (Some(first), Some(last)) = (errs.first(), errs.last()) {
                cfg.log(
                    Verbosity::Debug,
                    &format!(
                        "pretrain {} layer {}: epoch-1 err {:.4} -> epoch-{} err {:.4}",
                        modality.as_str(),
                        layer_idx,
                        first,
                        errs.len(),
                        last
                    ),
                );
            }
        }
        std::fs::create_dir_all(&cfg.out_dir)?;
        Checkpoint::Pretrain(PretrainCheckpoint {
            normalizer,
            encoder: outcome.layers,
        })
        .save(&cfg.pretrain_ckpt(modality))?;
    }
    Ok(())
}

fn load_stream_ckpt(path: &Path, phase: &str) -> Result<StreamCheckpoint> {
    if !path.exists() {
        return Err(Error::Dependency {
            missing: phase.into(),
        });
    }
    match Checkpoint::load(path)? {
        Checkpoint::Stream(s) => Ok(s),
        _ => Err(Error::Format(format!(
            "{} is not a stream checkpoint",
            path.display()
        ))),
    }
}

/// Trains one modality stream end-to-end. The encoder is initialized from
/// the pretraining checkpoint unless `random_init` is set (then a fresh
/// normalizer is fitted and Glorot weights are used).
pub fn run_train_stream(cfg: &RunConfig, modality: Modality, random_init: bool) -> Result<Vec<TrainLogRow>> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;
    let train = load_split(cfg, &manifest, Split::Train)?;
    let validation = load_split(cfg, &manifest, Split::Validation)?;
    let train_feats = modality_features(&train, modality);
    let val_feats = modality_features(&validation, modality);

    let (normalizer, pretrained) = if random_init {
        let stacked = stack_frames(&train_feats, 0);
        let (_, normalizer) = Normalizer::fit(&stacked)?;
        (normalizer, None)
    } else {
        let path = cfg.pretrain_ckpt(modality);
        if !path.exists() {
            return Err(Error::Dependency {
                missing: "pretrain".into(),
            });
        }
        match Checkpoint::load(&path)? {
            Checkpoint::Pretrain(p) => (p.normalizer, Some(p.encoder)),
            _ => {
                return Err(Error::Format(format!(
                    "{} is not a pretrain checkpoint",
                    path.display()
                )))
            }
        }
    };

    let input_dim = train_feats[0].0.cols();
    let mut rng = RngState::new(mix_seed(cfg.seed, match modality {
        Modality::Audio => 4,
        Modality::Video => 5,
    }));
    let delta = DeltaConfig::new(cfg.delta_window)?;
    let mut classifier = StreamClassifier::glorot(
        &mut rng,
        input_dim,
        &cfg.encoder_stack(),
        delta,
        cfg.stream_hidden,
        cfg.synth.classes,
    )?;
    if let Some(encoder) = pretrained {
        classifier.stream = classifier.stream.with_encoder(encoder)?;
    }

    let train_samples: Vec<(Matrix, usize)> = train_feats
        .iter()
        .map(|(f, l)| Ok((normalizer.apply(f)?, *l)))
        .collect::<Result<_>>()?;
    let val_samples: Vec<(Matrix, usize)> = val_feats
        .iter()
        .map(|(f, l)| Ok((normalizer.apply(f)?, *l)))
        .collect::<Result<_>>()?;

    cfg.log(
        Verbosity::Info,
        &format!(
            "train-stream {}: {} train / {} validation utterances",
            modality.as_str(),
            train_samples.len(),
            val_samples.len()
        ),
    );
    let log = train_stream(&mut classifier, &train_samples, &val_samples, &cfg.train, &mut rng)?;
    for row in log.iter().filter(|r| r.split == "validation") {
        cfg.log(
            Verbosity::Debug,
            &format!(
                "epoch {:3} val loss {:.4} cr {:.3}",
                row.epoch, row.loss, row.cr
            ),
        );
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    Checkpoint::Stream(StreamCheckpoint {
        normalizer,
        classifier,
    })
    .save(&cfg.stream_ckpt(modality))?;
    std::fs::write(
        cfg.out_dir.join(format!("train-{}.csv", modality.as_str())),
        crate::training::log_to_csv(&log),
    )?;
    Ok(log)
}

/// Assembles the fusion model from both trained streams and fine-tunes it
/// jointly. Requires both stream checkpoints.
pub fn run_train_fusion(cfg: &RunConfig) -> Result<Vec<TrainLogRow>> {
    cfg.validate()?;
    let audio = load_stream_ckpt(&cfg.stream_ckpt(Modality::Audio), "train-stream --modality audio")?;
    let video = load_stream_ckpt(&cfg.stream_ckpt(Modality::Video), "train-stream --modality video")?;

    let manifest = load_manifest(cfg)?;
    let train = load_split(cfg, &manifest, Split::Train)?;
    let validation = load_split(cfg, &manifest, Split::Validation)?;

    let mut rng = RngState::new(mix_seed(cfg.seed, 6));
    let mut model = FusionModel::from_streams(
        vec![audio.classifier.stream.clone(), video.classifier.stream.clone()],
        cfg.fusion_hidden,
        cfg.synth.classes,
        &mut rng,
    )?;

    let normalizers = [audio.normalizer.clone(), video.normalizer.clone()];
    let to_samples = |samples: &[LoadedSample]| -> Result<Vec<(Vec<Matrix>, usize)>> {
        samples
            .iter()
            .map(|s| {
                Ok((
                    vec![normalizers[0].apply(&s.audio)?, normalizers[1].apply(&s.video)?],
                    s.label,
                ))
            })
            .collect()
    };
    let train_samples = to_samples(&train)?;
    let val_samples = to_samples(&validation)?;

    cfg.log(
        Verbosity::Info,
        &format!(
            "train-fusion: {} train / {} validation utterances",
            train_samples.len(),
            val_samples.len()
        ),
    );
    let log = train_fusion(&mut model, &train_samples, &val_samples, &cfg.train, &mut rng)?;

    Checkpoint::Fusion(FusionCheckpoint {
        normalizers: normalizers.to_vec(),
        model,
    })
    .save(&cfg.fusion_ckpt())?;
    std::fs::write(
        cfg.out_dir.join("train-fusion.csv"),
        crate::training::log_to_csv(&log),
    )?;
    Ok(log)
}

/// Which streams an evaluation covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamSelection {
    pub audio: bool,
    pub video: bool,
    pub fusion: bool,
}

impl Default for StreamSelection {
    fn default() -> Self {
        StreamSelection {
            audio: true,
            video: true,
            fusion: true,
        }
    }
}

/// Loads the test split and evaluates the selected streams clean plus at
/// the configured SNR levels over `cfg.runs` repetitions. Writes
/// `report.csv` and returns the rows.
pub fn run_eval(
    cfg: &RunConfig,
    selection: &StreamSelection,
    levels: Option<&[f64]>,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let manifest = load_manifest(cfg)?;

    let mut models = EvalModels::default();
    if selection.audio {
        models.audio = Some(load_stream_ckpt(
            &cfg.stream_ckpt(Modality::Audio),
            "train-stream --modality audio",
        )?);
    }
    if selection.video {
        models.video = Some(load_stream_ckpt(
            &cfg.stream_ckpt(Modality::Video),
            "train-stream --modality video",
        )?);
    }
    if selection.fusion {
        let path = cfg.fusion_ckpt();
        if !path.exists() {
            return Err(Error::Dependency {
                missing: "train-fusion".into(),
            });
        }
        match Checkpoint::load(&path)? {
            Checkpoint::Fusion(f) => models.fusion = Some(f),
            _ => {
                return Err(Error::Format(format!(
                    "{} is not a fusion checkpoint",
                    path.display()
                )))
            }
        }
    }

    let mut test = Vec::new();
    for entry in manifest.entries_for(Split::Test) {
        let utt = load_utterance(
            &manifest.root.join(&entry.path),
            cfg.synth.video_fps as f64,
            entry,
        )?;
        // The waveform stays raw for per-level mixing; video features are
        // fixed, upsampled to the (mix-independent) audio frame rate.
        let audio_fps = utt.wav.sample_rate as f64
            / cfg.spectrogram.hop_samples(utt.wav.sample_rate) as f64;
        let video_raw = crate::datapipe::FeatureSequence {
            data: crate::datapipe::mean_image_subtract(&utt.frames)?,
            fps: utt.fps_video,
        };
        let video = crate::datapipe::upsample_linear(&video_raw, audio_fps)?;
        test.push(TestUtterance {
            clean_audio: utt.wav.to_f64(),
            sample_rate: utt.wav.sample_rate,
            video_features: video,
            label: utt.label,
        });
    }
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }

    let noise = match &cfg.noise_wav {
        None => NoiseSource::Babble,
        Some(path) => NoiseSource::Recording(crate::datapipe::read_wav(path)?.to_f64()),
    };
    let levels = levels.unwrap_or(&cfg.snr_levels);
    cfg.log(
        Verbosity::Info,
        &format!(
            "eval: {} test utterances, {} runs, levels {:?}",
            test.len(),
            cfg.runs,
            levels
        ),
    );
    let rows = snr_sweep(
        &models,
        &test,
        &noise,
        levels,
        &cfg.spectrogram,
        cfg.runs,
        mix_seed(cfg.seed, 7),
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.report_path(), crate::eval::sweep_to_csv(&rows))?;
    Ok(rows)
}
