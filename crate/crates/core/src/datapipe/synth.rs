//! Synthetic audiovisual dataset generator and babble-like noise synthesis.
//!
//! Each class has a latent temporal pattern rendered two ways: a moving
//! bright blob trajectory in the image sequence, and a tone/chirp schedule
//! in the waveform. Per-subject appearance and pitch offsets make the
//! subject-disjoint splits meaningful. Informativeness knobs scale how much
//! of the class pattern reaches each modality (0 = chance-level modality).

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{mix_seed, RngState};

use super::pgm::{write_pgm, Image};
use super::wav::{write_wav, Wav};
use super::{DatasetManifest, ManifestEntry, Split};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub classes: usize,
    pub subjects: usize,
    /// Utterances per subject per class.
    pub utterances_per_subject: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub video_fps: u32,
    pub sample_rate: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// 0 = video carries no class signal, 1 = full trajectory amplitude.
    pub video_informativeness: f64,
    /// 0 = audio carries no class signal, 1 = full chirp range.
    pub audio_informativeness: f64,
    pub train_subjects: usize,
    pub val_subjects: usize,
    pub test_subjects: usize,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Argument("synth: need at least one class".into()));
        }
        if self.subjects == 0 || self.utterances_per_subject == 0 {
            return Err(Error::Argument("synth: need subjects and utterances".into()));
        }
        if self.train_subjects + self.val_subjects + self.test_subjects != self.subjects {
            return Err(Error::Argument(format!(
                "synth: split sizes {}+{}+{} do not cover {} subjects",
                self.train_subjects, self.val_subjects, self.test_subjects, self.subjects
            )));
        }
        if self.image_width < 4 || self.image_height < 4 {
            return Err(Error::Argument("synth: image too small".into()));
        }
        if self.video_fps == 0 || self.sample_rate % self.video_fps != 0 {
            return Err(Error::Argument(format!(
                "synth: sample rate {} must be a multiple of the video fps {}",
                self.sample_rate, self.video_fps
            )));
        }
        if !(self.min_duration_s > 0.0) || self.max_duration_s < self.min_duration_s {
            return Err(Error::Argument("synth: bad duration range".into()));
        }
        Ok(())
    }
}

/// Class-level latent pattern: blob start/end positions and chirp endpoints.
struct ClassPattern {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    f0: f64,
    f1: f64,
}

fn class_pattern(seed: u64, class: usize, classes: usize) -> ClassPattern {
    let mut rng = RngState::new(mix_seed(seed, 0x1000_0000 + class as u64));
    // Trajectory direction spread around the circle per class, with a small
    // seeded jitter so no two datasets are pixel-identical.
    let angle = TAU * class as f64 / classes as f64 + rng.uniform_in(-0.15, 0.15);
    let (dx, dy) = (angle.cos(), angle.sin());
    let reach = 0.30;
    // Chirps sweep within the speech band; direction alternates per class.
    let center = rng.uniform_in(1000.0, 1800.0);
    let half_span = rng.uniform_in(350.0, 600.0);
    let (f0, f1) = if class % 2 == 0 {
        (center - half_span, center + half_span)
    } else {
        (center + half_span, center - half_span)
    };
    ClassPattern {
        x0: 0.5 - reach * dx,
        y0: 0.5 - reach * dy,
        x1: 0.5 + reach * dx,
        y1: 0.5 + reach * dy,
        f0,
        f1,
    }
}

/// Subject-level offsets: appearance and pitch.
struct SubjectTraits {
    brightness: f64,
    blob_sigma: f64,
    pos_offset: (f64, f64),
    pitch: f64,
}

fn subject_traits(seed: u64, subject: usize) -> SubjectTraits {
    let mut rng = RngState::new(mix_seed(seed, 0x2000_0000 + subject as u64));
    SubjectTraits {
        brightness: rng.uniform_in(0.65, 0.95),
        blob_sigma: rng.uniform_in(0.10, 0.14),
        pos_offset: (rng.uniform_in(-0.04, 0.04), rng.uniform_in(-0.04, 0.04)),
        pitch: rng.uniform_in(0.93, 1.07),
    }
}

fn render_frame(
    cfg: &SynthConfig,
    cx: f64,
    cy: f64,
    traits: &SubjectTraits,
    rng: &mut RngState,
) -> Image {
    let (w, h) = (cfg.image_width, cfg.image_height);
    let sigma = traits.blob_sigma * w.min(h) as f64;
    let px = cx * (w - 1) as f64;
    let py = cy * (h - 1) as f64;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d2 = (x as f64 - px).powi(2) + (y as f64 - py).powi(2);
            let blob = traits.brightness * (-d2 / (2.0 * sigma * sigma)).exp();
            let noise = 0.02 * rng.gaussian();
            let v = (0.12 + blob + noise).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
    }
    Image {
        width: w,
        height: h,
        pixels,
    }
}

fn render_utterance(
    cfg: &SynthConfig,
    pattern: &ClassPattern,
    traits: &SubjectTraits,
    rng: &mut RngState,
) -> (Vec<Image>, Wav) {
    let fps = cfg.video_fps as f64;
    let min_frames = (cfg.min_duration_s * fps).ceil() as usize;
    let max_frames = (cfg.max_duration_s * fps).floor() as usize;
    let n_frames = min_frames + rng.index(max_frames - min_frames + 1);
    let samples_per_frame = (cfg.sample_rate / cfg.video_fps) as usize;
    let n_samples = n_frames * samples_per_frame;

    // Small per-utterance timing/position jitter.
    let jitter = (rng.uniform_in(-0.03, 0.03), rng.uniform_in(-0.03, 0.03));
    let lam_v = cfg.video_informativeness;

    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let tau = if n_frames > 1 {
            t as f64 / (n_frames - 1) as f64
        } else {
            0.0
        };
        let tx = pattern.x0 + (pattern.x1 - pattern.x0) * tau;
        let ty = pattern.y0 + (pattern.y1 - pattern.y0) * tau;
        let cx = 0.5 + lam_v * (tx - 0.5) + traits.pos_offset.0 + jitter.0;
        let cy = 0.5 + lam_v * (ty - 0.5) + traits.pos_offset.1 + jitter.1;
        frames.push(render_frame(cfg, cx.clamp(0.05, 0.95), cy.clamp(0.05, 0.95), traits, rng));
    }

    let lam_a = cfg.audio_informativeness;
    let neutral = 1200.0;
    let amp = rng.uniform_in(0.30, 0.40);
    let mut phase = rng.uniform_in(0.0, TAU);
    let mut samples = Vec::with_capacity(n_samples);
    for s in 0..n_samples {
        let tau = s as f64 / n_samples as f64;
        let f_class = pattern.f0 + (pattern.f1 - pattern.f0) * tau;
        let f = neutral + lam_a * (traits.pitch * f_class - neutral);
        phase += TAU * f / cfg.sample_rate as f64;
        let v = amp * phase.sin() + 0.01 * rng.gaussian();
        samples.push(v);
    }
    (frames, Wav::from_f64(cfg.sample_rate, &samples))
}

/// Generates the dataset under `out_dir` (one directory per utterance with
/// PGM frames and `audio.wav`) plus `manifest.csv`. Bit-identical output
/// for identical seeds.
pub fn synth_dataset(out_dir: &Path, cfg: &SynthConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::new();
    let mut utt_index = 0usize;
    for subject in 0..cfg.subjects {
        let split = if subject < cfg.train_subjects {
            Split::Train
        } else if subject < cfg.train_subjects + cfg.val_subjects {
            Split::Validation
        } else {
            Split::Test
        };
        let traits = subject_traits(seed, subject);
        for class in 0..cfg.classes {
            let pattern = class_pattern(seed, class, cfg.classes);
            for _rep in 0..cfg.utterances_per_subject {
                let mut rng = RngState::new(mix_seed(seed, 0x3000_0000 + utt_index as u64));
                let (frames, wav) = render_utterance(cfg, &pattern, &traits, &mut rng);
                let name = format!("utt_{:05}", utt_index);
                let dir = out_dir.join(&name);
                std::fs::create_dir_all(&dir)?;
                for (i, frame) in frames.iter().enumerate() {
                    write_pgm(&dir.join(format!("frame_{:04}.pgm", i)), frame)?;
                }
                write_wav(&dir.join("audio.wav"), &wav)?;
                entries.push(ManifestEntry {
                    path: name,
                    label: class,
                    subject: subject as u32,
                    split,
                });
                utt_index += 1;
            }
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    super::write_manifest(&out_dir.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}

/// Second-order bandpass filter (constant-peak-gain biquad).
struct Bandpass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Bandpass {
    fn new(center_hz: f64, q: f64, sample_rate: f64) -> Self {
        let omega = TAU * center_hz / sample_rate;
        let alpha = omega.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Bandpass {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * omega.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Babble-like noise: the sum of 8 speech-band noise sources, each a
/// bandpass-filtered Gaussian stream with a slow amplitude modulation.
pub fn babble_noise(rng: &mut RngState, len: usize, sample_rate: u32) -> Vec<f64> {
    const SOURCES: usize = 8;
    let sr = sample_rate as f64;
    let mut out = vec![0.0; len];
    for _ in 0..SOURCES {
        let center = rng.uniform_in(300.0, 3000.0_f64.min(sr / 2.5));
        let q = rng.uniform_in(0.8, 2.0);
        let mod_hz = rng.uniform_in(1.5, 6.0);
        let mod_phase = rng.uniform_in(0.0, TAU);
        let mut filter = Bandpass::new(center, q, sr);
        for (i, o) in out.iter_mut().enumerate() {
            let envelope = 0.55 + 0.45 * (TAU * mod_hz * i as f64 / sr + mod_phase).sin();
            *o += envelope * filter.step(rng.gaussian());
        }
    }
    for o in &mut out {
        *o /= SOURCES as f64;
    }
    out
}

/// Noise for the evaluation sweeps: either the built-in babble synthesizer
/// or a user-supplied recording (tiled and offset as needed).
#[derive(Clone, Debug)]
pub enum NoiseSource {
    Babble,
    Recording(Vec<f64>),
}

impl NoiseSource {
    /// Produces at least `len` samples of noise.
    pub fn samples(&self, len: usize, sample_rate: u32, rng: &mut RngState) -> Result<Vec<f64>> {
        match self {
            NoiseSource::Babble => Ok(babble_noise(rng, len, sample_rate)),
            NoiseSource::Recording(rec) => {
                if rec.is_empty() {
                    return Err(Error::Argument("noise recording is empty".into()));
                }
                let offset = rng.index(rec.len());
                let mut out = Vec::with_capacity(len);
                for i in 0..len {
                    out.push(rec[(offset + i) % rec.len()]);
                }
                Ok(out)
            }
        }
    }
}
