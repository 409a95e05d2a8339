//! Log-magnitude spectrogram extraction.
//!
//! Frames of `window_ms` are taken every `hop_ms` (40/10 by default, i.e.
//! 30 ms overlap and a 100 fps frame rate), Hann-windowed, zero-padded to
//! the FFT size, and reduced to `log(1 + |DFT|)` over the one-sided bins.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::FeatureSequence;

/// Spectrogram parameters. `fft_size = None` picks the next power of two at
/// or above the window length.
#[derive(Clone, Copy, Debug)]
pub struct SpectrogramConfig {
    pub window_ms: u32,
    pub hop_ms: u32,
    pub fft_size: Option<usize>,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            window_ms: 40,
            hop_ms: 10,
            fft_size: None,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_ms == 0 || self.hop_ms == 0 {
            return Err(Error::Config("spectrogram window/hop must be positive".into()));
        }
        if self.hop_ms > self.window_ms {
            return Err(Error::Config("spectrogram hop must not exceed the window".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as u64 * self.window_ms as u64 / 1000) as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as u64 * self.hop_ms as u64 / 1000) as usize
    }

    pub fn resolved_fft_size(&self, sample_rate: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_samples(sample_rate).next_power_of_two())
    }

    /// One-sided bin count: `fft/2 + 1`.
    pub fn feature_dim(&self, sample_rate: u32) -> usize {
        self.resolved_fft_size(sample_rate) / 2 + 1
    }
}

/// In-place iterative radix-2 FFT (decimation in time).
fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // bit-reversal permutation
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let mut cur_re = 1.0;
            let mut cur_im = 0.0;
            for k in 0..len / 2 {
                let a = i + k;
                let b = i + k + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Computes the spectrogram of `samples` (floats in [-1, 1]).
///
/// Frame `t` covers samples `[t*hop, t*hop + window)`; the frame count is
/// `floor((N - window) / hop) + 1` and the output frame rate is
/// `sample_rate / hop_samples` (exactly 100 fps for 10 ms hops).
pub fn spectrogram(
    samples: &[f64],
    sample_rate: u32,
    cfg: &SpectrogramConfig,
) -> Result<FeatureSequence> {
    cfg.validate()?;
    if sample_rate < 8000 {
        return Err(Error::Data(format!(
            "sample rate {} below the 8 kHz minimum",
            sample_rate
        )));
    }
    let window = cfg.window_samples(sample_rate);
    let hop = cfg.hop_samples(sample_rate);
    if samples.len() < window {
        return Err(Error::Data(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            samples.len(),
            window
        )));
    }
    let fft_size = cfg.resolved_fft_size(sample_rate);
    if fft_size < window {
        return Err(Error::Config(format!(
            "fft size {} smaller than window {}",
            fft_size, window
        )));
    }
    let frames = (samples.len() - window) / hop + 1;
    let bins = fft_size / 2 + 1;
    let win = hann(window);
    let mut out = Matrix::zeros(frames, bins);
    let mut re = vec![0.0; fft_size];
    let mut im = vec![0.0; fft_size];
    for t in 0..frames {
        let start = t * hop;
        for v in re.iter_mut() {
            *v = 0.0;
        }
        for v in im.iter_mut() {
            *v = 0.0;
        }
        for (i, w) in win.iter().enumerate() {
            re[i] = samples[start + i] * w;
        }
        fft_radix2(&mut re, &mut im);
        let row = out.row_mut(t);
        for (b, r) in row.iter_mut().enumerate() {
            let mag = (re[b] * re[b] + im[b] * im[b]).sqrt();
            *r = (1.0 + mag).ln();
        }
    }
    Ok(FeatureSequence {
        data: out,
        fps: sample_rate as f64 / hop as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive DFT magnitude oracle for one frame.
    fn dft_magnitudes(frame: &[f64], fft_size: usize) -> Vec<f64> {
        let mut mags = Vec::with_capacity(fft_size / 2 + 1);
        for k in 0..=fft_size / 2 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (n, &x) in frame.iter().enumerate() {
                let ang = -std::f64::consts::TAU * k as f64 * n as f64 / fft_size as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            mags.push((re * re + im * im).sqrt());
        }
        mags
    }

    #[test]
    fn frame_rate_is_100_fps_at_48khz() {
        let cfg = SpectrogramConfig::default();
        assert_eq!(cfg.window_samples(48000), 1920);
        assert_eq!(cfg.hop_samples(48000), 480);
        let samples = vec![0.01; 48000];
        let feats = spectrogram(&samples, 48000, &cfg).unwrap();
        assert_eq!(feats.fps, 100.0);
        assert_eq!(cfg.resolved_fft_size(48000), 2048);
    }

    #[test]
    fn frame_count_formula_holds() {
        let cfg = SpectrogramConfig::default();
        for n in [320usize, 321, 400, 799, 800, 8000] {
            let samples = vec![0.0; n];
            let feats = spectrogram(&samples, 8000, &cfg).unwrap();
            let window = 320;
            let hop = 80;
            assert_eq!(feats.data.rows(), (n - window) / hop + 1, "N = {}", n);
        }
    }

    #[test]
    fn pure_tone_peaks_at_nearest_bin() {
        let sr = 48000u32;
        let cfg = SpectrogramConfig::default();
        let freq = 1000.0;
        let samples: Vec<f64> = (0..sr as usize / 10)
            .map(|n| 0.5 * (std::f64::consts::TAU * freq * n as f64 / sr as f64).sin())
            .collect();
        let feats = spectrogram(&samples, sr, &cfg).unwrap();
        let fft_size = cfg.resolved_fft_size(sr) as f64;
        let expected_bin = (freq * fft_size / sr as f64).round() as usize;
        for t in 0..feats.data.rows() {
            let row = feats.data.row(t);
            let peak = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(peak, expected_bin, "frame {}", t);
        }
    }

    #[test]
    fn matches_naive_dft_oracle_on_one_frame() {
        let sr = 8000u32;
        let cfg = SpectrogramConfig::default();
        let window = cfg.window_samples(sr);
        let fft_size = cfg.resolved_fft_size(sr);
        let samples: Vec<f64> = (0..window)
            .map(|n| (0.3 * (n as f64 * 0.11).sin() + 0.2 * (n as f64 * 0.037).cos()))
            .collect();
        let feats = spectrogram(&samples, sr, &cfg).unwrap();
        assert_eq!(feats.data.rows(), 1);

        let win = hann(window);
        let mut frame = vec![0.0; fft_size];
        for i in 0..window {
            frame[i] = samples[i] * win[i];
        }
        let mags = dft_magnitudes(&frame, fft_size);
        for (b, &mag) in mags.iter().enumerate() {
            let want = (1.0 + mag).ln();
            assert!(
                (feats.data.get(0, b) - want).abs() < 1e-8,
                "bin {}: {} vs {}",
                b,
                feats.data.get(0, b),
                want
            );
        }
    }

    #[test]
    fn silence_gives_zero_features() {
        let cfg = SpectrogramConfig::default();
        let samples = vec![0.0; 8000];
        let feats = spectrogram(&samples, 8000, &cfg).unwrap();
        assert!(feats.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_waveform_is_data_error() {
        let cfg = SpectrogramConfig::default();
        let samples = vec![0.0; 100];
        assert!(matches!(
            spectrogram(&samples, 8000, &cfg),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn sub_8khz_rate_is_data_error() {
        let cfg = SpectrogramConfig::default();
        let samples = vec![0.0; 4000];
        assert!(matches!(
            spectrogram(&samples, 4000, &cfg),
            Err(Error::Data(_))
        ));
    }
}
