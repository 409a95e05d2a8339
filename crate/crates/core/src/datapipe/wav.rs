//! Minimal RIFF/WAVE reader and writer: 16-bit PCM, mono only.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono 16-bit PCM waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Wav {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl Wav {
    /// Samples scaled to `[-1, 1)` floats.
    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 / 32768.0).collect()
    }

    /// Clamps and quantizes floats in `[-1, 1]` back to 16-bit PCM.
    pub fn from_f64(sample_rate: u32, samples: &[f64]) -> Self {
        let samples = samples
            .iter()
            .map(|&x| (x.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .collect();
        Wav {
            sample_rate,
            samples,
        }
    }
}

fn u32_at(bytes: &[u8], pos: usize) -> Result<u32> {
    bytes
        .get(pos..pos + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Data("wav: unexpected end of file".into()))
}

fn u16_at(bytes: &[u8], pos: usize) -> Result<u16> {
    bytes
        .get(pos..pos + 2)
        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Data("wav: unexpected end of file".into()))
}

pub fn read_wav(path: &Path) -> Result<Wav> {
    let bytes = std::fs::read(path)?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}

pub fn parse_wav(bytes: &[u8]) -> Result<Wav> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Data("wav: not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None; // (audio_fmt, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::Data("wav: truncated chunk".into()));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Data("wav: fmt chunk too short".into()));
                }
                format = Some((
                    u16_at(bytes, body_start)?,
                    u16_at(bytes, body_start + 2)?,
                    u32_at(bytes, body_start + 4)?,
                    u16_at(bytes, body_start + 14)?,
                ));
            }
            b"data" => {
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_start + size + (size & 1);
    }
    let (audio_fmt, channels, rate, bits) =
        format.ok_or_else(|| Error::Data("wav: missing fmt chunk".into()))?;
    if audio_fmt != 1 {
        return Err(Error::Data(format!("wav: unsupported format tag {}", audio_fmt)));
    }
    if channels != 1 {
        return Err(Error::Data(format!("wav: expected mono, got {} channels", channels)));
    }
    if bits != 16 {
        return Err(Error::Data(format!("wav: expected 16-bit, got {}", bits)));
    }
    let data = data.ok_or_else(|| Error::Data("wav: missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Data("wav: odd data length".into()));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok(Wav {
        sample_rate: rate,
        samples,
    })
}

pub fn write_wav(path: &Path, wav: &Wav) -> Result<()> {
    std::fs::write(path, encode_wav(wav))?;
    Ok(())
}

pub fn encode_wav(wav: &Wav) -> Vec<u8> {
    let data_len = wav.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wav.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wav.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &wav.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}
