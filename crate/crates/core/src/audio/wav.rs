use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const SAMPLE_RATE: u32 = 16_000;

/// Mono samples nominally in `[-1, 1]` at a declared rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<Real>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<Real>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> Real {
        self.samples.len() as Real / self.sample_rate as Real
    }
}

/// `round(x * 32768)` clamped to the 16-bit range.
pub fn quantize(x: Real) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses a RIFF/WAVE byte buffer holding 16-bit PCM mono at 16 kHz.
pub fn parse_wav(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    let malformed = |reason: String| Error::MalformedWav {
        path: path.to_path_buf(),
        reason,
    };
    let unsupported = |reason: String| Error::UnsupportedWav {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header".into()));
    }
    let riff_len = u32_at(bytes, 4) as usize;
    if riff_len + 8 != bytes.len() {
        return Err(malformed(format!(
            "RIFF header declares {} bytes but the file has {}",
            riff_len + 8,
            bytes.len()
        )));
    }
    let mut pos = 12;
    let mut format = None;
    let mut data = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(malformed(format!(
                "chunk {:?} declares {len} bytes but only {} remain",
                String::from_utf8_lossy(id),
                bytes.len() - body
            )));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(malformed(format!("fmt chunk of {len} bytes is too short")));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => data = Some(&bytes[body..body + len]),
            _ => {}
        }
        // chunks are padded to even length
        pos = body + len + (len & 1);
    }
    let (tag, channels, rate, bits) = format.ok_or_else(|| malformed("no fmt chunk".into()))?;
    if tag != 1 {
        return Err(unsupported(format!("format tag {tag}; only PCM (1) is supported")));
    }
    if channels != 1 {
        return Err(unsupported(format!("{channels} channels; only mono is supported")));
    }
    if rate != SAMPLE_RATE {
        return Err(unsupported(format!(
            "sample rate {rate} Hz; only {SAMPLE_RATE} Hz is supported (no resampling)"
        )));
    }
    if bits != 16 {
        return Err(unsupported(format!("{bits}-bit samples; only 16-bit is supported")));
    }
    let data = data.ok_or_else(|| malformed("no data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(malformed(format!("data chunk of {} bytes is not whole samples", data.len())));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as Real / 32768.0)
        .collect();
    AudioClip::new(samples, rate)
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_wav(&bytes, path)
}

/// Canonical 44-byte-header encoding.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = 2 * clip.samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &clip.samples {
        out.extend_from_slice(&quantize(x).to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedWav {
            path: path.to_path_buf(),
            reason: format!("sample rate {} Hz; only {SAMPLE_RATE} Hz is written", clip.sample_rate),
        });
    }
    fs::write(path, encode_wav(clip)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
