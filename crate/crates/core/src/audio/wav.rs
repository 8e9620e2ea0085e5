//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads PCM 16-bit and IEEE-float 32-bit data (plain or
//! `WAVE_FORMAT_EXTENSIBLE`), any channel count, averaging channels to mono.
//! The writer always emits mono PCM 16-bit.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::AudioClip;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("wav file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed wav header: field `{field}`: {detail}")]
    Malformed { field: &'static str, detail: String },
    #[error("unsupported wav codec: field `{field}` = {value}")]
    Unsupported { field: &'static str, value: u32 },
    #[error("wav file contains no samples")]
    Empty,
}

fn malformed(field: &'static str, detail: impl Into<String>) -> WavError {
    WavError::Malformed {
        field,
        detail: detail.into(),
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            WavError::NotFound(path.to_path_buf())
        } else {
            WavError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    decode_wav(&bytes)
}

struct Format {
    codec: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory WAV image.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 {
        return Err(malformed(
            "RIFF",
            "file shorter than the 12-byte RIFF header",
        ));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(malformed("RIFF", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(malformed("WAVE", "missing WAVE form type"));
    }

    let mut format: Option<Format> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        // Tolerate a truncated final data chunk, as many recorders write one.
        let body_end = (body_start + size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed(
                        "fmt",
                        format!("chunk is {} bytes, need 16", body.len()),
                    ));
                }
                let mut codec = u16_at(body, 0);
                if codec == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(malformed(
                            "fmt",
                            "extensible chunk too short for sub-format",
                        ));
                    }
                    codec = u16_at(body, 24);
                }
                format = Some(Format {
                    codec,
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits: u16_at(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_start + size + (size & 1);
    }

    let format = format.ok_or_else(|| malformed("fmt", "no fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("data", "no data chunk"))?;
    if format.channels == 0 {
        return Err(malformed("channels", "zero channels"));
    }
    if format.sample_rate == 0 {
        return Err(malformed("sample_rate", "zero sample rate"));
    }
    let samples = match (format.codec, format.bits) {
        (FORMAT_PCM, 16) => decode_frames(data, format.channels, 2, |b| {
            i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0
        }),
        (FORMAT_FLOAT, 32) => decode_frames(data, format.channels, 4, |b| {
            f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64
        }),
        (FORMAT_PCM, bits) | (FORMAT_FLOAT, bits) => {
            return Err(WavError::Unsupported {
                field: "bits_per_sample",
                value: bits as u32,
            })
        }
        (codec, _) => {
            return Err(WavError::Unsupported {
                field: "audio_format",
                value: codec as u32,
            })
        }
    };
    if samples.is_empty() {
        return Err(WavError::Empty);
    }
    Ok(AudioClip::new(samples, format.sample_rate).expect("rate checked above"))
}

fn decode_frames(
    data: &[u8],
    channels: u16,
    width: usize,
    decode: impl Fn(&[u8]) -> f64,
) -> Vec<f64> {
    let channels = channels as usize;
    let frame = width * channels;
    data.chunks_exact(frame)
        .map(|f| {
            let sum: f64 = f.chunks_exact(width).map(&decode).sum();
            sum / channels as f64
        })
        .collect()
}

/// Quantizes a sample the way the writer does.
pub(crate) fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes a clip as mono 16-bit PCM.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in clip.samples() {
        out.extend_from_slice(&quantize_i16(x).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), WavError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })
}
