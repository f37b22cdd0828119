//! Canonical PCM16 mono 16 kHz RIFF/WAVE reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

use super::{Waveform, SAMPLE_RATE};

const PCM_FORMAT: u16 = 1;

/// Decodes a RIFF/WAVE byte buffer. Only PCM 16-bit mono at 16 kHz is
/// accepted; every other layout is reported with a distinct error.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::MalformedWav(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::MalformedWav("fmt chunk shorter than 16 bytes".into()));
                }
                let u16_at = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
                let tag = u16_at(0);
                let channels = u16_at(2);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let block_align = u16_at(12);
                let bits = u16_at(14);
                fmt = Some((tag, channels, rate, block_align, bits));
            }
            b"data" => {
                let (tag, channels, rate, block_align, bits) =
                    fmt.ok_or_else(|| Error::MalformedWav("data chunk before fmt chunk".into()))?;
                if tag != PCM_FORMAT || bits != 16 {
                    return Err(Error::UnsupportedEncoding { format_tag: tag, bits });
                }
                if channels != 1 {
                    return Err(Error::UnsupportedChannels(channels));
                }
                if rate != SAMPLE_RATE {
                    return Err(Error::UnsupportedSampleRate(rate));
                }
                if block_align != 2 {
                    return Err(Error::MalformedWav(format!("block align {block_align} for 16-bit mono")));
                }
                if body.len() % 2 != 0 {
                    return Err(Error::MalformedWav("odd data chunk size".into()));
                }
                if body.is_empty() {
                    return Err(Error::MalformedWav("no samples".into()));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Waveform::new(samples);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    Err(Error::MalformedWav(if fmt.is_some() {
        "missing data chunk".into()
    } else {
        "missing fmt chunk".into()
    }))
}

/// Quantises one sample: clamp to [-1, 1], scale by 32768, round to nearest.
pub fn quantize_sample(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(waveform: &Waveform) -> Result<Vec<u8>> {
    if let Some(i) = waveform.samples().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample(i));
    }
    let data_len = waveform.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in waveform.samples() {
        out.extend_from_slice(&quantize_sample(s).to_le_bytes());
    }
    Ok(out)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn write_wav(waveform: &Waveform, path: &Path) -> Result<()> {
    let bytes = encode_wav(waveform)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
