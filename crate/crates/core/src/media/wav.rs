use std::path::Path;

use super::riff::{parse_chunks, put_chunk, u16_at, u32_at};
use super::{f32_to_i16, i16_to_f32, PcmAudio};
use crate::error::{Error, Result};

/// Parses a `WAVEFORMATEX` header and returns `(format, channels, rate, bits)`.
pub(crate) fn parse_format(fmt: &[u8]) -> Result<(u16, u16, u32, u16)> {
    let format = u16_at(fmt, 0)?;
    let channels = u16_at(fmt, 2)?;
    let rate = u32_at(fmt, 4)?;
    let bits = u16_at(fmt, 14)?;
    // WAVE_FORMAT_EXTENSIBLE carries the real tag in the sub-format GUID.
    let format = if format == 0xFFFE { u16_at(fmt, 24)? } else { format };
    if channels == 0 {
        return Err(Error::MalformedMedia("zero audio channels".into()));
    }
    if rate == 0 {
        return Err(Error::InvalidSampleRate(0));
    }
    Ok((format, channels, rate, bits))
}

pub(crate) fn decode_samples(format: u16, bits: u16, data: &[u8]) -> Result<Vec<f32>> {
    match (format, bits) {
        (1, 16) => Ok(data
            .chunks_exact(2)
            .map(|b| i16_to_f32(i16::from_le_bytes([b[0], b[1]])))
            .collect()),
        (1, 8) => Ok(data.iter().map(|&b| (b as f32 - 128.0) / 127.0).collect()),
        (3, 32) => Ok(data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]).clamp(-1.0, 1.0))
            .collect()),
        _ => Err(Error::UnsupportedMedia(format!(
            "audio format tag {format} with {bits} bits"
        ))),
    }
}

pub(crate) fn format_block(channels: u16, rate: u32) -> Vec<u8> {
    let block = channels as u32 * 2;
    let mut f = Vec::with_capacity(16);
    f.extend_from_slice(&1u16.to_le_bytes());
    f.extend_from_slice(&channels.to_le_bytes());
    f.extend_from_slice(&rate.to_le_bytes());
    f.extend_from_slice(&(rate * block).to_le_bytes());
    f.extend_from_slice(&(block as u16).to_le_bytes());
    f.extend_from_slice(&16u16.to_le_bytes());
    f
}

/// Reads 8/16-bit integer or 32-bit float PCM WAV.
pub fn read_wav(path: &Path) -> Result<PcmAudio> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedMedia(format!("{} is not a WAV file", path.display())));
    }
    let chunks = parse_chunks(&bytes[12..])?;
    let fmt = chunks
        .iter()
        .find(|c| &c.id == b"fmt ")
        .ok_or_else(|| Error::MalformedMedia("WAV without fmt chunk".into()))?;
    let (format, channels, sample_rate, bits) = parse_format(fmt.data)?;
    let data = chunks
        .iter()
        .find(|c| &c.id == b"data")
        .ok_or(Error::MissingAudio)?;
    Ok(PcmAudio {
        sample_rate,
        channels,
        samples: decode_samples(format, bits, data.data)?,
    })
}

/// Writes 16-bit PCM WAV.
pub fn write_wav(path: &Path, audio: &PcmAudio) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(b"WAVE");
    put_chunk(&mut body, b"fmt ", &format_block(audio.channels, audio.sample_rate));
    let pcm: Vec<u8> = audio
        .samples
        .iter()
        .flat_map(|&s| f32_to_i16(s).to_le_bytes())
        .collect();
    put_chunk(&mut body, b"data", &pcm);
    let mut out = Vec::with_capacity(body.len() + 8);
    put_chunk(&mut out, b"RIFF", &body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
