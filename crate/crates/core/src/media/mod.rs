//! Decoding and encoding of the media the pipeline consumes.
//!
//! Containers are read without external tools: uncompressed AVI (24-bit RGB
//! video plus PCM audio) for source clips and PCM WAV for driving audio.

mod avi;
mod riff;
mod wav;

use std::path::Path;

use image::RgbImage;

pub use avi::{read_avi, write_avi, write_avi_with_drop};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate, amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioTrack {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidSampleRate(0));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::MalformedMedia("non-finite audio sample".into()));
        }
        Ok(AudioTrack {
            sample_rate,
            samples,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Interleaved multi-channel PCM as stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmAudio {
    pub sample_rate: u32,
    pub channels: u16,
    /// Interleaved samples in `[-1, 1]`.
    pub samples: Vec<f32>,
}

impl PcmAudio {
    pub fn mono(track: &AudioTrack) -> Self {
        PcmAudio {
            sample_rate: track.sample_rate,
            channels: 1,
            samples: track.samples.clone(),
        }
    }

    /// Averages channels into a mono track.
    pub fn to_mono(&self) -> Result<AudioTrack> {
        let c = self.channels.max(1) as usize;
        let samples = self
            .samples
            .chunks_exact(c)
            .map(|f| f.iter().sum::<f32>() / c as f32)
            .collect();
        AudioTrack::new(self.sample_rate, samples)
    }
}

/// Decoded video frames in presentation order.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub fps: f64,
    pub frames: Vec<RgbImage>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> Option<(u32, u32)> {
        self.frames.first().map(|f| f.dimensions())
    }
}

/// Decodes a source clip into frames and mono audio at the source rate.
pub fn ingest_video(path: &Path) -> Result<(FrameSequence, AudioTrack)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"AVI " {
        let (frames, audio) = avi::decode_avi(&bytes)?;
        Ok((frames, audio.to_mono()?))
    } else {
        Err(Error::UnsupportedMedia(format!(
            "{}: expected an uncompressed RIFF/AVI container",
            path.display()
        )))
    }
}

pub(crate) fn f32_to_i16(v: f32) -> i16 {
    (v.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub(crate) fn i16_to_f32(v: i16) -> f32 {
    (v as f32 / 32767.0).max(-1.0)
}
