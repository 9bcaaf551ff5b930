use image::RgbImage;

use super::crop::detect_and_crop;
use super::detect::FaceDetector;
use super::{BaselinePair, PairedSample};
use crate::error::{Error, Result};
use crate::media::{AudioTrack, FrameSequence};
use crate::par;

pub const TARGET_RATE: u32 = 16_000;
pub const SOURCE_FPS: f64 = 30.0;
pub const FRAMES_PER_GROUP: usize = 3;
pub const SEGMENT_LEN: usize = 1600;
pub const BASELINE_LEN: usize = 16_000;
/// Offset of the middle frame within each second.
pub const MIDDLE_FRAME: usize = 15;
pub const PEAK_FLOOR: f32 = 1e-8;

/// One aligned audio segment and its three source frames, prior to face checks.
#[derive(Debug, Clone)]
pub struct CandidateGroup<'a> {
    pub index: usize,
    pub audio: &'a [f32],
    pub frame_indices: [usize; FRAMES_PER_GROUP],
    pub frames: [&'a RgbImage; FRAMES_PER_GROUP],
}

fn check_rates(frames: &FrameSequence, audio: &AudioTrack) -> Result<()> {
    if (frames.fps - SOURCE_FPS).abs() > 1e-9 {
        return Err(Error::UnsupportedFrameRate(frames.fps));
    }
    if audio.sample_rate != TARGET_RATE {
        return Err(Error::InvalidSampleRate(audio.sample_rate as i64));
    }
    Ok(())
}

/// Splits aligned media into groups of 1600 samples and 3 frames; group `k`
/// covers samples `[1600k, 1600(k+1))` and frames `3k..3k+3`. Incomplete
/// trailing segments or triplets are dropped.
pub fn make_candidate_pairs<'a>(
    frames: &'a FrameSequence,
    audio: &'a AudioTrack,
) -> Result<Vec<CandidateGroup<'a>>> {
    check_rates(frames, audio)?;
    let count = (audio.samples.len() / SEGMENT_LEN).min(frames.len() / FRAMES_PER_GROUP);
    Ok((0..count)
        .map(|k| {
            let f = FRAMES_PER_GROUP * k;
            CandidateGroup {
                index: k,
                audio: &audio.samples[SEGMENT_LEN * k..SEGMENT_LEN * (k + 1)],
                frame_indices: [f, f + 1, f + 2],
                frames: [&frames.frames[f], &frames.frames[f + 1], &frames.frames[f + 2]],
            }
        })
        .collect())
}

/// Divides by the segment peak, with a floor so silence stays silent.
pub fn normalize_peak(audio: &[f32]) -> Vec<f32> {
    let peak = audio.iter().fold(0.0f32, |m, a| m.max(a.abs())).max(PEAK_FLOOR);
    audio.iter().map(|a| (a / peak).clamp(-1.0, 1.0)).collect()
}

/// Keeps groups where every frame yields a face, preserving order.
pub fn filter_and_build(
    candidates: &[CandidateGroup<'_>],
    detector: &dyn FaceDetector,
    out_size: usize,
) -> Vec<PairedSample> {
    par::map_slice(candidates, |g| {
        let crops = g
            .frame_indices
            .iter()
            .zip(g.frames)
            .map(|(&i, f)| detect_and_crop(i, f, detector, out_size))
            .collect::<Option<Vec<_>>>()?;
        Some(PairedSample {
            index: g.index,
            audio: normalize_peak(g.audio),
            frames: crops,
        })
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Number of full seconds that have both audio and a middle frame.
pub fn baseline_candidates(frames: &FrameSequence, audio: &AudioTrack) -> Result<usize> {
    check_rates(frames, audio)?;
    Ok((audio.samples.len() / BASELINE_LEN)
        .min((frames.len() + SOURCE_FPS as usize - MIDDLE_FRAME - 1) / SOURCE_FPS as usize))
}

/// One pair per full second: that second's audio and its middle frame.
pub fn make_baseline_pairs(
    frames: &FrameSequence,
    audio: &AudioTrack,
    detector: &dyn FaceDetector,
    out_size: usize,
) -> Result<Vec<BaselinePair>> {
    let seconds = baseline_candidates(frames, audio)?;
    let pairs = par::map_indexed(seconds, |s| {
        let frame_index = SOURCE_FPS as usize * s + MIDDLE_FRAME;
        let crop = detect_and_crop(frame_index, &frames.frames[frame_index], detector, out_size)?;
        Some(BaselinePair {
            index: s,
            frame_index,
            audio: normalize_peak(&audio.samples[BASELINE_LEN * s..BASELINE_LEN * (s + 1)]),
            frame: crop,
        })
    });
    Ok(pairs.into_iter().flatten().collect())
}
