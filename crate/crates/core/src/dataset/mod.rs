//! Paired audio/face datasets: building them from a source clip and storing
//! them on disk.

mod crop;
mod detect;
mod haar;
mod pairing;
mod resample;
mod store;
mod xml;

use std::fmt;
use std::str::FromStr;

pub use crop::{crop_box, detect_and_crop, frame_to_image, image_to_frame, level_to_unit, unit_to_level};
pub use detect::{select_face, FaceBox, FaceDetector, SidecarDetector};
pub use haar::{group_rectangles, HaarCascade};
pub use pairing::{
    baseline_candidates, filter_and_build, make_baseline_pairs, make_candidate_pairs, normalize_peak, CandidateGroup,
    BASELINE_LEN, FRAMES_PER_GROUP, MIDDLE_FRAME, PEAK_FLOOR, SEGMENT_LEN, SOURCE_FPS, TARGET_RATE,
};
pub use resample::resample_audio;
pub use store::{load_dataset, write_dataset, DatasetManifest, ManifestEntry, MANIFEST_FILE};

pub use crate::media::{ingest_video, AudioTrack, FrameSequence};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CROP_SIZE: usize = 64;

/// 0.1 s of normalized audio with the three face crops it accompanies.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    /// Segment ordinal in the source clip.
    pub index: usize,
    pub audio: Vec<f32>,
    /// `[3, S, S]` crops in `[-1, 1]`, in time order.
    pub frames: Vec<Tensor>,
}

/// One second of normalized audio with the face from its middle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePair {
    /// Second ordinal in the source clip.
    pub index: usize,
    pub frame_index: usize,
    pub audio: Vec<f32>,
    pub frame: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetMode {
    Triplet,
    Baseline,
}

impl DatasetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetMode::Triplet => "triplet",
            DatasetMode::Baseline => "baseline",
        }
    }

    pub fn audio_len(self) -> usize {
        match self {
            DatasetMode::Triplet => SEGMENT_LEN,
            DatasetMode::Baseline => BASELINE_LEN,
        }
    }

    pub fn frames_per_sample(self) -> usize {
        match self {
            DatasetMode::Triplet => FRAMES_PER_GROUP,
            DatasetMode::Baseline => 1,
        }
    }
}

impl fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(DatasetMode::Triplet),
            "baseline" => Ok(DatasetMode::Baseline),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset mode {other:?} (expected triplet or baseline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Triplet(Vec<PairedSample>),
    Baseline(Vec<BaselinePair>),
}

/// A built dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub samples: Samples,
}

impl Dataset {
    pub fn triplet(image_size: usize, samples: Vec<PairedSample>) -> Self {
        Dataset {
            image_size,
            samples: Samples::Triplet(samples),
        }
    }

    pub fn baseline(image_size: usize, samples: Vec<BaselinePair>) -> Self {
        Dataset {
            image_size,
            samples: Samples::Baseline(samples),
        }
    }

    pub fn mode(&self) -> DatasetMode {
        match self.samples {
            Samples::Triplet(_) => DatasetMode::Triplet,
            Samples::Baseline(_) => DatasetMode::Baseline,
        }
    }

    pub fn len(&self) -> usize {
        match &self.samples {
            Samples::Triplet(s) => s.len(),
            Samples::Baseline(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize) -> usize {
        match &self.samples {
            Samples::Triplet(s) => s[i].index,
            Samples::Baseline(s) => s[i].index,
        }
    }

    pub fn audio(&self, i: usize) -> &[f32] {
        match &self.samples {
            Samples::Triplet(s) => &s[i].audio,
            Samples::Baseline(s) => &s[i].audio,
        }
    }

    /// Frames of sample `i`: three for triplets, one for baseline pairs.
    pub fn frames(&self, i: usize) -> &[Tensor] {
        match &self.samples {
            Samples::Triplet(s) => &s[i].frames,
            Samples::Baseline(s) => std::slice::from_ref(&s[i].frame),
        }
    }

    /// Source frame index of each stored frame of sample `i`.
    pub fn source_frames(&self, i: usize) -> Vec<usize> {
        match &self.samples {
            Samples::Triplet(s) => (0..FRAMES_PER_GROUP)
                .map(|t| FRAMES_PER_GROUP * s[i].index + t)
                .collect(),
            Samples::Baseline(s) => vec![s[i].frame_index],
        }
    }

    /// Samples at the given positions, same mode and image size.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        let samples = match &self.samples {
            Samples::Triplet(s) => Samples::Triplet(positions.iter().map(|&p| s[p].clone()).collect()),
            Samples::Baseline(s) => Samples::Baseline(positions.iter().map(|&p| s[p].clone()).collect()),
        };
        Dataset {
            image_size: self.image_size,
            samples,
        }
    }
}

/// Candidate and retained sample counts from one build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildSummary {
    pub candidates: usize,
    pub retained: usize,
}

impl BuildSummary {
    pub fn excluded(&self) -> usize {
        self.candidates - self.retained
    }
}

/// Full pipeline from decoded media to an in-memory dataset: resample to
/// 16 kHz, pair with frames, detect and crop faces, and normalize audio.
pub fn build_dataset(
    frames: &FrameSequence,
    audio: &AudioTrack,
    detector: &dyn FaceDetector,
    mode: DatasetMode,
    image_size: usize,
) -> Result<Dataset> {
    Ok(build_dataset_with_summary(frames, audio, detector, mode, image_size)?.0)
}

/// [`build_dataset`] that also reports how many candidates were dropped.
pub fn build_dataset_with_summary(
    frames: &FrameSequence,
    audio: &AudioTrack,
    detector: &dyn FaceDetector,
    mode: DatasetMode,
    image_size: usize,
) -> Result<(Dataset, BuildSummary)> {
    let audio = resample_audio(audio, TARGET_RATE as i64)?;
    let (ds, candidates) = match mode {
        DatasetMode::Triplet => {
            let groups = make_candidate_pairs(frames, &audio)?;
            let ds = Dataset::triplet(image_size, filter_and_build(&groups, detector, image_size));
            (ds, groups.len())
        }
        DatasetMode::Baseline => {
            let ds = Dataset::baseline(image_size, make_baseline_pairs(frames, &audio, detector, image_size)?);
            (ds, baseline_candidates(frames, &audio)?)
        }
    };
    let summary = BuildSummary {
        candidates,
        retained: ds.len(),
    };
    Ok((ds, summary))
}
