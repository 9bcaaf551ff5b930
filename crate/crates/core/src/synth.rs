//! Synthetic source clips with known ground truth.
//!
//! Two kinds are produced. Watermark clips paint each face box in a colour
//! that encodes the frame index and place a single audio pulse per 0.1 s
//! segment at an offset that encodes the segment index, so alignment can be
//! decoded from a built dataset. Talking-face clips drive a cartoon mouth
//! from the loudness envelope of a voiced carrier, giving data with a
//! learnable audio-to-image relation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{FaceBox, SidecarDetector};
use crate::error::{Error, Result};
use crate::media::{write_avi, PcmAudio};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Watermark,
    TalkingFace,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "watermark" => Ok(SynthKind::Watermark),
            "talking" | "talking_face" => Ok(SynthKind::TalkingFace),
            other => Err(Error::InvalidConfig(format!("unknown clip kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub seconds: f64,
    pub fps: u32,
    pub sample_rate: u32,
    pub channels: u16,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    /// Frames rendered without a face and left out of the annotations.
    pub faceless_frames: Vec<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            kind: SynthKind::TalkingFace,
            seconds: 3.0,
            fps: 30,
            sample_rate: 48_000,
            channels: 2,
            width: 96,
            height: 96,
            seed: 0,
            faceless_frames: vec![],
        }
    }
}

pub struct SynthClip {
    pub frames: Vec<RgbImage>,
    pub audio: PcmAudio,
    pub fps: u32,
    pub annotations: SidecarDetector,
    pub face_boxes: Vec<Option<FaceBox>>,
}

/// Offset, in 16 kHz samples from the start of segment `k`, of the
/// watermark pulse.
pub fn watermark_offset(k: usize) -> usize {
    200 + 40 * (k % 30)
}

/// Colour painted inside the face box of watermark frame `i`.
pub fn watermark_colour(i: usize) -> [u8; 3] {
    let lo = (i % 256) as u8;
    [lo, 255 - lo, (i / 256 % 256) as u8]
}

/// Recovers a frame index from a watermark colour.
pub fn decode_watermark_colour(rgb: [u8; 3]) -> usize {
    rgb[0] as usize + 256 * rgb[2] as usize
}

/// Loudness envelope of the talking-face clip, in `[0, 1]`.
struct Envelope {
    /// (centre seconds, width seconds, height) per syllable.
    syllables: Vec<(f64, f64, f64)>,
}

impl Envelope {
    fn new(seconds: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut syllables = vec![];
        let mut t = rng.random_range(0.0..0.15);
        while t < seconds {
            let width = rng.random_range(0.05..0.14);
            let height = rng.random_range(0.35..1.0);
            syllables.push((t + width, width, height));
            t += 2.0 * width + rng.random_range(0.02..0.2);
        }
        Envelope { syllables }
    }

    fn at(&self, t: f64) -> f64 {
        self.syllables
            .iter()
            .map(|&(c, w, h)| {
                let u = (t - c) / w;
                if u.abs() < 1.0 {
                    h * 0.5 * (1.0 + (PI * u).cos())
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

fn face_box(spec: &SynthSpec, frame: usize) -> FaceBox {
    let side = (spec.width.min(spec.height) as f64 * 0.6).round() as u32;
    let (cx, cy) = (spec.width / 2, spec.height / 2);
    match spec.kind {
        SynthKind::Watermark => FaceBox::new(cx - side / 2, cy - side / 2, side, side),
        SynthKind::TalkingFace => {
            let sway = (2.0 * PI * frame as f64 / 45.0).sin() * spec.width as f64 * 0.03;
            let x = (cx as f64 - side as f64 / 2.0 + sway).round().max(0.0) as u32;
            FaceBox::new(x.min(spec.width - side), cy - side / 2, side, side)
        }
    }
}

fn background(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_fn(spec.width, spec.height, |x, y| {
        let base = 40 + ((x + y) % 16) as u8;
        let n = rng.random_range(0..8u8);
        Rgb([base + n, base / 2 + n, 70 + n])
    })
}

fn fill_ellipse(img: &mut RgbImage, cx: f64, cy: f64, rx: f64, ry: f64, colour: [u8; 3]) {
    if rx <= 0.0 || ry <= 0.0 {
        return;
    }
    let (w, h) = img.dimensions();
    let x0 = (cx - rx).floor().max(0.0) as u32;
    let x1 = ((cx + rx).ceil() as u32).min(w.saturating_sub(1));
    let y0 = (cy - ry).floor().max(0.0) as u32;
    let y1 = ((cy + ry).ceil() as u32).min(h.saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x, y, Rgb(colour));
            }
        }
    }
}

fn draw_face(img: &mut RgbImage, b: FaceBox, opening: f64) {
    let s = b.w as f64;
    let cx = b.x as f64 + s / 2.0;
    let cy = b.y as f64 + b.h as f64 / 2.0;
    fill_ellipse(img, cx, cy, s * 0.45, b.h as f64 * 0.48, [222, 184, 150]);
    for side in [-1.0, 1.0] {
        fill_ellipse(img, cx + side * s * 0.18, cy - s * 0.14, s * 0.07, s * 0.05, [40, 30, 30]);
    }
    fill_ellipse(img, cx, cy + s * 0.22, s * 0.16, s * (0.02 + 0.12 * opening), [120, 20, 30]);
}

/// Renders a clip described by `spec`.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthClip> {
    if spec.fps == 0 || spec.sample_rate == 0 || spec.channels == 0 {
        return Err(Error::InvalidConfig("fps, sample rate and channels must be positive".into()));
    }
    if spec.width < 16 || spec.height < 16 || !(spec.seconds >= 0.0) {
        return Err(Error::InvalidConfig("clip must be at least 16x16 with non-negative length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_frames = (spec.seconds * spec.fps as f64).round() as usize;
    let n_audio = (spec.seconds * spec.sample_rate as f64).round() as usize;
    let rate = spec.sample_rate as f64;
    let envelope = Envelope::new(spec.seconds, &mut rng);

    let mono: Vec<f64> = match spec.kind {
        SynthKind::Watermark => {
            // 0.1 s segments; pulse offsets are defined on the 16 kHz grid.
            let seg = rate * 0.1;
            let sigma = rate / 16_000.0 * 2.0;
            let mut out = vec![0.0; n_audio];
            let segments = (n_audio as f64 / seg).ceil() as usize;
            for k in 0..segments {
                let centre = k as f64 * seg + watermark_offset(k) as f64 * rate / 16_000.0;
                let lo = (centre - 6.0 * sigma).floor().max(0.0) as usize;
                let hi = ((centre + 6.0 * sigma).ceil() as usize).min(n_audio);
                for (i, o) in out.iter_mut().enumerate().take(hi).skip(lo) {
                    let d = (i as f64 - centre) / sigma;
                    *o += 0.8 * (-0.5 * d * d).exp();
                }
            }
            out
        }
        SynthKind::TalkingFace => {
            let mut phase = 0.0;
            (0..n_audio)
                .map(|i| {
                    let t = i as f64 / rate;
                    let pitch = 140.0 + 60.0 * (2.0 * PI * 0.7 * t).sin();
                    phase += 2.0 * PI * pitch / rate;
                    let voiced = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
                    0.5 * envelope.at(t) * voiced + 0.002 * rng.random_range(-1.0..1.0)
                })
                .collect()
        }
    };
    let c = spec.channels as usize;
    let mut samples = Vec::with_capacity(n_audio * c);
    for (i, &m) in mono.iter().enumerate() {
        for ch in 0..c {
            // Channels differ slightly but average back to the mono signal.
            let tilt = if c > 1 { 0.02 * (ch as f64 - (c - 1) as f64 / 2.0) * ((i % 7) as f64 - 3.0) / 3.0 } else { 0.0 };
            samples.push((m + tilt * m.abs()).clamp(-1.0, 1.0) as f32);
        }
    }

    let mut frames = Vec::with_capacity(n_frames);
    let mut annotations = SidecarDetector::new();
    let mut face_boxes = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let mut img = background(spec, &mut rng);
        if spec.faceless_frames.contains(&i) {
            face_boxes.push(None);
        } else {
            let b = face_box(spec, i);
            match spec.kind {
                SynthKind::Watermark => {
                    let colour = watermark_colour(i);
                    for y in b.y..b.y + b.h {
                        for x in b.x..b.x + b.w {
                            img.put_pixel(x, y, Rgb(colour));
                        }
                    }
                }
                SynthKind::TalkingFace => {
                    let t = (i as f64 + 0.5) / spec.fps as f64;
                    draw_face(&mut img, b, envelope.at(t));
                }
            }
            annotations.insert(i, b);
            face_boxes.push(Some(b));
        }
        frames.push(img);
    }
    Ok(SynthClip {
        frames,
        audio: PcmAudio {
            sample_rate: spec.sample_rate,
            channels: spec.channels,
            samples,
        },
        fps: spec.fps,
        annotations,
        face_boxes,
    })
}

impl SynthClip {
    /// Writes `<stem>.avi` and `<stem>.faces.tsv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let video = dir.join(format!("{stem}.avi"));
        let faces = dir.join(format!("{stem}.faces.tsv"));
        write_avi(&video, &self.frames, self.fps, 1, &self.audio)?;
        self.annotations.save(&faces)?;
        Ok((video, faces))
    }
}
