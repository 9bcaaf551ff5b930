use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};

/// Axis-aligned face rectangle in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl FaceBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        FaceBox { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Intersects the box with a `width`×`height` frame; `None` if empty.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<FaceBox> {
        let x1 = self.x.saturating_add(self.w).min(width);
        let y1 = self.y.saturating_add(self.h).min(height);
        (self.x < x1 && self.y < y1).then(|| FaceBox::new(self.x, self.y, x1 - self.x, y1 - self.y))
    }
}

/// Locates faces in a frame.
pub trait FaceDetector: Sync {
    fn detect(&self, frame_index: usize, frame: &RgbImage) -> Vec<FaceBox>;
}

/// Detector backed by precomputed per-frame annotations.
///
/// The sidecar is a text file with one `frame<TAB>x<TAB>y<TAB>w<TAB>h` line per
/// box; a frame may have several lines or none. Blank lines and lines starting
/// with `#` are ignored.
#[derive(Debug, Clone, Default)]
pub struct SidecarDetector {
    boxes: BTreeMap<usize, Vec<FaceBox>>,
}

impl SidecarDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_boxes(boxes: impl IntoIterator<Item = (usize, FaceBox)>) -> Self {
        let mut d = Self::new();
        for (frame, b) in boxes {
            d.insert(frame, b);
        }
        d
    }

    pub fn insert(&mut self, frame: usize, b: FaceBox) {
        self.boxes.entry(frame).or_default().push(b);
    }

    pub fn remove_frame(&mut self, frame: usize) {
        self.boxes.remove(&frame);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut d = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed: Option<Vec<u64>> = fields.iter().map(|f| f.parse().ok()).collect();
            match parsed.as_deref() {
                Some(&[frame, x, y, w, h]) if w > 0 && h > 0 && w <= u32::MAX as u64 && h <= u32::MAX as u64 => {
                    d.insert(frame as usize, FaceBox::new(x as u32, y as u32, w as u32, h as u32))
                }
                _ => {
                    return Err(Error::Detector(format!(
                        "annotation line {}: expected `frame x y w h` with positive size, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(d)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# frame\tx\ty\tw\th\n");
        for (frame, boxes) in &self.boxes {
            for b in boxes {
                s.push_str(&format!("{frame}\t{}\t{}\t{}\t{}\n", b.x, b.y, b.w, b.h));
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl FaceDetector for SidecarDetector {
    fn detect(&self, frame_index: usize, _frame: &RgbImage) -> Vec<FaceBox> {
        self.boxes.get(&frame_index).cloned().unwrap_or_default()
    }
}

/// Picks the box to crop: largest area after clipping to the frame, ties
/// going to the topmost and then leftmost box.
pub fn select_face(boxes: &[FaceBox], width: u32, height: u32) -> Option<FaceBox> {
    boxes
        .iter()
        .filter_map(|b| b.clip_to(width, height))
        .min_by_key(|b| (std::cmp::Reverse(b.area()), b.y, b.x))
}
