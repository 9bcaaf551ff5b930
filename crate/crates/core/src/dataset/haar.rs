use std::path::Path;

use image::RgbImage;

use super::detect::{FaceBox, FaceDetector};
use super::xml::{self, Element};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct WeightedRect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    weight: f64,
}

#[derive(Debug, Clone)]
struct Node {
    feature: usize,
    threshold: f64,
    left: i64,
    right: i64,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    leaves: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Stage {
    threshold: f64,
    trees: Vec<Tree>,
}

/// Boosted Haar-feature cascade in the OpenCV XML model format, run as a
/// sliding-window detector over an image pyramid.
#[derive(Debug, Clone)]
pub struct HaarCascade {
    width: usize,
    height: usize,
    stages: Vec<Stage>,
    features: Vec<Vec<WeightedRect>>,
    pub scale_factor: f64,
    pub min_neighbors: usize,
}

fn numbers(el: &Element) -> Result<Vec<f64>> {
    el.text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Detector(format!("bad number {t:?} in <{}>", el.name)))
        })
        .collect()
}

fn scalar(el: &Element, name: &str) -> Result<f64> {
    numbers(el.require(name)?)?
        .first()
        .copied()
        .ok_or_else(|| Error::Detector(format!("empty <{name}>")))
}

impl HaarCascade {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let root = xml::parse(text)?;
        let cascade = root
            .find("cascade")
            .ok_or_else(|| Error::Detector("no <cascade> element; only the stage-based model format is supported".into()))?;
        if let Some(ft) = cascade.child("featureType") {
            if ft.text.trim() != "HAAR" {
                return Err(Error::Detector(format!("unsupported feature type {}", ft.text.trim())));
            }
        }
        let width = scalar(cascade, "width")? as usize;
        let height = scalar(cascade, "height")? as usize;
        if width < 3 || height < 3 {
            return Err(Error::Detector("window must be at least 3x3".into()));
        }

        let mut features = vec![];
        for f in &cascade.require("features")?.children {
            if let Some(t) = f.child("tilted") {
                if t.text.trim() != "0" {
                    return Err(Error::Detector("tilted features are not supported".into()));
                }
            }
            let mut rects = vec![];
            for r in &f.require("rects")?.children {
                let v = numbers(r)?;
                let [x, y, w, h, weight] = v[..] else {
                    return Err(Error::Detector(format!("rect needs 5 numbers, got {}", v.len())));
                };
                if x < 0.0 || y < 0.0 || x + w > width as f64 || y + h > height as f64 {
                    return Err(Error::Detector("feature rect outside window".into()));
                }
                rects.push(WeightedRect {
                    x: x as usize,
                    y: y as usize,
                    w: w as usize,
                    h: h as usize,
                    weight,
                });
            }
            features.push(rects);
        }

        let mut stages = vec![];
        for s in &cascade.require("stages")?.children {
            let threshold = scalar(s, "stageThreshold")?;
            let mut trees = vec![];
            for wc in &s.require("weakClassifiers")?.children {
                let raw = numbers(wc.require("internalNodes")?)?;
                if raw.is_empty() || raw.len() % 4 != 0 {
                    return Err(Error::Detector("internalNodes must hold groups of 4".into()));
                }
                let nodes: Vec<Node> = raw
                    .chunks_exact(4)
                    .map(|c| Node {
                        left: c[0] as i64,
                        right: c[1] as i64,
                        feature: c[2] as usize,
                        threshold: c[3],
                    })
                    .collect();
                let leaves = numbers(wc.require("leafValues")?)?;
                for n in &nodes {
                    if n.feature >= features.len() {
                        return Err(Error::Detector(format!("feature index {} out of range", n.feature)));
                    }
                    for child in [n.left, n.right] {
                        let ok = if child > 0 {
                            (child as usize) < nodes.len()
                        } else {
                            ((-child) as usize) < leaves.len()
                        };
                        if !ok {
                            return Err(Error::Detector("tree node points outside the tree".into()));
                        }
                    }
                }
                trees.push(Tree { nodes, leaves });
            }
            stages.push(Stage { threshold, trees });
        }
        if stages.is_empty() {
            return Err(Error::Detector("cascade has no stages".into()));
        }
        Ok(HaarCascade {
            width,
            height,
            stages,
            features,
            scale_factor: 1.1,
            min_neighbors: 3,
        })
    }

    fn passes(&self, ii: &Integral, x: usize, y: usize) -> bool {
        let (w, h) = (self.width, self.height);
        let area = ((w - 2) * (h - 2)) as f64;
        let s = ii.sum(x + 1, y + 1, w - 2, h - 2);
        let sq = ii.sq_sum(x + 1, y + 1, w - 2, h - 2);
        let nf = area * sq - s * s;
        let norm = if nf > 0.0 { nf.sqrt() } else { 1.0 };
        for stage in &self.stages {
            let mut total = 0.0;
            for tree in &stage.trees {
                let mut idx = 0i64;
                loop {
                    let node = &tree.nodes[idx as usize];
                    let value: f64 = self.features[node.feature]
                        .iter()
                        .map(|r| r.weight * ii.sum(x + r.x, y + r.y, r.w, r.h))
                        .sum::<f64>()
                        / norm;
                    idx = if value < node.threshold { node.left } else { node.right };
                    if idx <= 0 {
                        break;
                    }
                }
                total += tree.leaves[(-idx) as usize];
            }
            if total < stage.threshold {
                return false;
            }
        }
        true
    }

    /// Raw window hits over the pyramid, before grouping.
    pub fn raw_detections(&self, frame: &RgbImage) -> Vec<FaceBox> {
        let gray = grayscale(frame);
        let (fw, fh) = (frame.width() as usize, frame.height() as usize);
        let mut hits = vec![];
        let mut factor = 1.0f64;
        loop {
            let sw = (fw as f64 / factor).round() as usize;
            let sh = (fh as f64 / factor).round() as usize;
            if sw < self.width || sh < self.height {
                break;
            }
            let scaled = resize_gray(&gray, fw, fh, sw, sh);
            let ii = Integral::new(&scaled, sw, sh);
            let step = if factor > 2.0 { 1 } else { 2 };
            for y in (0..=sh - self.height).step_by(step) {
                for x in (0..=sw - self.width).step_by(step) {
                    if self.passes(&ii, x, y) {
                        hits.push(FaceBox::new(
                            (x as f64 * factor).round() as u32,
                            (y as f64 * factor).round() as u32,
                            (self.width as f64 * factor).round() as u32,
                            (self.height as f64 * factor).round() as u32,
                        ));
                    }
                }
            }
            factor *= self.scale_factor;
        }
        hits
    }
}

impl FaceDetector for HaarCascade {
    fn detect(&self, _frame_index: usize, frame: &RgbImage) -> Vec<FaceBox> {
        group_rectangles(&self.raw_detections(frame), self.min_neighbors, 0.2)
    }
}

fn grayscale(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round())
        .collect()
}

/// Bilinear downscale with half-pixel centres.
fn resize_gray(src: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    if nw == w && nh == h {
        return src.to_vec();
    }
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let mut out = Vec::with_capacity(nw * nh);
    for j in 0..nh {
        let fy = ((j as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for i in 0..nw {
            let fx = ((i as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

struct Integral {
    stride: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(px: &[f64], w: usize, h: usize) -> Self {
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let (mut row, mut row_sq) = (0.0, 0.0);
            for x in 0..w {
                let v = px[y * w + x];
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Integral { stride, sum, sq }
    }

    fn rect(table: &[f64], stride: usize, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let a = table[y * stride + x];
        let b = table[y * stride + x + w];
        let c = table[(y + h) * stride + x];
        let d = table[(y + h) * stride + x + w];
        d - b - c + a
    }

    fn sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        Self::rect(&self.sum, self.stride, x, y, w, h)
    }

    fn sq_sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        Self::rect(&self.sq, self.stride, x, y, w, h)
    }
}

fn similar(a: &FaceBox, b: &FaceBox, eps: f64) -> bool {
    let delta = eps * (a.w.min(b.w) as f64 + a.h.min(b.h) as f64) * 0.5;
    let d = |p: u32, q: u32| (p as f64 - q as f64).abs() <= delta;
    d(a.x, b.x) && d(a.y, b.y) && d(a.x + a.w, b.x + b.w) && d(a.y + a.h, b.y + b.h)
}

/// Merges overlapping raw hits. Clusters with no more than `min_neighbors`
/// members are discarded, and clusters nested inside a stronger one are
/// suppressed. With `min_neighbors == 0` raw hits are returned unchanged.
pub fn group_rectangles(rects: &[FaceBox], min_neighbors: usize, eps: f64) -> Vec<FaceBox> {
    if min_neighbors == 0 {
        return rects.to_vec();
    }
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if similar(&rects[i], &rects[j], eps) {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: std::collections::BTreeMap<usize, (usize, [u64; 4])> = Default::default();
    for (i, r) in rects.iter().enumerate() {
        let e = clusters.entry(root(&mut parent, i)).or_insert((0, [0; 4]));
        e.0 += 1;
        for (acc, v) in e.1.iter_mut().zip([r.x, r.y, r.w, r.h]) {
            *acc += v as u64;
        }
    }
    let merged: Vec<(usize, FaceBox)> = clusters
        .into_values()
        .filter(|(count, _)| *count > min_neighbors)
        .map(|(count, s)| {
            let avg = |v: u64| (v as f64 / count as f64).round() as u32;
            (count, FaceBox::new(avg(s[0]), avg(s[1]), avg(s[2]), avg(s[3])))
        })
        .collect();
    merged
        .iter()
        .enumerate()
        .filter(|(i, (n1, r1))| {
            !merged.iter().enumerate().any(|(j, (n2, r2))| {
                if *i == j || !(*n2 > (*n1).max(3) || *n1 < 3) {
                    return false;
                }
                let dx = (r2.w as f64 * eps).round() as i64;
                let dy = (r2.h as f64 * eps).round() as i64;
                let (x1, y1, w1, h1) = (r1.x as i64, r1.y as i64, r1.w as i64, r1.h as i64);
                let (x2, y2, w2, h2) = (r2.x as i64, r2.y as i64, r2.w as i64, r2.h as i64);
                r1 != r2
                    && x1 >= x2 - dx
                    && y1 >= y2 - dy
                    && x1 + w1 <= x2 + w2 + dx
                    && y1 + h1 <= y2 + h2 + dy
            })
        })
        .map(|(_, (_, r))| *r)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-stage model firing on a bright 6x6 patch centred in a 12x12 window.
    const PATCH_MODEL: &str = r#"<?xml version="1.0"?>
<opencv_storage>
<cascade type_id="opencv-cascade-classifier">
  <stageType>BOOST</stageType>
  <featureType>HAAR</featureType>
  <height>12</height>
  <width>12</width>
  <stageNum>1</stageNum>
  <stages>
    <_>
      <maxWeakCount>1</maxWeakCount>
      <stageThreshold>0.</stageThreshold>
      <weakClassifiers>
        <_>
          <internalNodes>0 -1 0 5.0e-01</internalNodes>
          <leafValues>-1. 1.</leafValues></_></weakClassifiers></_></stages>
  <features>
    <_>
      <rects>
        <_>3 3 6 6 2.</_>
        <_>0 0 12 12 -1.</_></rects>
      <tilted>0</tilted></_></features>
</cascade>
</opencv_storage>
"#;

    fn patch_image(px: u32, py: u32) -> RgbImage {
        RgbImage::from_fn(48, 48, |x, y| {
            if (px..px + 6).contains(&x) && (py..py + 6).contains(&y) {
                image::Rgb([255, 255, 255])
            } else {
                image::Rgb([0, 0, 0])
            }
        })
    }

    #[test]
    fn finds_patch_at_exact_window() {
        let mut c = HaarCascade::parse(PATCH_MODEL).unwrap();
        c.min_neighbors = 0;
        let hits = c.detect(0, &patch_image(21, 21));
        assert!(hits.contains(&FaceBox::new(18, 18, 12, 12)), "{hits:?}");
        assert!(c.detect(0, &RgbImage::new(48, 48)).is_empty());
    }

    #[test]
    fn rejects_unsupported_models() {
        assert!(HaarCascade::parse("<opencv_storage></opencv_storage>").is_err());
        let tilted = PATCH_MODEL.replace("<tilted>0</tilted>", "<tilted>1</tilted>");
        assert!(HaarCascade::parse(&tilted).is_err());
        let lbp = PATCH_MODEL.replace("<featureType>HAAR", "<featureType>LBP");
        assert!(HaarCascade::parse(&lbp).is_err());
    }

    #[test]
    fn grouping_merges_neighbours() {
        let rects = vec![
            FaceBox::new(10, 10, 20, 20),
            FaceBox::new(11, 10, 20, 20),
            FaceBox::new(10, 11, 20, 20),
            FaceBox::new(12, 12, 20, 20),
            FaceBox::new(100, 100, 20, 20),
        ];
        let g = group_rectangles(&rects, 3, 0.2);
        assert_eq!(g, vec![FaceBox::new(11, 11, 20, 20)]);
        assert_eq!(group_rectangles(&rects, 4, 0.2), vec![]);
    }
}
