use std::io::Cursor;
use std::path::{Component, Path, PathBuf};

use sha2::{Digest, Sha256};

use super::crop::{frame_to_image, image_to_frame};
use super::{BaselinePair, Dataset, DatasetMode, PairedSample, Samples, TARGET_RATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const FORMAT_TAG: &str = "tavg-dataset\t1";
const COLUMNS: &str = "index\taudio\tframes\tsource_frames\tsha256";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub audio: String,
    pub frames: Vec<String>,
    pub source_frames: Vec<usize>,
    /// SHA-256 of the audio file bytes followed by each frame file's bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub mode: DatasetMode,
    pub sample_count: usize,
    pub source_id: String,
    pub image_size: usize,
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "#{FORMAT_TAG}\nmode\t{}\nsource_id\t{}\nimage_size\t{}\nsample_rate\t{}\nsample_count\t{}\n{COLUMNS}\n",
            self.mode, self.source_id, self.image_size, self.sample_rate, self.sample_count
        );
        for e in &self.entries {
            let sources: Vec<String> = e.source_frames.iter().map(|f| f.to_string()).collect();
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.index,
                e.audio,
                e.frames.join(","),
                sources.join(","),
                e.sha256
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let corrupt = |m: String| Error::CorruptManifest(m);
        let mut lines = text.lines();
        if lines.next().map(|l| l.trim_start_matches('#')) != Some(FORMAT_TAG) {
            return Err(corrupt("missing format header".into()));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| corrupt(format!("missing {key}")))?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(corrupt(format!("expected {key}, found {line:?}"))),
            }
        };
        let mode: DatasetMode = field("mode")?
            .parse()
            .map_err(|_| corrupt("bad mode".into()))?;
        let source_id = field("source_id")?;
        let num = |v: String, key: &str| -> Result<usize> {
            v.parse().map_err(|_| corrupt(format!("bad {key} {v:?}")))
        };
        let image_size = num(field("image_size")?, "image_size")?;
        let sample_rate = num(field("sample_rate")?, "sample_rate")? as u32;
        let sample_count = num(field("sample_count")?, "sample_count")?;
        if lines.next() != Some(COLUMNS) {
            return Err(corrupt("missing column header".into()));
        }
        let mut entries = vec![];
        for line in lines.filter(|l| !l.is_empty()) {
            let cols: Vec<&str> = line.split('\t').collect();
            let [index, audio, frames, sources, sha] = cols[..] else {
                return Err(corrupt(format!("expected 5 columns in {line:?}")));
            };
            let frames: Vec<String> = frames.split(',').map(str::to_string).collect();
            let source_frames = sources
                .split(',')
                .map(|s| s.parse().map_err(|_| corrupt(format!("bad source frame {s:?}"))))
                .collect::<Result<Vec<usize>>>()?;
            if frames.len() != mode.frames_per_sample() || source_frames.len() != frames.len() {
                return Err(corrupt(format!("wrong frame count in {line:?}")));
            }
            entries.push(ManifestEntry {
                index: num(index.to_string(), "index")?,
                audio: audio.to_string(),
                frames,
                source_frames,
                sha256: sha.to_string(),
            });
        }
        if entries.len() != sample_count {
            return Err(corrupt(format!(
                "sample_count {sample_count} but {} entries",
                entries.len()
            )));
        }
        Ok(DatasetManifest {
            mode,
            sample_count,
            source_id,
            image_size,
            sample_rate,
            entries,
        })
    }
}

fn encode_png(frame: &Tensor) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    frame_to_image(frame)
        .write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

fn audio_bytes(audio: &[f32]) -> Vec<u8> {
    audio.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.tsv`, `audio/<index>.f32` and `frames/<index>_<t>.png`.
pub fn write_dataset(dataset: &Dataset, source_id: &str, out_dir: &Path) -> Result<DatasetManifest> {
    if source_id.contains(['\t', '\n']) {
        return Err(Error::InvalidConfig("source id must not contain tabs or newlines".into()));
    }
    for sub in ["audio", "frames"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let index = dataset.index(i);
        let audio_rel = format!("audio/{index}.f32");
        let audio = audio_bytes(dataset.audio(i));
        let mut hasher = Sha256::new();
        hasher.update(&audio);
        write_file(&out_dir.join(&audio_rel), &audio)?;
        let mut frames = vec![];
        for (t, frame) in dataset.frames(i).iter().enumerate() {
            if frame.shape() != [3, dataset.image_size, dataset.image_size] {
                return Err(Error::shape(&[3, dataset.image_size, dataset.image_size], frame.shape()));
            }
            let rel = format!("frames/{index}_{t}.png");
            let png = encode_png(frame)?;
            hasher.update(&png);
            write_file(&out_dir.join(&rel), &png)?;
            frames.push(rel);
        }
        entries.push(ManifestEntry {
            index,
            audio: audio_rel,
            frames,
            source_frames: dataset.source_frames(i),
            sha256: hex::encode(hasher.finalize()),
        });
    }
    let manifest = DatasetManifest {
        mode: dataset.mode(),
        sample_count: entries.len(),
        source_id: source_id.to_string(),
        image_size: dataset.image_size,
        sample_rate: TARGET_RATE,
        entries,
    };
    write_file(&out_dir.join(MANIFEST_FILE), manifest.to_tsv().as_bytes())?;
    Ok(manifest)
}

fn resolve(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if rel.is_empty() || p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(Error::CorruptManifest(format!("file reference {rel:?} leaves the dataset")));
    }
    Ok(dir.join(p))
}

fn read_file(path: PathBuf) -> Result<Vec<u8>> {
    match std::fs::read(&path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path)),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Reads a dataset, verifying every referenced file and checksum.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Dataset)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = String::from_utf8(read_file(manifest_path)?)
        .map_err(|_| Error::CorruptManifest("manifest is not UTF-8".into()))?;
    let manifest = DatasetManifest::parse(&text)?;
    let size = manifest.image_size;
    let mode = manifest.mode;
    let mut triplets = vec![];
    let mut pairs = vec![];
    for e in &manifest.entries {
        let audio_raw = read_file(resolve(dir, &e.audio)?)?;
        let mut hasher = Sha256::new();
        hasher.update(&audio_raw);
        let mut frames = vec![];
        for rel in &e.frames {
            let png = read_file(resolve(dir, rel)?)?;
            hasher.update(&png);
            frames.push(png);
        }
        if hex::encode(hasher.finalize()) != e.sha256 {
            return Err(Error::ChecksumMismatch {
                index: e.index,
                file: e.audio.clone(),
            });
        }
        if audio_raw.len() != 4 * mode.audio_len() {
            return Err(Error::CorruptManifest(format!(
                "{} holds {} bytes, expected {}",
                e.audio,
                audio_raw.len(),
                4 * mode.audio_len()
            )));
        }
        let audio: Vec<f32> = audio_raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut tensors = vec![];
        for (png, rel) in frames.iter().zip(&e.frames) {
            let img = image::load_from_memory_with_format(png, image::ImageFormat::Png)
                .map_err(|err| Error::Image(format!("{rel}: {err}")))?
                .to_rgb8();
            if img.dimensions() != (size as u32, size as u32) {
                return Err(Error::CorruptManifest(format!(
                    "{rel} is {:?}, expected {size}x{size}",
                    img.dimensions()
                )));
            }
            tensors.push(image_to_frame(&img));
        }
        match mode {
            DatasetMode::Triplet => triplets.push(PairedSample {
                index: e.index,
                audio,
                frames: tensors,
            }),
            DatasetMode::Baseline => pairs.push(BaselinePair {
                index: e.index,
                frame_index: e.source_frames[0],
                audio,
                frame: tensors.pop().expect("one frame"),
            }),
        }
    }
    let samples = match mode {
        DatasetMode::Triplet => Samples::Triplet(triplets),
        DatasetMode::Baseline => Samples::Baseline(pairs),
    };
    Ok((
        manifest,
        Dataset {
            image_size: size,
            samples,
        },
    ))
}
