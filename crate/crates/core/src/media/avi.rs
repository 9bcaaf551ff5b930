use std::path::Path;

use image::RgbImage;

use super::riff::{fourcc, i32_at, parse_chunks, u16_at, put_chunk, put_list, u32_at, Chunk};
use super::wav::{decode_samples, format_block, parse_format};
use super::{f32_to_i16, FrameSequence, PcmAudio};
use crate::error::{Error, Result};

struct VideoFormat {
    width: u32,
    height: i32,
    bits: u16,
    fps: f64,
}

struct AudioFormat {
    format: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

enum Stream {
    Video(VideoFormat),
    Audio(AudioFormat),
    Other,
}

fn parse_stream(strl: &[Chunk<'_>]) -> Result<Stream> {
    let strh = strl
        .iter()
        .find(|c| &c.id == b"strh")
        .ok_or_else(|| Error::MalformedMedia("stream without strh".into()))?;
    let strf = strl
        .iter()
        .find(|c| &c.id == b"strf")
        .ok_or_else(|| Error::MalformedMedia("stream without strf".into()))?;
    let kind = &strh.data.get(0..4).unwrap_or(&[]);
    match *kind {
        b"vids" => {
            let scale = u32_at(strh.data, 20)?;
            let rate = u32_at(strh.data, 24)?;
            if scale == 0 || rate == 0 {
                return Err(Error::MalformedMedia("zero video rate".into()));
            }
            let width = i32_at(strf.data, 4)?;
            let height = i32_at(strf.data, 8)?;
            let bits = u16_at(strf.data, 14)?;
            let compression = u32_at(strf.data, 16)?;
            if compression != 0 {
                return Err(Error::UnsupportedMedia(format!(
                    "compressed video ({}); only uncompressed RGB is supported",
                    fourcc(&compression.to_le_bytes())
                )));
            }
            if !(bits == 24 || bits == 32) {
                return Err(Error::UnsupportedMedia(format!("{bits}-bit video")));
            }
            if width <= 0 || height == 0 {
                return Err(Error::MalformedMedia(format!("frame size {width}x{height}")));
            }
            Ok(Stream::Video(VideoFormat {
                width: width as u32,
                height,
                bits,
                fps: rate as f64 / scale as f64,
            }))
        }
        b"auds" => {
            let (format, channels, rate, bits) = parse_format(strf.data)?;
            Ok(Stream::Audio(AudioFormat {
                format,
                channels,
                rate,
                bits,
            }))
        }
        _ => Ok(Stream::Other),
    }
}

fn decode_frame(fmt: &VideoFormat, data: &[u8]) -> Result<RgbImage> {
    let w = fmt.width as usize;
    let h = fmt.height.unsigned_abs() as usize;
    let bpp = fmt.bits as usize / 8;
    let stride = (w * bpp).div_ceil(4) * 4;
    if data.len() < stride * h {
        return Err(Error::MalformedMedia(format!(
            "frame holds {} bytes, expected {}",
            data.len(),
            stride * h
        )));
    }
    let bottom_up = fmt.height > 0;
    let mut img = RgbImage::new(w as u32, h as u32);
    for row in 0..h {
        let src_row = if bottom_up { h - 1 - row } else { row };
        let line = &data[src_row * stride..src_row * stride + w * bpp];
        for x in 0..w {
            let p = &line[x * bpp..x * bpp + 3];
            img.put_pixel(x as u32, row as u32, image::Rgb([p[2], p[1], p[0]]));
        }
    }
    Ok(img)
}

fn flatten_movi<'a>(data: &'a [u8], out: &mut Vec<Chunk<'a>>) -> Result<()> {
    for c in parse_chunks(data)? {
        if &c.id == b"LIST" {
            // `rec ` lists group interleaved chunks.
            if c.data.len() >= 4 {
                flatten_movi(&c.data[4..], out)?;
            }
        } else {
            out.push(c);
        }
    }
    Ok(())
}

/// Decodes an uncompressed AVI into frames and interleaved audio.
pub(crate) fn decode_avi(bytes: &[u8]) -> Result<(FrameSequence, PcmAudio)> {
    let top = parse_chunks(&bytes[12..])?;
    let mut streams = vec![];
    let mut movi_body: Option<&[u8]> = None;
    for c in &top {
        if &c.id != b"LIST" {
            continue;
        }
        let (kind, inner) = c.list()?;
        match &kind {
            b"hdrl" => {
                for s in inner.iter().filter(|s| &s.id == b"LIST") {
                    let (skind, strl) = s.list()?;
                    if &skind == b"strl" {
                        streams.push(parse_stream(&strl)?);
                    }
                }
            }
            b"movi" => movi_body = Some(&c.data[4..]),
            _ => {}
        }
    }

    let video_idx = streams
        .iter()
        .position(|s| matches!(s, Stream::Video(_)))
        .ok_or(Error::MissingVideo)?;
    let audio_idx = streams
        .iter()
        .position(|s| matches!(s, Stream::Audio(_)))
        .ok_or(Error::MissingAudio)?;
    let Stream::Video(vfmt) = &streams[video_idx] else {
        unreachable!()
    };
    let Stream::Audio(afmt) = &streams[audio_idx] else {
        unreachable!()
    };

    let mut flat = vec![];
    flatten_movi(movi_body.ok_or(Error::MissingVideo)?, &mut flat)?;

    let vtag = format!("{video_idx:02}");
    let atag = format!("{audio_idx:02}");
    let mut frames = vec![];
    let mut audio_bytes = vec![];
    for c in &flat {
        let id = fourcc(&c.id);
        let (stream, kind) = id.split_at(2);
        if stream == vtag && (kind == "db" || kind == "dc") {
            if c.data.is_empty() {
                return Err(Error::VariableFrameRate(format!(
                    "dropped-frame marker after frame {}",
                    frames.len()
                )));
            }
            frames.push(decode_frame(vfmt, c.data)?);
        } else if stream == atag && kind == "wb" {
            audio_bytes.extend_from_slice(c.data);
        }
    }
    if frames.is_empty() {
        return Err(Error::MissingVideo);
    }
    if audio_bytes.is_empty() {
        return Err(Error::MissingAudio);
    }
    let audio = PcmAudio {
        sample_rate: afmt.rate,
        channels: afmt.channels,
        samples: decode_samples(afmt.format, afmt.bits, &audio_bytes)?,
    };
    Ok((
        FrameSequence {
            fps: vfmt.fps,
            frames,
        },
        audio,
    ))
}

/// Reads an uncompressed AVI file.
pub fn read_avi(path: &Path) -> Result<(FrameSequence, PcmAudio)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"AVI " {
        return Err(Error::UnsupportedMedia(format!("{} is not an AVI file", path.display())));
    }
    decode_avi(&bytes)
}

fn encode_frame(img: &RgbImage) -> Vec<u8> {
    let (w, h) = img.dimensions();
    let stride = (w as usize * 3).div_ceil(4) * 4;
    let mut out = vec![0u8; stride * h as usize];
    for row in 0..h {
        let dst = (h - 1 - row) as usize * stride;
        for x in 0..w {
            let p = img.get_pixel(x, row).0;
            let o = dst + x as usize * 3;
            out[o..o + 3].copy_from_slice(&[p[2], p[1], p[0]]);
        }
    }
    out
}

fn le32(v: u32) -> [u8; 4] {
    v.to_le_bytes()
}

/// Writes frames and audio as an uncompressed AVI with one audio chunk per
/// video frame. An empty frame list yields a file whose video stream holds no
/// frames. `fps_num / fps_den` is the frame rate.
pub fn write_avi(
    path: &Path,
    frames: &[RgbImage],
    fps_num: u32,
    fps_den: u32,
    audio: &PcmAudio,
) -> Result<()> {
    let (w, h) = frames.first().map(|f| f.dimensions()).unwrap_or((16, 16));
    if frames.iter().any(|f| f.dimensions() != (w, h)) {
        return Err(Error::InvalidConfig("frames differ in size".into()));
    }
    let frame_bytes = (w as usize * 3).div_ceil(4) * 4 * h as usize;
    let channels = audio.channels.max(1) as usize;
    let total_audio_frames = audio.samples.len() / channels;

    let mut avih = Vec::with_capacity(56);
    for v in [
        (1_000_000u64 * fps_den as u64 / fps_num.max(1) as u64) as u32,
        0,
        0,
        0x10, // AVIF_HASINDEX
        frames.len() as u32,
        0,
        2,
        frame_bytes as u32,
        w,
        h,
        0,
        0,
        0,
        0,
    ] {
        avih.extend_from_slice(&le32(v));
    }

    let mut vstrh = Vec::with_capacity(56);
    vstrh.extend_from_slice(b"vids");
    vstrh.extend_from_slice(b"DIB ");
    for v in [0, 0, 0, fps_den, fps_num, 0, frames.len() as u32, frame_bytes as u32, u32::MAX, 0] {
        vstrh.extend_from_slice(&le32(v));
    }
    vstrh.extend_from_slice(&[0u8; 8]);
    let mut vstrf = Vec::with_capacity(40);
    vstrf.extend_from_slice(&le32(40));
    vstrf.extend_from_slice(&le32(w));
    vstrf.extend_from_slice(&(h as i32).to_le_bytes());
    vstrf.extend_from_slice(&1u16.to_le_bytes());
    vstrf.extend_from_slice(&24u16.to_le_bytes());
    for v in [0, frame_bytes as u32, 0, 0, 0, 0] {
        vstrf.extend_from_slice(&le32(v));
    }

    let block = channels as u32 * 2;
    let mut astrh = Vec::with_capacity(56);
    astrh.extend_from_slice(b"auds");
    astrh.extend_from_slice(&[0u8; 4]);
    for v in [
        0,
        0,
        0,
        1,
        audio.sample_rate,
        0,
        total_audio_frames as u32,
        audio.sample_rate * block,
        u32::MAX,
        block,
    ] {
        astrh.extend_from_slice(&le32(v));
    }
    astrh.extend_from_slice(&[0u8; 8]);
    let astrf = format_block(channels as u16, audio.sample_rate);

    let mut strl_v = vec![];
    put_chunk(&mut strl_v, b"strh", &vstrh);
    put_chunk(&mut strl_v, b"strf", &vstrf);
    let mut strl_a = vec![];
    put_chunk(&mut strl_a, b"strh", &astrh);
    put_chunk(&mut strl_a, b"strf", &astrf);
    let mut hdrl = vec![];
    put_chunk(&mut hdrl, b"avih", &avih);
    put_list(&mut hdrl, b"LIST", b"strl", &strl_v);
    put_list(&mut hdrl, b"LIST", b"strl", &strl_a);

    // Split audio so that chunk i covers the audio of frame i; any leftover
    // goes into a final chunk.
    let mut movi = vec![];
    let mut idx1 = vec![];
    let mut push = |movi: &mut Vec<u8>, id: &[u8; 4], body: &[u8], key: bool| {
        let offset = movi.len() as u32 + 4;
        put_chunk(movi, id, body);
        idx1.extend_from_slice(id);
        idx1.extend_from_slice(&le32(if key { 0x10 } else { 0 }));
        idx1.extend_from_slice(&le32(offset));
        idx1.extend_from_slice(&le32(body.len() as u32));
    };
    let mut audio_cursor = 0usize;
    let pcm_of = |from: usize, to: usize| -> Vec<u8> {
        audio.samples[from * channels..to * channels]
            .iter()
            .flat_map(|&s| f32_to_i16(s).to_le_bytes())
            .collect()
    };
    for (i, f) in frames.iter().enumerate() {
        push(&mut movi, b"00db", &encode_frame(f), true);
        let end = ((i as u64 + 1) * audio.sample_rate as u64 * fps_den as u64 / fps_num.max(1) as u64)
            .min(total_audio_frames as u64) as usize;
        if end > audio_cursor {
            push(&mut movi, b"01wb", &pcm_of(audio_cursor, end), false);
            audio_cursor = end;
        }
    }
    if audio_cursor < total_audio_frames {
        push(&mut movi, b"01wb", &pcm_of(audio_cursor, total_audio_frames), false);
    }

    let mut body = vec![];
    body.extend_from_slice(b"AVI ");
    put_list(&mut body, b"LIST", b"hdrl", &hdrl);
    put_list(&mut body, b"LIST", b"movi", &movi);
    put_chunk(&mut body, b"idx1", &idx1);
    let mut out = Vec::with_capacity(body.len() + 8);
    put_chunk(&mut out, b"RIFF", &body);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a 30 fps AVI with a zero-length frame chunk inserted before frame
/// `drop_after`, the marker some encoders emit for a dropped frame.
pub fn write_avi_with_drop(
    path: &Path,
    frames: &[RgbImage],
    drop_after: usize,
    audio: &PcmAudio,
) -> Result<()> {
    write_avi(path, frames, 30, 1, audio)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h) = frames[0].dimensions();
    let frame_bytes = (w as usize * 3).div_ceil(4) * 4 * h as usize;
    // Locate the frame chunk after `drop_after` and splice an empty one in front.
    let mut pos = 12;
    let mut seen = 0usize;
    let needle = b"00db";
    let mut insert_at = None;
    while pos + 8 <= bytes.len() {
        if &bytes[pos..pos + 4] == needle
            && u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize == frame_bytes
        {
            if seen == drop_after {
                insert_at = Some(pos);
                break;
            }
            seen += 1;
            pos += 8 + frame_bytes + (frame_bytes & 1);
        } else {
            pos += 1;
        }
    }
    let at = insert_at.ok_or_else(|| Error::InvalidConfig("drop index out of range".into()))?;
    let mut out = bytes[..at].to_vec();
    out.extend_from_slice(b"00db");
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&bytes[at..]);
    fix_sizes(&mut out, at, 8);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Grows the RIFF and enclosing movi LIST sizes by `extra` bytes.
fn fix_sizes(bytes: &mut [u8], insert_at: usize, extra: u32) {
    let bump = |b: &mut [u8], off: usize| {
        let v = u32::from_le_bytes(b[off..off + 4].try_into().unwrap()) + extra;
        b[off..off + 4].copy_from_slice(&v.to_le_bytes());
    };
    bump(bytes, 4);
    let movi = bytes
        .windows(4)
        .position(|w| w == b"movi")
        .expect("movi list present");
    if movi < insert_at {
        bump(bytes, movi - 4);
    }
}
