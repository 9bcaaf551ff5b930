use image::RgbImage;

use super::detect::{select_face, FaceBox, FaceDetector};
use crate::tensor::Tensor;

/// Maps an 8-bit level to `[-1, 1]`.
pub fn level_to_unit(q: u8) -> f64 {
    q as f64 / 127.5 - 1.0
}

/// Maps a value in `[-1, 1]` to the nearest 8-bit level, clamping outside values.
pub fn unit_to_level(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// `[3, H, W]` tensor in `[-1, 1]` from an RGB image.
pub fn image_to_frame(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * w * h + y as usize * w + x as usize] = level_to_unit(p[c]);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("sized above")
}

/// RGB image from a `[3, H, W]` tensor, quantized to 8 bits.
pub fn frame_to_image(frame: &Tensor) -> RgbImage {
    let (h, w) = (frame.dim(1), frame.dim(2));
    let d = frame.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| unit_to_level(d[c * w * h + y as usize * w + x as usize]);
        image::Rgb([at(0), at(1), at(2)])
    })
}

/// Resamples the boxed region to `out_size`×`out_size` with bilinear
/// interpolation at pixel centres, rounding to 8-bit levels.
pub fn crop_box(frame: &RgbImage, face: FaceBox, out_size: usize) -> RgbImage {
    let sx = face.w as f64 / out_size as f64;
    let sy = face.h as f64 / out_size as f64;
    let coord = |origin: u32, extent: u32, scale: f64, i: usize| {
        let p = (origin as f64 + (i as f64 + 0.5) * scale - 0.5)
            .clamp(origin as f64, (origin + extent - 1) as f64);
        let p0 = p.floor() as u32;
        let p1 = (p0 + 1).min(origin + extent - 1);
        (p0, p1, p - p0 as f64)
    };
    RgbImage::from_fn(out_size as u32, out_size as u32, |u, v| {
        let (x0, x1, tx) = coord(face.x, face.w, sx, u as usize);
        let (y0, y1, ty) = coord(face.y, face.h, sy, v as usize);
        let px = |x, y, c: usize| frame.get_pixel(x, y)[c] as f64;
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = px(x0, y0, c) * (1.0 - tx) + px(x1, y0, c) * tx;
            let bot = px(x0, y1, c) * (1.0 - tx) + px(x1, y1, c) * tx;
            *o = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(out)
    })
}

/// Crops the largest detected face to a `[3, out_size, out_size]` tensor in
/// `[-1, 1]`, or `None` when no face is found.
pub fn detect_and_crop(
    frame_index: usize,
    frame: &RgbImage,
    detector: &dyn FaceDetector,
    out_size: usize,
) -> Option<Tensor> {
    let boxes = detector.detect(frame_index, frame);
    let face = select_face(&boxes, frame.width(), frame.height())?;
    Some(image_to_frame(&crop_box(frame, face, out_size)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_mapping_round_trips() {
        for q in 0..=255u8 {
            assert_eq!(unit_to_level(level_to_unit(q)), q);
        }
        assert_eq!(level_to_unit(0), -1.0);
        assert_eq!(level_to_unit(255), 1.0);
        assert_eq!(unit_to_level(3.0), 255);
    }

    #[test]
    fn identity_crop_is_exact() {
        let img = RgbImage::from_fn(8, 8, |x, y| image::Rgb([x as u8 * 30, y as u8 * 30, 7]));
        let out = crop_box(&img, FaceBox::new(0, 0, 8, 8), 8);
        assert_eq!(out, img);
    }

    #[test]
    fn upscaled_constant_stays_constant() {
        let img = RgbImage::from_pixel(10, 10, image::Rgb([10, 200, 99]));
        let out = crop_box(&img, FaceBox::new(2, 3, 4, 5), 16);
        assert!(out.pixels().all(|p| p.0 == [10, 200, 99]));
    }
}
