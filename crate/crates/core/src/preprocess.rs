//! Image decoding and conversion to network input tensors.

use std::io::Cursor;
use std::path::Path;

use image::{ImageReader, Limits, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_taps, PixelNorm, Tensor};

/// Largest accepted width or height in pixels.
pub const MAX_IMAGE_SIDE: u32 = 16_384;

/// Decodes JPEG or PNG bytes to 8-bit RGB. Grayscale and alpha inputs are
/// converted (gray replicated to all three channels, alpha dropped).
pub fn decode_rgb(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let mut reader = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let mut limits = Limits::default();
    limits.max_image_width = Some(MAX_IMAGE_SIDE);
    limits.max_image_height = Some(MAX_IMAGE_SIDE);
    reader.limits(limits);
    let image = reader.decode().map_err(|e| e.to_string())?;
    Ok(image.to_rgb8())
}

/// Resizes an RGB image to `out_h x out_w` and normalizes it into a
/// `[1, out_h, out_w, 3]` tensor.
///
/// Same arithmetic as [`crate::tensor::resize_bilinear`] followed by
/// [`crate::tensor::normalize_pixels`], but reads the 8-bit buffer directly
/// so large photos are never widened to f64 as a whole.
pub fn rgb_to_tensor(image: &RgbImage, out_h: usize, out_w: usize, norm: PixelNorm) -> Result<Tensor> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("image has no pixels"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let raw = image.as_raw();
    let at = |y: usize, x: usize, ch: usize| f64::from(raw[(y * w + x) * 3 + ch]);
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    if (out_h, out_w) == (h, w) {
        out.extend(raw.iter().map(|&v| norm.apply(f64::from(v))));
    } else {
        let rows = bilinear_taps(h, out_h);
        let cols = bilinear_taps(w, out_w);
        for ty in &rows {
            for tx in &cols {
                for ch in 0..3 {
                    let top = at(ty.lo, tx.lo, ch) * (1.0 - tx.frac) + at(ty.lo, tx.hi, ch) * tx.frac;
                    let bottom = at(ty.hi, tx.lo, ch) * (1.0 - tx.frac) + at(ty.hi, tx.hi, ch) * tx.frac;
                    out.push(norm.apply(top * (1.0 - ty.frac) + bottom * ty.frac));
                }
            }
        }
    }
    Tensor::new(vec![1, out_h, out_w, 3], out)
}

/// Decodes image bytes into a normalized network input. `source` names the
/// origin in error messages.
pub fn prepare_image(bytes: &[u8], out_h: usize, out_w: usize, source: &Path) -> Result<Tensor> {
    let rgb = decode_rgb(bytes).map_err(|message| Error::Decode {
        path: source.to_path_buf(),
        message,
    })?;
    rgb_to_tensor(&rgb, out_h, out_w, PixelNorm::Symmetric)
}

/// Reads and prepares one image file at a square `target` size.
pub fn load_training_image(path: &Path, target: usize) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    prepare_image(&bytes, target, target, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{normalize_pixels, resize_bilinear};
    use image::{GrayImage, ImageFormat, Luma, Rgb};

    fn encode(img: &image::DynamicImage, format: ImageFormat) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, format).unwrap();
        buf.into_inner()
    }

    fn patterned(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn matches_tensor_resize_then_normalize() {
        let img = patterned(23, 17);
        let raw: Vec<f64> = img.as_raw().iter().map(|&v| f64::from(v)).collect();
        let t = Tensor::new(vec![1, 17, 23, 3], raw).unwrap();
        for (oh, ow) in [(8, 8), (17, 23), (40, 5)] {
            let want = normalize_pixels(&resize_bilinear(&t, oh, ow).unwrap(), PixelNorm::Symmetric).unwrap();
            let got = rgb_to_tensor(&img, oh, ow, PixelNorm::Symmetric).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn same_size_png_is_not_resampled() {
        let img = patterned(64, 64);
        let bytes = encode(&image::DynamicImage::ImageRgb8(img.clone()), ImageFormat::Png);
        let t = prepare_image(&bytes, 64, 64, Path::new("x.png")).unwrap();
        assert_eq!(t.shape(), &[1, 64, 64, 3]);
        for (got, &px) in t.data().iter().zip(img.as_raw()) {
            assert_eq!(*got, f64::from(px) / 127.5 - 1.0);
        }
    }

    #[test]
    fn grayscale_is_replicated() {
        let gray = GrayImage::from_fn(10, 6, |x, y| Luma([(x * 20 + y) as u8]));
        let bytes = encode(&image::DynamicImage::ImageLuma8(gray), ImageFormat::Png);
        let t = prepare_image(&bytes, 6, 10, Path::new("g.png")).unwrap();
        for px in t.data().chunks(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn large_photo_downsamples_to_target() {
        let img = RgbImage::from_pixel(3024, 4023, Rgb([200, 100, 50]));
        let t = rgb_to_tensor(&img, 64, 64, PixelNorm::Symmetric).unwrap();
        assert_eq!(t.shape(), &[1, 64, 64, 3]);
        assert!((t.data()[0] - (200.0 / 127.5 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn garbage_is_a_decode_error_naming_the_source() {
        let err = prepare_image(b"definitely not an image", 8, 8, Path::new("bad.jpg")).unwrap_err();
        match err {
            Error::Decode { path, .. } => assert_eq!(path, Path::new("bad.jpg")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
