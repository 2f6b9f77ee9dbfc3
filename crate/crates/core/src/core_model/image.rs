use std::path::Path;

use ndarray::{s, Array3, ArrayView3};

use crate::error::{Error, Result};

use super::mask::{MaskPlane, Rect};

/// Smallest accepted image edge, in pixels.
pub const MIN_IMAGE_EDGE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    #[default]
    Srgb,
}

/// An RGB image with values in `[0, 1]`, stored row-major as `H×W×3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pixels: Array3<f32>,
    colorspace: ColorSpace,
}

impl ImagePlane {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::invalid(format!("expected 3 channels, got {c}")));
        }
        if h < MIN_IMAGE_EDGE || w < MIN_IMAGE_EDGE {
            return Err(Error::RejectedInput(format!(
                "image {w}x{h} is smaller than {MIN_IMAGE_EDGE}x{MIN_IMAGE_EDGE}"
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::RejectedInput(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            pixels,
            colorspace: ColorSpace::Srgb,
        })
    }

    /// Builds a plane from arbitrary values: non-finite entries become 0 and
    /// everything else is clamped into `[0, 1]`.
    pub fn sanitized(mut pixels: Array3<f32>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Self::new(pixels)
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::new(Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]))
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        Self::new(Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
            f(y, x, c)
        }))
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn pixels(&self) -> ArrayView3<'_, f32> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.pixels[[y, x, 0]],
            self.pixels[[y, x, 1]],
            self.pixels[[y, x, 2]],
        ]
    }

    pub fn crop(&self, rect: Rect) -> Result<ImagePlane> {
        if rect.x + rect.width > self.width() || rect.y + rect.height > self.height() {
            return Err(Error::invalid(format!(
                "crop {rect:?} exceeds image {}x{}",
                self.width(),
                self.height()
            )));
        }
        let view = self.pixels.slice(s![
            rect.y..rect.y + rect.height,
            rect.x..rect.x + rect.width,
            ..
        ]);
        ImagePlane::new(view.to_owned())
    }

    /// Keeps pixels under `mask` and paints everything else white, then crops
    /// to the mask's bounding box. Falls back to the full image when the mask
    /// is empty or its box is below the minimum edge.
    pub fn isolate_on_white(&self, mask: &MaskPlane) -> Result<ImagePlane> {
        if mask.dims() != self.dims() {
            return Err(Error::invalid("mask and image dimensions differ"));
        }
        let mut px = self.pixels.clone();
        for ((y, x), set) in mask.bits().indexed_iter() {
            if !*set {
                px.slice_mut(s![y, x, ..]).fill(1.0);
            }
        }
        let isolated = ImagePlane::new(px)?;
        match mask.bounding_box() {
            Some(b) if b.width >= MIN_IMAGE_EDGE && b.height >= MIN_IMAGE_EDGE => {
                isolated.crop(b)
            }
            _ => Ok(isolated),
        }
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = self.dims();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = self.get(y as usize, x as usize);
            image::Rgb(p.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::new(Array3::from_shape_fn(
            (h as usize, w as usize, 3),
            |(y, x, c)| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0,
        ))
    }

    pub fn to_rgb32f(&self) -> image::Rgb32FImage {
        let (h, w) = self.dims();
        image::Rgb32FImage::from_fn(w as u32, h as u32, |x, y| {
            image::Rgb(self.get(y as usize, x as usize))
        })
    }

    /// Decodes a PNG or JPEG file into `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Self::from_rgb8(&img)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }

    /// PNG bytes of the 8-bit quantized image.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn from_encoded_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Self::from_rgb8(&img)
    }

    /// Mean absolute difference against another image of the same size.
    pub fn mean_abs_diff(&self, other: &ImagePlane) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("image dimensions differ"));
        }
        let n = self.pixels.len() as f64;
        Ok(self
            .pixels
            .iter()
            .zip(other.pixels.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_and_out_of_range() {
        assert!(ImagePlane::filled(7, 16, [0.0; 3]).is_err());
        assert!(ImagePlane::filled(8, 8, [1.5, 0.0, 0.0]).is_err());
        assert!(ImagePlane::filled(8, 8, [f32::NAN, 0.0, 0.0]).is_err());
        assert!(ImagePlane::filled(8, 8, [1.0, 0.0, 0.5]).is_ok());
    }

    #[test]
    fn sanitized_clamps_and_zeroes_nan() {
        let mut px = Array3::from_elem((8, 8, 3), 0.5f32);
        px[[0, 0, 0]] = f32::NAN;
        px[[0, 0, 1]] = 2.0;
        let img = ImagePlane::sanitized(px).unwrap();
        assert_eq!(img.get(0, 0), [0.0, 1.0, 0.5]);
    }

    #[test]
    fn png_roundtrip_is_exact_for_8bit_values() {
        let img = ImagePlane::from_fn(9, 11, |y, x, c| ((y * 31 + x * 7 + c * 3) % 256) as f32 / 255.0)
            .unwrap();
        let back = ImagePlane::from_encoded_bytes(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn isolate_on_white_crops_to_mask_box() {
        let img = ImagePlane::filled(16, 16, [0.2, 0.3, 0.4]).unwrap();
        let mask = MaskPlane::rect(16, 16, Rect::new(2, 3, 8, 9), super::super::MaskKind::FgObject)
            .unwrap();
        let iso = img.isolate_on_white(&mask).unwrap();
        assert_eq!(iso.dims(), (9, 8));
        assert_eq!(iso.get(0, 0), [0.2, 0.3, 0.4]);
    }
}
