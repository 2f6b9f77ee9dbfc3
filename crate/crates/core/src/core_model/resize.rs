use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

use super::image::ImagePlane;
use super::mask::MaskPlane;

fn round_to_multiple(v: f64, multiple: usize) -> usize {
    // ties round up
    ((v / multiple as f64) + 0.5).floor() as usize * multiple
}

/// Output `(height, width)` for a longest-edge resize with both edges rounded
/// to the nearest multiple of `multiple`.
pub fn fit_dims_longest_edge(
    height: usize,
    width: usize,
    target: usize,
    multiple: usize,
) -> Result<(usize, usize)> {
    if multiple == 0 || target < multiple {
        return Err(Error::invalid(format!(
            "target {target} must be at least the multiple {multiple}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::RejectedInput("empty image".into()));
    }
    let scale = target as f64 / height.max(width) as f64;
    let h = round_to_multiple(height as f64 * scale, multiple);
    let w = round_to_multiple(width as f64 * scale, multiple);
    if h < multiple || w < multiple {
        return Err(Error::RejectedInput(format!(
            "{width}x{height} degenerates below {multiple} px when resized to {target}"
        )));
    }
    Ok((h, w))
}

/// Bilinear (triangle filter) resample, clamped into `[0, 1]`.
pub fn resize_bilinear(img: &ImagePlane, height: usize, width: usize) -> Result<ImagePlane> {
    if img.dims() == (height, width) {
        return Ok(img.clone());
    }
    let out = image::imageops::resize(
        &img.to_rgb32f(),
        width as u32,
        height as u32,
        image::imageops::FilterType::Triangle,
    );
    ImagePlane::new(Array3::from_shape_fn((height, width, 3), |(y, x, c)| {
        out.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
    }))
}

/// Nearest-neighbor resample: output pixel `(y, x)` samples source
/// `(floor((y + 0.5)·H/h), floor((x + 0.5)·W/w))`.
pub fn resize_mask_nearest(m: &MaskPlane, height: usize, width: usize) -> Result<MaskPlane> {
    if m.dims() == (height, width) {
        return Ok(m.clone());
    }
    let (sh, sw) = m.dims();
    let src = |d: usize, n: usize, sn: usize| (((d as f64 + 0.5) * sn as f64 / n as f64) as usize).min(sn - 1);
    MaskPlane::new(
        Array2::from_shape_fn((height, width), |(y, x)| m.get(src(y, height, sh), src(x, width, sw))),
        m.kind(),
    )
}

pub fn resize_longest_edge(img: &ImagePlane, target: usize, multiple: usize) -> Result<ImagePlane> {
    let (h, w) = fit_dims_longest_edge(img.height(), img.width(), target, multiple)?;
    resize_bilinear(img, h, w)
}

/// Companion of [`resize_longest_edge`] for masks (nearest-neighbor).
pub fn resize_mask_longest_edge(m: &MaskPlane, target: usize, multiple: usize) -> Result<MaskPlane> {
    let (h, w) = fit_dims_longest_edge(m.height(), m.width(), target, multiple)?;
    resize_mask_nearest(m, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_model::{MaskKind, Rect};
    use proptest::prelude::*;

    #[test]
    fn longest_edge_examples() {
        // dims are (height, width); the landscape cases are W×H in prose
        assert_eq!(fit_dims_longest_edge(1024, 2048, 1024, 64).unwrap(), (512, 1024));
        // 750 · 1024/1000 = 768.0, 768/64 = 12 exactly
        assert_eq!(fit_dims_longest_edge(750, 1000, 1024, 64).unwrap(), (768, 1024));
        assert_eq!(fit_dims_longest_edge(1024, 1024, 1024, 64).unwrap(), (1024, 1024));
    }

    #[test]
    fn ties_round_up() {
        // 96 · 1024/1024 = 96 → 96/64 = 1.5 → rounds up to 128
        assert_eq!(fit_dims_longest_edge(96, 1024, 1024, 64).unwrap(), (128, 1024));
    }

    #[test]
    fn degenerate_is_rejected() {
        assert!(matches!(
            fit_dims_longest_edge(10, 1024, 1024, 64),
            Err(Error::RejectedInput(_))
        ));
        assert!(fit_dims_longest_edge(100, 100, 32, 64).is_err());
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = ImagePlane::from_fn(64, 64, |y, x, c| ((y + x + c) % 7) as f32 / 7.0).unwrap();
        assert_eq!(resize_longest_edge(&img, 64, 16).unwrap(), img);
    }

    #[test]
    fn mask_follows_image_dims() {
        let img = ImagePlane::filled(750, 1000, [0.5; 3]).unwrap();
        let m = MaskPlane::rect(750, 1000, Rect::new(100, 100, 200, 300), MaskKind::BgBox).unwrap();
        let ri = resize_longest_edge(&img, 1024, 64).unwrap();
        let rm = resize_mask_longest_edge(&m, 1024, 64).unwrap();
        assert_eq!(ri.dims(), rm.dims());
    }

    proptest! {
        #[test]
        fn bilinear_stays_in_unit_range(seed in 0u32..1000, h in 8usize..40, w in 8usize..40, th in 8usize..50, tw in 8usize..50) {
            let img = ImagePlane::from_fn(h, w, |y, x, c| {
                let v = (y as u32 * 7919 + x as u32 * 104729 + c as u32 * 31 + seed) % 1000;
                v as f32 / 999.0
            }).unwrap();
            let out = resize_bilinear(&img, th, tw).unwrap();
            prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
