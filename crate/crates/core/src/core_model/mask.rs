use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Rectangular destination box in the background frame.
    BgBox,
    /// Object silhouette.
    FgObject,
    /// Object silhouette grown by a disk.
    Dilated,
}

/// Binary mask plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlane {
    bits: Array2<bool>,
    kind: MaskKind,
}

impl MaskPlane {
    pub fn new(bits: Array2<bool>, kind: MaskKind) -> Result<Self> {
        let mask = Self { bits, kind };
        if kind == MaskKind::BgBox {
            if let Some(b) = mask.bounding_box() {
                if mask.count() != b.area() {
                    return Err(Error::RejectedInput(
                        "bg_box mask is not a filled axis-aligned rectangle".into(),
                    ));
                }
            }
        }
        Ok(mask)
    }

    pub fn empty(height: usize, width: usize, kind: MaskKind) -> Self {
        Self {
            bits: Array2::from_elem((height, width), false),
            kind,
        }
    }

    pub fn full(height: usize, width: usize, kind: MaskKind) -> Self {
        Self {
            bits: Array2::from_elem((height, width), true),
            kind,
        }
    }

    pub fn rect(height: usize, width: usize, rect: Rect, kind: MaskKind) -> Result<Self> {
        if rect.x + rect.width > width || rect.y + rect.height > height {
            return Err(Error::invalid(format!(
                "rectangle {rect:?} exceeds {width}x{height}"
            )));
        }
        Ok(Self {
            bits: Array2::from_shape_fn((height, width), |(y, x)| rect.contains(y, x)),
            kind,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        kind: MaskKind,
        f: impl FnMut((usize, usize)) -> bool,
    ) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), f), kind)
    }

    pub fn bits(&self) -> &Array2<bool> {
        &self.bits
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: MaskKind) -> Result<Self> {
        self.kind = kind;
        Self::new(self.bits, kind)
    }

    pub fn height(&self) -> usize {
        self.bits.dim().0
    }

    pub fn width(&self) -> usize {
        self.bits.dim().1
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        self.bits.dim()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[[y, x]]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    pub fn bounding_box(&self) -> Option<Rect> {
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for ((y, x), set) in self.bits.indexed_iter() {
            if *set {
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y);
                x1 = x1.max(x);
            }
        }
        (y0 != usize::MAX).then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    pub fn is_subset_of(&self, other: &MaskPlane) -> bool {
        self.dims() == other.dims()
            && self
                .bits
                .iter()
                .zip(other.bits.iter())
                .all(|(a, b)| !*a || *b)
    }

    /// Row-major flattening, one entry per cell.
    pub fn to_row(&self) -> Vec<bool> {
        self.bits.iter().copied().collect()
    }

    /// Single-channel PNG: nonzero means set.
    pub fn load(path: impl AsRef<Path>, kind: MaskKind) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_luma8();
        Self::from_luma8(&img, kind)
    }

    pub fn from_luma8(img: &image::GrayImage, kind: MaskKind) -> Result<Self> {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, kind, |(y, x)| {
            img.get_pixel(x as u32, y as u32)[0] != 0
        })
    }

    pub fn from_encoded_bytes(bytes: &[u8], kind: MaskKind) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_luma8();
        Self::from_luma8(&img, kind)
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let (h, w) = self.dims();
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_luma8().save(path.as_ref())?;
        Ok(())
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_luma8()
            .write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }
}

/// Morphological dilation by a Euclidean disk of `radius_px`
/// (offsets with `dy² + dx² ≤ r²`).
pub fn dilate_mask(m: &MaskPlane, radius_px: i64) -> Result<MaskPlane> {
    if radius_px < 0 {
        return Err(Error::invalid(format!("negative dilation radius {radius_px}")));
    }
    if m.kind == MaskKind::BgBox {
        return Err(Error::invalid("dilation expects an object mask, got bg_box"));
    }
    let r = radius_px as usize;
    let (h, w) = m.dims();
    if r == 0 {
        return Ok(MaskPlane {
            bits: m.bits.clone(),
            kind: MaskKind::Dilated,
        });
    }

    // Horizontal dilation of each row by `k` via prefix sums, then an OR
    // over the disk's row spans.
    let prefix: Vec<Vec<u32>> = (0..h)
        .map(|y| {
            let mut acc = vec![0u32; w + 1];
            for x in 0..w {
                acc[x + 1] = acc[x] + m.bits[[y, x]] as u32;
            }
            acc
        })
        .collect();
    let half_width = |dy: usize| -> usize {
        let rem = (r * r - dy * dy) as f64;
        let mut k = rem.sqrt() as usize;
        while (k + 1) * (k + 1) <= r * r - dy * dy {
            k += 1;
        }
        while k * k > r * r - dy * dy {
            k -= 1;
        }
        k
    };
    let spans: Vec<usize> = (0..=r).map(half_width).collect();

    let mut out = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            let y_lo = y.saturating_sub(r);
            let y_hi = (y + r).min(h - 1);
            let mut set = false;
            for sy in y_lo..=y_hi {
                let k = spans[sy.abs_diff(y)];
                let x_lo = x.saturating_sub(k);
                let x_hi = (x + k).min(w - 1);
                if prefix[sy][x_hi + 1] > prefix[sy][x_lo] {
                    set = true;
                    break;
                }
            }
            out[[y, x]] = set;
        }
    }
    Ok(MaskPlane {
        bits: out,
        kind: MaskKind::Dilated,
    })
}

/// Nearest-neighbor downsample: a cell is set iff its top-left source pixel
/// is set.
pub fn mask_to_latent(m: &MaskPlane, scale_factor: usize) -> Result<MaskPlane> {
    if scale_factor == 0 {
        return Err(Error::invalid("scale factor must be positive"));
    }
    let (h, w) = m.dims();
    if h % scale_factor != 0 || w % scale_factor != 0 {
        return Err(Error::invalid(format!(
            "mask {w}x{h} not divisible by scale factor {scale_factor}"
        )));
    }
    let bits = Array2::from_shape_fn((h / scale_factor, w / scale_factor), |(y, x)| {
        m.bits[[y * scale_factor, x * scale_factor]]
    });
    Ok(MaskPlane { bits, kind: m.kind })
}

/// Nearest-neighbor upsample of a latent-resolution mask back to pixels.
pub fn mask_from_latent(m: &MaskPlane, scale_factor: usize) -> MaskPlane {
    let (h, w) = m.dims();
    let bits = Array2::from_shape_fn((h * scale_factor, w * scale_factor), |(y, x)| {
        m.bits[[y / scale_factor, x / scale_factor]]
    });
    MaskPlane { bits, kind: m.kind }
}
