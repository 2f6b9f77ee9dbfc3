use ndarray::{Array2, Array3, ArrayView3};

use crate::error::{Error, Result};

use super::mask::MaskPlane;

/// `C×h×w` latent tensor from a backbone autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    data: Array3<f32>,
    scale_factor: usize,
}

impl LatentGrid {
    pub fn new(data: Array3<f32>, scale_factor: usize) -> Result<Self> {
        if scale_factor == 0 {
            return Err(Error::invalid("latent scale factor must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: "latent grid".into(),
                detail: "non-finite value".into(),
            });
        }
        Ok(Self { data, scale_factor })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, scale_factor: usize) -> Self {
        Self {
            data: Array3::zeros((channels, height, width)),
            scale_factor,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// `(channels, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn scale_factor(&self) -> usize {
        self.scale_factor
    }

    pub fn data(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Cells as rows: `(h·w) × C`, row-major over the spatial grid.
    pub fn to_cell_rows(&self) -> Array2<f32> {
        let (c, h, w) = self.dims();
        Array2::from_shape_fn((h * w, c), |(n, ch)| self.data[[ch, n / w, n % w]])
    }

    pub fn from_cell_rows(rows: &Array2<f32>, height: usize, width: usize, scale_factor: usize) -> Result<Self> {
        let (n, c) = rows.dim();
        if n != height * width {
            return Err(Error::invalid(format!(
                "{n} cell rows do not fill a {width}x{height} grid"
            )));
        }
        Self::new(
            Array3::from_shape_fn((c, height, width), |(ch, y, x)| rows[[y * width + x, ch]]),
            scale_factor,
        )
    }

    pub(crate) fn check_mask(&self, mask: &MaskPlane) -> Result<()> {
        if mask.dims() != (self.height(), self.width()) {
            return Err(Error::invalid(format!(
                "mask {:?} does not match latent spatial dims {:?}",
                mask.dims(),
                (self.height(), self.width())
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::invalid(format!(
                "latent shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Little-endian `f32` bytes, channel-major; used for hashing.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> f32 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}
