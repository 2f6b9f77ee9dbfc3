use crate::error::{Error, Result};

use super::mask::Rect;

/// Where the (scaled) foreground lands in the background frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Placement {
    pub offset_x: i64,
    pub offset_y: i64,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            offset_x: 0,
            offset_y: 0,
            scale: 1.0,
        }
    }
}

impl Placement {
    pub fn new(offset_x: i64, offset_y: i64, scale: f64) -> Self {
        Self {
            offset_x,
            offset_y,
            scale,
        }
    }

    /// Parses `x,y,scale`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [x, y, scale] = parts.as_slice() else {
            return Err(Error::invalid(format!("placement {s:?} is not x,y,scale")));
        };
        let bad = |what: &str| Error::invalid(format!("placement {what} in {s:?} is not a number"));
        Ok(Self::new(
            x.parse().map_err(|_| bad("x"))?,
            y.parse().map_err(|_| bad("y"))?,
            scale.parse().map_err(|_| bad("scale"))?,
        ))
    }

    /// Size of the foreground after scaling, `(height, width)`.
    pub fn scaled_dims(&self, fg_height: usize, fg_width: usize) -> Result<(usize, usize)> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("scale {} must be positive", self.scale)));
        }
        if self.scale == 1.0 {
            return Ok((fg_height, fg_width));
        }
        let h = (fg_height as f64 * self.scale).round() as usize;
        let w = (fg_width as f64 * self.scale).round() as usize;
        if h == 0 || w == 0 {
            return Err(Error::invalid("scaled foreground is empty"));
        }
        Ok((h, w))
    }

    /// Footprint of the scaled foreground in the background frame; errors if
    /// any part falls outside.
    pub fn footprint(
        &self,
        fg_dims: (usize, usize),
        bg_dims: (usize, usize),
    ) -> Result<Rect> {
        let (h, w) = self.scaled_dims(fg_dims.0, fg_dims.1)?;
        let (bh, bw) = bg_dims;
        if self.offset_x < 0
            || self.offset_y < 0
            || self.offset_x as usize + w > bw
            || self.offset_y as usize + h > bh
        {
            return Err(Error::invalid(format!(
                "placement {self:?} puts a {w}x{h} foreground outside the {bw}x{bh} frame"
            )));
        }
        Ok(Rect::new(self.offset_x as usize, self.offset_y as usize, w, h))
    }

    /// Re-expresses the placement after the background was resized by
    /// `(ky, kx)`, then clamps the footprint into the new frame.
    pub fn rescaled(
        &self,
        ky: f64,
        kx: f64,
        fg_dims: (usize, usize),
        bg_dims: (usize, usize),
    ) -> Result<Placement> {
        let scale = self.scale * kx.min(ky);
        let mut p = Placement::new(
            (self.offset_x as f64 * kx).round() as i64,
            (self.offset_y as f64 * ky).round() as i64,
            scale,
        );
        let (h, w) = p.scaled_dims(fg_dims.0, fg_dims.1)?;
        if h > bg_dims.0 || w > bg_dims.1 {
            return Err(Error::invalid("scaled foreground larger than the background"));
        }
        p.offset_x = p.offset_x.clamp(0, (bg_dims.1 - w) as i64);
        p.offset_y = p.offset_y.clamp(0, (bg_dims.0 - h) as i64);
        Ok(p)
    }

    /// Scale and offsets that fit a `(height, width)` foreground inside `bx`,
    /// preserving aspect ratio and centering.
    pub fn fit_to_box(fg_dims: (usize, usize), bx: Rect) -> Result<Placement> {
        let (h, w) = fg_dims;
        if h == 0 || w == 0 || bx.area() == 0 {
            return Err(Error::invalid("cannot fit an empty foreground or box"));
        }
        let scale = (bx.width as f64 / w as f64).min(bx.height as f64 / h as f64);
        let mut p = Placement::new(bx.x as i64, bx.y as i64, scale);
        let (sh, sw) = p.scaled_dims(h, w)?;
        let (sh, sw) = (sh.min(bx.height), sw.min(bx.width));
        p.offset_x += ((bx.width - sw) / 2) as i64;
        p.offset_y += ((bx.height - sh) / 2) as i64;
        Ok(p)
    }
}
