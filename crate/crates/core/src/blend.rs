//! Initial blend: pixel-space paste followed by latent AdaIN.

use ndarray::{s, Array2, ArrayView2};

use crate::core_model::{
    dilate_mask, mask_to_latent, resize_bilinear, resize_mask_nearest, ImagePlane, LatentGrid,
    MaskKind, MaskPlane, PipelineConfig, Placement,
};
use crate::error::{Error, Result};
use crate::pipeline::Backbone;

/// Guard added to the source standard deviation.
pub const ADAIN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BlendResult {
    /// Background with the foreground pasted under its mask.
    pub blended_image: ImagePlane,
    pub z_blend: LatentGrid,
    pub z_bg: LatentGrid,
    /// Foreground mask in the background frame.
    pub placed_fg_mask: MaskPlane,
    pub dilated_mask: MaskPlane,
}

/// Pastes `fg` (scaled by the placement) into `bg` wherever `fg_mask` is set.
/// Returns the composite and the placed mask in the background frame.
pub fn paste_pixels(
    bg: &ImagePlane,
    fg: &ImagePlane,
    fg_mask: &MaskPlane,
    placement: &Placement,
) -> Result<(ImagePlane, MaskPlane)> {
    if fg_mask.dims() != fg.dims() {
        return Err(Error::invalid(format!(
            "foreground mask {:?} does not match foreground {:?}",
            fg_mask.dims(),
            fg.dims()
        )));
    }
    let rect = placement.footprint(fg.dims(), bg.dims())?;
    let (sh, sw) = (rect.height, rect.width);
    let fg_px = if (sh, sw) == fg.dims() {
        fg.pixels().to_owned()
    } else {
        scaled_pixels(fg, sh, sw)?
    };
    let fg_bits = resize_mask_nearest(fg_mask, sh, sw)?;

    let mut out = bg.pixels().to_owned();
    let mut placed = Array2::from_elem(bg.dims(), false);
    for y in 0..sh {
        for x in 0..sw {
            if fg_bits.get(y, x) {
                let (by, bx) = (rect.y + y, rect.x + x);
                out.slice_mut(s![by, bx, ..])
                    .assign(&fg_px.slice(s![y, x, ..]));
                placed[[by, bx]] = true;
            }
        }
    }
    Ok((
        ImagePlane::new(out)?,
        MaskPlane::new(placed, MaskKind::FgObject)?,
    ))
}

fn scaled_pixels(fg: &ImagePlane, h: usize, w: usize) -> Result<ndarray::Array3<f32>> {
    // ImagePlane enforces a minimum edge, tiny footprints resample directly.
    if h >= crate::core_model::MIN_IMAGE_EDGE && w >= crate::core_model::MIN_IMAGE_EDGE {
        return Ok(resize_bilinear(fg, h, w)?.into_pixels());
    }
    let out = image::imageops::resize(
        &fg.to_rgb32f(),
        w as u32,
        h as u32,
        image::imageops::FilterType::Triangle,
    );
    Ok(ndarray::Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        out.get_pixel(x as u32, y as u32)[c].clamp(0.0, 1.0)
    }))
}

/// Per-channel population mean and standard deviation of a `C×n` region.
pub fn channel_moments(region: ArrayView2<'_, f32>) -> Vec<(f64, f64)> {
    let n = region.ncols() as f64;
    region
        .outer_iter()
        .map(|row| {
            let mean = row.iter().map(|v| *v as f64).sum::<f64>() / n;
            let var = row.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// AdaIN of a `C×n` region `x` toward the per-channel statistics of a `C×m`
/// region `y`, blended by `lambda`:
///
/// `x' = σ_y (x − μ_x) / (σ_x + ε) + μ_y`, output `(1 − λ) x + λ x'`.
pub fn adain(x: ArrayView2<'_, f32>, y: ArrayView2<'_, f32>, lambda: f32) -> Result<Array2<f32>> {
    if x.ncols() == 0 || y.ncols() == 0 {
        return Err(Error::invalid("AdaIN region is empty"));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::invalid(format!(
            "AdaIN channel mismatch: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("AdaIN lambda {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(x.to_owned());
    }
    let mx = channel_moments(x);
    let my = channel_moments(y);
    let lam = lambda as f64;
    let mut out = x.to_owned();
    for (c, mut row) in out.outer_iter_mut().enumerate() {
        let (mu_x, sd_x) = mx[c];
        let (mu_y, sd_y) = my[c];
        let gain = sd_y / (sd_x + ADAIN_EPS);
        row.mapv_inplace(|v| {
            let v = v as f64;
            let renorm = gain * (v - mu_x) + mu_y;
            ((1.0 - lam) * v + lam * renorm) as f32
        });
    }
    Ok(out)
}

/// Gathers the cells of `grid` where `mask == inside` into a `C×n` matrix.
pub fn gather_cells(grid: &LatentGrid, mask: &MaskPlane, inside: bool) -> Result<Array2<f32>> {
    grid.check_mask(mask)?;
    let data = grid.data();
    let cells: Vec<(usize, usize)> = mask
        .bits()
        .indexed_iter()
        .filter(|(_, b)| **b == inside)
        .map(|(ix, _)| ix)
        .collect();
    Ok(Array2::from_shape_fn((grid.channels(), cells.len()), |(c, n)| {
        let (y, x) = cells[n];
        data[[c, y, x]]
    }))
}

fn scatter_cells(grid: &LatentGrid, mask: &MaskPlane, inside: bool, values: &Array2<f32>) -> Result<LatentGrid> {
    let mut data = grid.data().to_owned();
    let mut n = 0;
    for ((y, x), b) in mask.bits().indexed_iter() {
        if *b == inside {
            for c in 0..grid.channels() {
                data[[c, y, x]] = values[[c, n]];
            }
            n += 1;
        }
    }
    LatentGrid::new(data, grid.scale_factor())
}

/// Renormalizes the cells of `target` under `mask` toward the statistics of
/// `source` outside `mask`. Cells outside `mask` are copied untouched.
pub fn adain_masked(
    target: &LatentGrid,
    mask: &MaskPlane,
    source: &LatentGrid,
    lambda: f32,
) -> Result<LatentGrid> {
    target.check_same_shape(source)?;
    let x = gather_cells(target, mask, true)?;
    let y = gather_cells(source, mask, false)?;
    let blended = adain(x.view(), y.view(), lambda)?;
    scatter_cells(target, mask, true, &blended)
}

/// Builds the initial blended latent.
///
/// The pasted image and the bare background are both encoded. AdaIN with
/// `cfg.lambda_init` is applied to the pasted latent under the placed mask,
/// with statistics taken from the background latent outside that mask. With
/// `use_init_blend` off the raw pasted latent is returned.
pub fn initial_blend(
    bg: &ImagePlane,
    fg: &ImagePlane,
    fg_mask: &MaskPlane,
    placement: &Placement,
    cfg: &PipelineConfig,
    backbone: &mut dyn Backbone,
) -> Result<BlendResult> {
    let (blended_image, placed_fg_mask) = paste_pixels(bg, fg, fg_mask, placement)?;
    let dilated_mask = dilate_mask(&placed_fg_mask, cfg.dilation_radius_px)?;
    let z_paste = backbone.encode(&blended_image)?;
    let z_bg = backbone.encode(bg)?;

    let sf = z_paste.scale_factor();
    let latent_mask = mask_to_latent(&placed_fg_mask, sf)?;
    let z_blend = if !cfg.ablation.use_init_blend || cfg.lambda_init == 0.0 {
        z_paste
    } else if latent_mask.is_empty() || latent_mask.is_full() {
        log::warn!("placed mask covers no or all latent cells; skipping initial AdaIN");
        z_paste
    } else {
        adain_masked(&z_paste, &latent_mask, &z_bg, cfg.lambda_init)?
    };

    Ok(BlendResult {
        blended_image,
        z_blend,
        z_bg,
        placed_fg_mask,
        dilated_mask,
    })
}
