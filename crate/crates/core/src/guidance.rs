//! Step-time manipulations applied during reconstruction.
//!
//! - [`rectified_cross_attention`]: scaled dot-product attention over prompt
//!   tokens, restricted to query cells inside the dilated mask. Rows outside
//!   the mask are exactly zero.
//! - [`apply_guidance`]: `Z + A_integrate + A_text`.
//! - [`step_adain`]: AdaIN of the masked region toward the unmasked region.
//! - [`preserve_background`]: replace latent cells outside the mask with the
//!   stored inversion latent of the same timestep.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use crate::blend::adain_masked;
use crate::core_model::{mask_to_latent, LatentGrid, MaskKind, MaskPlane};
use crate::error::{Error, Result};
use crate::integrator::PromptFeature;

/// Query, key and value projections of one cross-attention path.
///
/// `w_q: d_model×d_k`, `w_k: D×d_k`, `w_v: D×d_model`, where `D` is the
/// prompt-token width.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w_q: Array2<f32>,
    pub w_k: Array2<f32>,
    pub w_v: Array2<f32>,
}

impl Projection {
    pub fn new(w_q: Array2<f32>, w_k: Array2<f32>, w_v: Array2<f32>) -> Result<Self> {
        if w_q.ncols() != w_k.ncols() {
            return Err(Error::invalid("query and key widths differ"));
        }
        if w_k.nrows() != w_v.nrows() {
            return Err(Error::invalid("key and value input widths differ"));
        }
        if w_v.ncols() != w_q.nrows() {
            return Err(Error::invalid("value width must equal the model width"));
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn model_width(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn key_width(&self) -> usize {
        self.w_q.ncols()
    }

    pub fn token_width(&self) -> usize {
        self.w_k.nrows()
    }
}

/// Dilated mask at every resolution the backbone attends at.
#[derive(Debug, Clone)]
pub struct AttentionMaskField {
    image: MaskPlane,
    levels: BTreeMap<usize, MaskPlane>,
}

impl AttentionMaskField {
    pub fn new(dilated: MaskPlane) -> Self {
        Self {
            image: dilated,
            levels: BTreeMap::new(),
        }
    }

    /// Precomputes the masks for the given downsampling factors.
    pub fn with_factors(dilated: MaskPlane, factors: &[usize]) -> Result<Self> {
        let mut field = Self::new(dilated);
        for &f in factors {
            field.level(f)?;
        }
        Ok(field)
    }

    pub fn image_mask(&self) -> &MaskPlane {
        &self.image
    }

    /// Mask at `factor`, downsampled with the top-left rule. If that leaves a
    /// nonempty mask with no set cell, every cell holding a set pixel is set
    /// instead.
    pub fn level(&mut self, factor: usize) -> Result<&MaskPlane> {
        if !self.levels.contains_key(&factor) {
            let m = Self::downsample(&self.image, factor)?;
            self.levels.insert(factor, m);
        }
        Ok(&self.levels[&factor])
    }

    fn downsample(image: &MaskPlane, factor: usize) -> Result<MaskPlane> {
        let m = mask_to_latent(image, factor)?;
        if !m.is_empty() || image.is_empty() {
            return Ok(m);
        }
        let (h, w) = m.dims();
        MaskPlane::from_fn(h, w, image.kind(), |(y, x)| {
            (y * factor..(y + 1) * factor)
                .any(|yy| (x * factor..(x + 1) * factor).any(|xx| image.get(yy, xx)))
        })
    }

    /// Mask matching a `height×width` grid.
    pub fn for_grid(&mut self, height: usize, width: usize) -> Result<&MaskPlane> {
        let (ih, iw) = self.image.dims();
        if height == 0 || ih % height != 0 || iw % width != 0 || ih / height != iw / width {
            return Err(Error::invalid(format!(
                "no integer factor maps {iw}x{ih} onto {width}x{height}"
            )));
        }
        self.level(ih / height)
    }
}

/// Everything the reconstruction needs for guided steps.
#[derive(Debug, Clone)]
pub struct GuidanceBundle {
    /// Text prompt feature; `None` is the null-prompt mode.
    pub f_text: Option<PromptFeature>,
    /// Integrated image feature; `None` when image injection is disabled.
    pub f_integrate: Option<PromptFeature>,
    pub mask_field: AttentionMaskField,
    pub lambda_diffusion: f32,
    pub inject_steps: usize,
}

impl GuidanceBundle {
    pub fn has_features(&self) -> bool {
        self.f_text.is_some() || self.f_integrate.is_some()
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `A = softmax(Q Kᵀ / √d + M) V` with `Q = Z W_q`, `K = F W_k`,
/// `V = F W_v` and `M` zero on in-mask query rows. Out-of-mask rows of `A`
/// are zero.
pub fn rectified_cross_attention(
    z: ArrayView2<'_, f32>,
    f: &PromptFeature,
    weights: &Projection,
    mask_row: &[bool],
) -> Result<Array2<f32>> {
    let (n, d_model) = z.dim();
    if mask_row.len() != n {
        return Err(Error::invalid(format!(
            "mask row has {} entries for {n} queries",
            mask_row.len()
        )));
    }
    if d_model != weights.model_width() {
        return Err(Error::invalid(format!(
            "query width {d_model} does not match projection width {}",
            weights.model_width()
        )));
    }
    if f.dim() != weights.token_width() {
        return Err(Error::invalid(format!(
            "token width {} does not match projection input {}",
            f.dim(),
            weights.token_width()
        )));
    }

    let mut out = Array2::<f32>::zeros((n, d_model));
    if !mask_row.iter().any(|b| *b) {
        return Ok(out);
    }
    let q = z.dot(&weights.w_q);
    let k = f.tokens().dot(&weights.w_k);
    let v = f.tokens().dot(&weights.w_v);
    let scale = 1.0 / (weights.key_width() as f64).sqrt();
    let t = f.len();
    let mut logits = vec![0.0f64; t];
    for (i, inside) in mask_row.iter().enumerate() {
        if !*inside {
            continue;
        }
        for (j, l) in logits.iter_mut().enumerate() {
            let dot: f64 = q
                .row(i)
                .iter()
                .zip(k.row(j).iter())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            *l = dot * scale;
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numerical {
                context: format!("cross-attention query {i}"),
                detail: "non-finite logit".into(),
            });
        }
        softmax_in_place(&mut logits);
        let mut row = out.row_mut(i);
        for (j, p) in logits.iter().enumerate() {
            for (o, vv) in row.iter_mut().zip(v.row(j).iter()) {
                *o += (*p * *vv as f64) as f32;
            }
        }
    }
    Ok(out)
}

/// Projections of the two injection paths at one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerWeights<'a> {
    pub text: &'a Projection,
    pub image: &'a Projection,
}

/// Which attention paths contributed at a call of [`apply_guidance`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GuidanceApplied {
    pub image: bool,
    pub text: bool,
}

/// `Z_out = Z + A_integrate + A_text` on in-mask rows; other rows are
/// returned bit-identical.
pub fn apply_guidance(
    z: ArrayView2<'_, f32>,
    f_integrate: Option<&PromptFeature>,
    f_text: Option<&PromptFeature>,
    weights: LayerWeights<'_>,
    mask_row: &[bool],
) -> Result<(Array2<f32>, GuidanceApplied)> {
    let mut out = z.to_owned();
    let mut applied = GuidanceApplied::default();
    for (feature, proj, flag) in [
        (f_integrate, weights.image, &mut applied.image),
        (f_text, weights.text, &mut applied.text),
    ] {
        let Some(f) = feature else { continue };
        let a = rectified_cross_attention(z, f, proj, mask_row)?;
        for (i, inside) in mask_row.iter().enumerate() {
            if *inside {
                let mut row = out.row_mut(i);
                row += &a.row(i);
            }
        }
        *flag = true;
    }
    Ok((out, applied))
}

/// Whether a latent mask leaves both a masked and an unmasked region.
pub fn adain_applicable(mask: &MaskPlane) -> bool {
    !mask.is_empty() && !mask.is_full()
}

/// Renormalizes the masked cells of `z` toward the per-channel statistics of
/// its unmasked cells, blended by `lambda`. An all-set or all-unset mask has
/// no statistics source and returns `z` unchanged with a warning.
pub fn step_adain(z: &LatentGrid, mask: &MaskPlane, lambda: f32) -> Result<LatentGrid> {
    z.check_mask(mask)?;
    if !adain_applicable(mask) {
        log::warn!("step AdaIN skipped: mask has no masked/unmasked split");
        return Ok(z.clone());
    }
    adain_masked(z, mask, z, lambda)
}

/// Cells outside `mask` take the values of `z_inverted`; cells inside keep
/// `z_t`.
pub fn preserve_background(
    z_t: &LatentGrid,
    z_inverted: &LatentGrid,
    mask: &MaskPlane,
) -> Result<LatentGrid> {
    z_t.check_same_shape(z_inverted)?;
    z_t.check_mask(mask)?;
    let mut data = z_t.data().to_owned();
    let inv = z_inverted.data();
    for ((y, x), inside) in mask.bits().indexed_iter() {
        if !*inside {
            for c in 0..z_t.channels() {
                data[[c, y, x]] = inv[[c, y, x]];
            }
        }
    }
    LatentGrid::new(data, z_t.scale_factor())
}

/// An empty latent-resolution mask of the right kind, for callers that run
/// without a foreground.
pub fn empty_latent_mask(height: usize, width: usize) -> MaskPlane {
    MaskPlane::empty(height, width, MaskKind::Dilated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core_model::Rect;
    use crate::integrator::FeatureSource;
    use ndarray::{array, Array3};
    use proptest::prelude::*;
    use rand::Rng;

    fn feature(tokens: Array2<f32>) -> PromptFeature {
        PromptFeature::new(tokens, FeatureSource::Integrated).unwrap()
    }

    /// Dense attention written out on plain vectors.
    fn dense_oracle(z: &Array2<f32>, f: &Array2<f32>, p: &Projection) -> Vec<Vec<f64>> {
        let (n, dm) = z.dim();
        let (t, dt) = f.dim();
        let dk = p.w_q.ncols();
        let proj = |x: &Array2<f32>, w: &Array2<f32>, rows: usize, inw: usize, outw: usize| {
            (0..rows)
                .map(|i| {
                    (0..outw)
                        .map(|o| (0..inw).map(|k| x[[i, k]] as f64 * w[[k, o]] as f64).sum::<f64>())
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        };
        let q = proj(z, &p.w_q, n, dm, dk);
        let k = proj(f, &p.w_k, t, dt, dk);
        let v = proj(f, &p.w_v, t, dt, dm);
        (0..n)
            .map(|i| {
                let logits: Vec<f64> = (0..t)
                    .map(|j| (0..dk).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let m = logits.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = e.iter().sum();
                (0..dm).map(|o| (0..t).map(|j| e[j] / s * v[j][o]).sum()).collect()
            })
            .collect()
    }

    fn random_instance(rng: &mut impl Rng) -> (Array2<f32>, Array2<f32>, Projection) {
        let n = rng.random_range(1..=16);
        let t = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        let dk = rng.random_range(1..=8);
        let dt = rng.random_range(1..=8);
        let mut r = |rows, cols| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0f32..1.0));
        let z = r(n, d);
        let f = r(t, dt);
        let p = Projection::new(r(d, dk), r(dt, dk), r(dt, d)).unwrap();
        (z, f, p)
    }

    #[test]
    fn all_ones_mask_matches_dense_oracle() {
        let mut rng = crate::util::seeded_rng(11, "attn");
        for _ in 0..100 {
            let (z, f, p) = random_instance(&mut rng);
            let mask = vec![true; z.nrows()];
            let got = rectified_cross_attention(z.view(), &feature(f.clone()), &p, &mask).unwrap();
            let want = dense_oracle(&z, &f, &p);
            for (i, row) in want.iter().enumerate() {
                for (o, w) in row.iter().enumerate() {
                    assert!((got[[i, o]] as f64 - w).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn all_zero_mask_gives_zero_output() {
        let mut rng = crate::util::seeded_rng(12, "attn");
        let (z, f, p) = random_instance(&mut rng);
        let a = rectified_cross_attention(z.view(), &feature(f), &p, &vec![false; z.nrows()]).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_softmax_two_tokens() {
        // keys read token column 0 scaled by ln 3, values read column 1
        let ln3 = 3f32.ln();
        let z = array![[1.0f32], [2.0]];
        let tokens = array![[0.0f32, 10.0], [1.0, 20.0]];
        let p = Projection::new(array![[1.0f32]], array![[ln3], [0.0]], array![[0.0f32], [1.0]]).unwrap();
        let a = rectified_cross_attention(z.view(), &feature(tokens), &p, &[true, true]).unwrap();
        // query 0: logits [0, ln3] → [0.25, 0.75]; V = [10, 20]
        assert!((a[[0, 0]] - (0.25 * 10.0 + 0.75 * 20.0)).abs() < 1e-5);
        // query 1: logits [0, 2 ln3] → [1/10, 9/10]
        assert!((a[[1, 0]] - (0.1 * 10.0 + 0.9 * 20.0)).abs() < 1e-5);
    }

    fn toy_weights(dm: usize, dt: usize) -> (Projection, Projection) {
        let mut rng = crate::util::seeded_rng(3, "w");
        let mut r = |rows, cols| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.5f32..0.5));
        (
            Projection::new(r(dm, 4), r(dt, 4), r(dt, dm)).unwrap(),
            Projection::new(r(dm, 4), r(dt, 4), r(dt, dm)).unwrap(),
        )
    }

    #[test]
    fn guidance_without_features_is_identity() {
        let (t, i) = toy_weights(3, 2);
        let z = array![[0.5f32, -0.0, 1.0], [2.0, 3.0, 4.0]];
        let (out, applied) = apply_guidance(z.view(), None, None, LayerWeights { text: &t, image: &i }, &[true, true]).unwrap();
        assert_eq!(out, z);
        assert_eq!(applied, GuidanceApplied::default());
    }

    #[test]
    fn single_token_adds_values_in_mask_only() {
        let (t, i) = toy_weights(3, 2);
        let z = array![[0.5f32, -0.0, 1.0], [2.0, 3.0, 4.0]];
        let fi = feature(array![[1.0f32, -1.0]]);
        let ft = feature(array![[0.25f32, 2.0]]);
        let (out, applied) = apply_guidance(
            z.view(),
            Some(&fi),
            Some(&ft),
            LayerWeights { text: &t, image: &i },
            &[true, false],
        )
        .unwrap();
        assert!(applied.image && applied.text);
        let vi = fi.tokens().dot(&i.w_v);
        let vt = ft.tokens().dot(&t.w_v);
        for o in 0..3 {
            let want = z[[0, o]] + vi[[0, o]] + vt[[0, o]];
            assert!((out[[0, o]] - want).abs() < 1e-6);
            assert_eq!(out[[1, o]].to_bits(), z[[1, o]].to_bits());
        }
        // -0.0 preserved bitwise outside; inside it is recomputed
        assert_eq!(out[[1, 1]].to_bits(), 3.0f32.to_bits());
    }

    fn grid(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> LatentGrid {
        LatentGrid::new(Array3::from_shape_fn((c, h, w), |(a, b, d)| f(a, b, d)), 8).unwrap()
    }

    #[test]
    fn step_adain_examples() {
        // left column masked [0, 2], right column [10, 14]
        let z = grid(1, 2, 2, |_, y, x| if x == 0 { [0.0, 2.0][y] } else { [10.0, 14.0][y] });
        let mask = MaskPlane::rect(2, 2, Rect::new(0, 0, 1, 2), MaskKind::Dilated).unwrap();
        let out = step_adain(&z, &mask, 1.0).unwrap();
        assert!((out.data()[[0, 0, 0]] - 10.0).abs() < 1e-4);
        assert!((out.data()[[0, 1, 0]] - 14.0).abs() < 1e-4);
        assert_eq!(out.data()[[0, 0, 1]], 10.0);
        assert_eq!(step_adain(&z, &mask, 0.0).unwrap(), z);
    }

    #[test]
    fn step_adain_fixed_point_and_skip() {
        let z = grid(2, 4, 4, |c, y, x| ((y + c) % 2) as f32 * 3.0 + x as f32 * 0.0);
        // masked rows 0..2 and unmasked rows 2..4 share statistics
        let mask = MaskPlane::rect(4, 4, Rect::new(0, 0, 4, 2), MaskKind::Dilated).unwrap();
        let out = step_adain(&z, &mask, 1.0).unwrap();
        assert!(out.max_abs_diff(&z) <= 1e-5);
        let full = MaskPlane::full(4, 4, MaskKind::Dilated);
        assert_eq!(step_adain(&z, &full, 1.0).unwrap(), z);
        assert_eq!(step_adain(&z, &empty_latent_mask(4, 4), 1.0).unwrap(), z);
    }

    #[test]
    fn preservation_examples() {
        let a = grid(2, 3, 3, |c, y, x| (c + y * 3 + x) as f32);
        let b = grid(2, 3, 3, |c, y, x| -((c + y * 3 + x) as f32) - 1.0);
        assert_eq!(preserve_background(&a, &b, &empty_latent_mask(3, 3)).unwrap(), b);
        assert_eq!(preserve_background(&a, &b, &MaskPlane::full(3, 3, MaskKind::Dilated)).unwrap(), a);
        let one = MaskPlane::rect(3, 3, Rect::new(2, 1, 1, 1), MaskKind::Dilated).unwrap();
        let out = preserve_background(&a, &b, &one).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let src = if (y, x) == (1, 2) { &a } else { &b };
                for c in 0..2 {
                    assert_eq!(out.data()[[c, y, x]], src.data()[[c, y, x]]);
                }
            }
        }
        let wrong = grid(2, 3, 4, |_, _, _| 0.0);
        assert!(preserve_background(&a, &wrong, &one).is_err());
    }

    #[test]
    fn mask_field_never_loses_a_nonempty_mask() {
        let m = MaskPlane::from_fn(16, 16, MaskKind::Dilated, |(y, x)| y == 5 && x == 6).unwrap();
        let mut field = AttentionMaskField::new(m);
        let l = field.for_grid(2, 2).unwrap();
        assert_eq!(l.count(), 1);
        assert!(l.get(0, 0));
        assert!(field.for_grid(3, 3).is_err());
    }

    proptest! {
        #[test]
        fn attention_rows_are_convex_or_zero(seed in 0u64..500) {
            let mut rng = crate::util::seeded_rng(seed, "rows");
            let (z, f, _) = random_instance(&mut rng);
            // value projection = identity on a 1-column all-ones token basis
            // turns each output row into the sum of its softmax weights
            let t = f.nrows();
            let ones = Array2::from_elem((t, 1), 1.0f32);
            let d = z.ncols();
            let p = Projection::new(
                Array2::from_shape_fn((d, 3), |_| rng.random_range(-1.0f32..1.0)),
                Array2::from_shape_fn((1, 3), |_| rng.random_range(-1.0f32..1.0)),
                Array2::from_elem((1, d), 1.0f32),
            ).unwrap();
            let mask: Vec<bool> = (0..z.nrows()).map(|_| rng.random_bool(0.5)).collect();
            let a = rectified_cross_attention(z.view(), &feature(ones), &p, &mask).unwrap();
            for (i, inside) in mask.iter().enumerate() {
                for v in a.row(i) {
                    if *inside { prop_assert!((v - 1.0).abs() < 1e-6); } else { prop_assert_eq!(*v, 0.0); }
                }
            }
        }

        #[test]
        fn preservation_is_idempotent(seed in 0u64..200) {
            let mut rng = crate::util::seeded_rng(seed, "pres");
            let a = grid(3, 4, 5, |_, _, _| 0.0).data().mapv(|_| rng.random_range(-2.0f32..2.0));
            let b = a.mapv(|v| v * 0.5 + 1.0);
            let a = LatentGrid::new(a, 8).unwrap();
            let b = LatentGrid::new(b, 8).unwrap();
            let mask = MaskPlane::from_fn(4, 5, MaskKind::Dilated, |_| rng.random_bool(0.4)).unwrap();
            let once = preserve_background(&a, &b, &mask).unwrap();
            let twice = preserve_background(&once, &b, &mask).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn step_adain_locality(seed in 0u64..200, lambda in 0.0f32..=1.0) {
            let mut rng = crate::util::seeded_rng(seed, "loc");
            let z = LatentGrid::new(Array3::from_shape_fn((2, 5, 5), |_| rng.random_range(-2.0f32..2.0)), 8).unwrap();
            let mask = MaskPlane::from_fn(5, 5, MaskKind::Dilated, |(y, x)| (y * 5 + x) % 3 == 0).unwrap();
            let out = step_adain(&z, &mask, lambda).unwrap();
            for ((y, x), inside) in mask.bits().indexed_iter() {
                if !*inside {
                    for c in 0..2 {
                        prop_assert_eq!(out.data()[[c, y, x]].to_bits(), z.data()[[c, y, x]].to_bits());
                    }
                }
            }
        }
    }
}
