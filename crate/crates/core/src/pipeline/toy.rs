//! Desk-scale backbone with exactly invertible components.
//!
//! - Autoencoder: 8× pixel-unshuffle into `3·8·8` channels; decode is the
//!   inverse followed by clamping.
//! - Denoiser: `Identity` returns its input, `Linear` applies a fixed
//!   orthogonal channel mixing between scheduler-scaled noise terms so that
//!   an inversion step is undone exactly by the matching denoise step.
//! - Features: seeded projection of image statistics to `T×D` tokens, and
//!   hash-seeded text tokens.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::backbone::{AttentionHook, Backbone, BackboneProfile, Capabilities, CrossAttentionSite, StepContext};
use super::schedule::NoiseSchedule;
use crate::core_model::{ImagePlane, LatentGrid};
use crate::error::{Error, Result};
use crate::guidance::{LayerWeights, Projection};
use crate::integrator::{FeatureEncoder, FeatureSource, PromptFeature};
use crate::util::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ToyDenoiser {
    Identity,
    #[default]
    Linear,
}

/// Statistics vector width: channel means and stds, a 4×4 grid of mean
/// colours, and a constant.
pub const TOY_STAT_WIDTH: usize = 3 + 3 + 4 * 4 * 3 + 1;

/// Projection width of attention keys and queries.
pub const TOY_KEY_WIDTH: usize = 16;

/// Deterministic image-statistics encoder.
#[derive(Debug, Clone)]
pub struct StatFeatureEncoder {
    tokens: usize,
    dim: usize,
    projection: Array2<f32>,
}

impl StatFeatureEncoder {
    pub fn new(tokens: usize, dim: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed, "toy-image-encoder");
        let scale = 1.0 / (TOY_STAT_WIDTH as f32).sqrt();
        let projection = Array2::from_shape_fn((tokens * dim, TOY_STAT_WIDTH), |_| {
            rng.sample::<f32, _>(StandardNormal) * scale * 4.0
        });
        Self { tokens, dim, projection }
    }

    pub fn statistics(img: &ImagePlane) -> Vec<f32> {
        let px = img.pixels();
        let (h, w) = img.dims();
        let mut out = Vec::with_capacity(TOY_STAT_WIDTH);
        let n = (h * w) as f64;
        let mut means = [0.0f64; 3];
        for ((_, _, c), v) in px.indexed_iter() {
            means[c] += *v as f64;
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = [0.0f64; 3];
        for ((_, _, c), v) in px.indexed_iter() {
            vars[c] += (*v as f64 - means[c]).powi(2);
        }
        out.extend(means.iter().map(|m| *m as f32));
        out.extend(vars.iter().map(|v| (v / n).sqrt() as f32));
        for gy in 0..4 {
            for gx in 0..4 {
                let (y0, y1) = (gy * h / 4, (gy + 1) * h / 4);
                let (x0, x1) = (gx * w / 4, (gx + 1) * w / 4);
                let cells = ((y1 - y0) * (x1 - x0)).max(1) as f64;
                for c in 0..3 {
                    let mut s = 0.0f64;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            s += px[[y, x, c]] as f64;
                        }
                    }
                    out.push((s / cells) as f32);
                }
            }
        }
        out.push(1.0);
        out
    }

    pub fn encode(&self, img: &ImagePlane) -> Result<PromptFeature> {
        let s = ndarray::Array1::from_vec(Self::statistics(img));
        let flat = self.projection.dot(&s);
        PromptFeature::from_flat(flat.as_slice().expect("contiguous"), self.tokens, self.dim, FeatureSource::ImageContent)
    }
}

impl FeatureEncoder for StatFeatureEncoder {
    fn encode_image(&mut self, img: &ImagePlane) -> Result<PromptFeature> {
        self.encode(img)
    }
}

fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Array2<f32> {
    let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = m.qr().q();
    Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)] as f32)
}

fn projection(d_model: usize, d_tokens: usize, gain: f32, rng: &mut impl Rng) -> Projection {
    let mut g = |rows: usize, cols: usize, scale: f32| {
        Array2::from_shape_fn((rows, cols), |_| rng.sample::<f32, _>(StandardNormal) * scale)
    };
    let w_q = g(d_model, TOY_KEY_WIDTH, 1.0 / (d_model as f32).sqrt());
    let w_k = g(d_tokens, TOY_KEY_WIDTH, 1.0 / (d_tokens as f32).sqrt());
    let w_v = g(d_tokens, d_model, gain / (d_tokens as f32).sqrt());
    Projection::new(w_q, w_k, w_v).expect("consistent toy shapes")
}

/// Toy backbone; see the module docs.
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    profile: BackboneProfile,
    kind: ToyDenoiser,
    schedule: NoiseSchedule,
    mixing: Array2<f32>,
    encoder: StatFeatureEncoder,
    text_proj: Projection,
    image_proj: Projection,
    seed: u64,
}

impl ToyBackbone {
    pub fn new(profile: BackboneProfile, kind: ToyDenoiser, seed: u64) -> Result<Self> {
        let c = profile.latent_channels;
        if c != 3 * profile.scale_factor * profile.scale_factor {
            return Err(Error::invalid("toy latent channels must equal 3·scale_factor²"));
        }
        let schedule = NoiseSchedule::scaled_linear(profile.schedule.clone())?;
        let mut rng = seeded_rng(seed, "toy-backbone");
        let mixing = random_orthogonal(c, &mut rng);
        let text_proj = projection(c, profile.token_dim, 0.05, &mut rng);
        let image_proj = projection(c, profile.token_dim, 0.05, &mut rng);
        let encoder = StatFeatureEncoder::new(profile.image_tokens, profile.token_dim, seed);
        Ok(Self {
            profile,
            kind,
            schedule,
            mixing,
            encoder,
            text_proj,
            image_proj,
            seed,
        })
    }

    pub fn linear(seed: u64) -> Self {
        Self::new(BackboneProfile::toy(), ToyDenoiser::Linear, seed).expect("toy profile is valid")
    }

    pub fn identity(seed: u64) -> Self {
        Self::new(BackboneProfile::toy(), ToyDenoiser::Identity, seed).expect("toy profile is valid")
    }

    pub fn kind(&self) -> ToyDenoiser {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_encoder(&self) -> &StatFeatureEncoder {
        &self.encoder
    }

    pub fn text_projection(&self) -> &Projection {
        &self.text_proj
    }

    pub fn image_projection(&self) -> &Projection {
        &self.image_proj
    }

    /// Noise shared by the two directions of one schedule interval.
    fn interval_noise(&self, shape: (usize, usize, usize), t_a: usize, t_b: usize, seed: u64) -> Array3<f32> {
        let (lo, hi) = (t_a.min(t_b), t_a.max(t_b));
        let mut rng = seeded_rng(seed, &format!("toy-noise-{lo}-{hi}"));
        Array3::from_shape_fn(shape, |_| rng.sample(StandardNormal))
    }

    fn check_latent(&self, z: &LatentGrid) -> Result<()> {
        if z.channels() != self.profile.latent_channels || z.scale_factor() != self.profile.scale_factor {
            return Err(Error::invalid(format!(
                "latent has {} channels at factor {}, backbone expects {} at {}",
                z.channels(),
                z.scale_factor(),
                self.profile.latent_channels,
                self.profile.scale_factor
            )));
        }
        Ok(())
    }

    fn mix(&self, rows: &Array2<f32>, transpose: bool) -> Array2<f32> {
        if transpose {
            rows.dot(&self.mixing)
        } else {
            rows.dot(&self.mixing.t())
        }
    }
}

impl FeatureEncoder for ToyBackbone {
    fn encode_image(&mut self, img: &ImagePlane) -> Result<PromptFeature> {
        self.encoder.encode(img)
    }
}

impl Backbone for ToyBackbone {
    fn profile(&self) -> &BackboneProfile {
        &self.profile
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn encode(&mut self, img: &ImagePlane) -> Result<LatentGrid> {
        let f = self.profile.scale_factor;
        let (h, w) = img.dims();
        if h % f != 0 || w % f != 0 {
            return Err(Error::invalid(format!("image {w}x{h} is not divisible by {f}")));
        }
        let px = img.pixels();
        let data = Array3::from_shape_fn((3 * f * f, h / f, w / f), |(ch, y, x)| {
            let c = ch % 3;
            let offset = ch / 3;
            let (dy, dx) = (offset / f, offset % f);
            px[[y * f + dy, x * f + dx, c]]
        });
        LatentGrid::new(data, f)
    }

    fn decode(&mut self, z: &LatentGrid) -> Result<ImagePlane> {
        self.check_latent(z)?;
        let f = self.profile.scale_factor;
        let (_, h, w) = z.dims();
        let d = z.data();
        let px = Array3::from_shape_fn((h * f, w * f, 3), |(y, x, c)| {
            let ch = ((y % f) * f + (x % f)) * 3 + c;
            d[[ch, y / f, x / f]].clamp(0.0, 1.0)
        });
        ImagePlane::new(px)
    }

    fn image_features(&mut self, img: &ImagePlane) -> Result<PromptFeature> {
        self.encoder.encode(img)
    }

    fn text_features(&mut self, prompt: &str) -> Result<PromptFeature> {
        let digest = crate::util::sha256_hex(prompt.as_bytes());
        let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = seeded_rng(seed ^ self.seed, "toy-text");
        let t = Array2::from_shape_fn((self.profile.text_tokens, self.profile.token_dim), |_| {
            rng.sample::<f32, _>(StandardNormal)
        });
        PromptFeature::new(t, FeatureSource::Text)
    }

    fn inversion_prompt(&self) -> PromptFeature {
        PromptFeature::zeros(self.profile.text_tokens, self.profile.token_dim, FeatureSource::Text)
    }

    fn invert_step(&mut self, z: &LatentGrid, step: &StepContext, _cond: &PromptFeature) -> Result<LatentGrid> {
        self.check_latent(z)?;
        if step.t_to <= step.t_from {
            return Err(Error::Backbone {
                op: "invert_step",
                detail: format!("timestep must increase, got {} → {}", step.t_from, step.t_to),
            });
        }
        if self.kind == ToyDenoiser::Identity {
            return Ok(z.clone());
        }
        let (c, h, w) = z.dims();
        let n = self.interval_noise((c, h, w), step.t_from, step.t_to, step.seed);
        let (a_s, s_s) = self.schedule.alpha_sigma(step.t_from);
        let (a_t, s_t) = self.schedule.alpha_sigma(step.t_to);
        let x0 = (&z.data() - &(&n * s_s as f32)) / a_s as f32;
        let x0 = LatentGrid::new(x0, z.scale_factor())?;
        let mixed = self.mix(&x0.to_cell_rows(), false);
        let mixed = LatentGrid::from_cell_rows(&mixed, h, w, z.scale_factor())?.into_data();
        LatentGrid::new(mixed * a_t as f32 + n * s_t as f32, z.scale_factor())
    }

    fn denoise_step(
        &mut self,
        z: &LatentGrid,
        step: &StepContext,
        _cond: &PromptFeature,
        hook: &mut dyn AttentionHook,
    ) -> Result<LatentGrid> {
        self.check_latent(z)?;
        if step.t_to >= step.t_from {
            return Err(Error::Backbone {
                op: "denoise_step",
                detail: format!("timestep must decrease, got {} → {}", step.t_from, step.t_to),
            });
        }
        let (c, h, w) = z.dims();
        let site = CrossAttentionSite {
            layer: 0,
            height: h,
            width: w,
            weights: LayerWeights {
                text: &self.text_proj,
                image: &self.image_proj,
            },
        };
        if self.kind == ToyDenoiser::Identity {
            let mut rows = z.to_cell_rows();
            hook.cross_attention(&site, &mut rows)?;
            return LatentGrid::from_cell_rows(&rows, h, w, z.scale_factor());
        }
        let n = self.interval_noise((c, h, w), step.t_from, step.t_to, step.seed);
        let (a_t, s_t) = self.schedule.alpha_sigma(step.t_from);
        let (a_s, s_s) = self.schedule.alpha_sigma(step.t_to);
        let unnoised = LatentGrid::new(&z.data() - &(&n * s_t as f32), z.scale_factor())?;
        let mut x0 = self.mix(&unnoised.to_cell_rows(), true);
        x0.mapv_inplace(|v| v / a_t as f32);
        hook.cross_attention(&site, &mut x0)?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                context: format!("toy denoise step {}", step.index),
                detail: "non-finite latent".into(),
            });
        }
        let x0 = LatentGrid::from_cell_rows(&x0, h, w, z.scale_factor())?.into_data();
        LatentGrid::new(x0 * a_s as f32 + n * s_s as f32, z.scale_factor())
    }

    fn forward_noise(&self, z0: &LatentGrid, t: usize, seed: u64) -> Result<LatentGrid> {
        self.check_latent(z0)?;
        if t == 0 {
            return Ok(z0.clone());
        }
        let mut rng = seeded_rng(seed, &format!("toy-forward-{t}"));
        let (a, s) = self.schedule.alpha_sigma(t);
        let data = z0.data().mapv(|v| a as f32 * v + s as f32 * rng.sample::<f32, _>(StandardNormal));
        LatentGrid::new(data, z0.scale_factor())
    }
}
