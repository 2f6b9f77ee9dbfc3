//! Seeded synthetic data with known generative structure.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::feature::{FeatureSource, PromptFeature};
use super::triplets::StyleTriplet;

/// Triplets with `f_l = a·f_c + b·f_s`.
///
/// By default every token entry of `f_c` and `f_s` is standard normal. A
/// projected world instead draws a `latent`-dimensional embedding per image
/// and maps it to tokens through one fixed random projection shared by
/// content and style, the way adapter tokens are produced from a single
/// image embedding. Entries stay unit-variance either way.
#[derive(Debug, Clone, Copy)]
pub struct LinearWorld {
    pub tokens: usize,
    pub dim: usize,
    pub a: f32,
    pub b: f32,
    pub seed: u64,
    pub latent: Option<usize>,
}

impl LinearWorld {
    pub fn new(tokens: usize, dim: usize, a: f32, b: f32, seed: u64) -> Self {
        Self { tokens, dim, a, b, seed, latent: None }
    }

    pub fn projected(tokens: usize, dim: usize, latent: usize, a: f32, b: f32, seed: u64) -> Self {
        Self {
            latent: Some(latent.max(1)),
            ..Self::new(tokens, dim, a, b, seed)
        }
    }

    fn projection(&self, k: usize) -> Array2<f32> {
        let mut rng = crate::util::seeded_rng(self.seed, "linear-world-projection");
        let scale = 1.0 / (k as f32).sqrt();
        Array2::from_shape_fn((self.tokens * self.dim, k), |_| rng.sample::<f32, _>(StandardNormal) * scale)
    }

    fn gaussian(&self, rng: &mut impl Rng, proj: Option<&Array2<f32>>, source: FeatureSource) -> PromptFeature {
        let t = match proj {
            None => Array2::from_shape_fn((self.tokens, self.dim), |_| rng.sample::<f32, _>(StandardNormal)),
            Some(p) => {
                let e = ndarray::Array1::from_shape_fn(p.ncols(), |_| rng.sample::<f32, _>(StandardNormal));
                p.dot(&e).into_shape_with_order((self.tokens, self.dim)).expect("projection rows match")
            }
        };
        PromptFeature::new(t, source).expect("finite gaussian")
    }

    /// `n` triplets from an independent stream labelled by `stream`.
    pub fn sample(&self, n: usize, stream: u64) -> Vec<StyleTriplet> {
        let mut rng = crate::util::seeded_rng(self.seed ^ stream.rotate_left(32), "linear-world");
        let proj = self.latent.map(|k| self.projection(k));
        (0..n)
            .map(|_| {
                let f_c = self.gaussian(&mut rng, proj.as_ref(), FeatureSource::ImageContent);
                let f_s = self.gaussian(&mut rng, proj.as_ref(), FeatureSource::ImageStyle);
                let f_l = self.stylize(&f_c, &f_s);
                StyleTriplet::new(f_c, f_s, f_l).expect("same shapes")
            })
            .collect()
    }

    pub fn stylize(&self, f_c: &PromptFeature, f_s: &PromptFeature) -> PromptFeature {
        let t = f_c.tokens() * self.a + f_s.tokens() * self.b;
        PromptFeature::new(t, FeatureSource::ImageContent).expect("finite")
    }

    /// Closed-form optimum of the residual objective for this world.
    pub fn oracle_residual(&self, f_c: &PromptFeature, f_s: &PromptFeature) -> PromptFeature {
        let t = f_c.tokens() * (1.0 - self.a) + f_s.tokens() * (1.0 - self.b);
        PromptFeature::new(t, FeatureSource::Integrated).expect("finite")
    }
}

/// Gaussian classes whose means sit on a circle inside a random 2D subspace,
/// neighbouring means `separation` standard deviations apart.
#[derive(Debug, Clone, Copy)]
pub struct CircleClasses {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl CircleClasses {
    pub fn sample(&self) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = crate::util::seeded_rng(self.seed, "circle-classes");
        let basis = random_orthonormal_pair(self.dim, &mut rng);
        let k = self.n_classes.max(1) as f64;
        // chord between neighbours equals separation·sigma
        let radius = if self.n_classes > 1 {
            self.separation * self.sigma / (2.0 * (std::f64::consts::PI / k).sin())
        } else {
            0.0
        };
        let mut xs = Vec::with_capacity(self.n_classes * self.per_class);
        let mut ys = Vec::with_capacity(xs.capacity());
        for c in 0..self.n_classes {
            let theta = 2.0 * std::f64::consts::PI * c as f64 / k;
            let (u, v) = (radius * theta.cos(), radius * theta.sin());
            for _ in 0..self.per_class {
                let x: Vec<f64> = (0..self.dim)
                    .map(|d| {
                        u * basis.0[d] + v * basis.1[d] + self.sigma * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect();
                xs.push(x);
                ys.push(c);
            }
        }
        (xs, ys)
    }
}

fn random_orthonormal_pair(dim: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let mut draw = || -> Vec<f64> { (0..dim).map(|_| rng.sample(StandardNormal)).collect() };
    let norm = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    let mut a = draw();
    norm(&mut a);
    let mut b = draw();
    let d: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    b.iter_mut().zip(&a).for_each(|(y, x)| *y -= d * x);
    norm(&mut b);
    (a, b)
}
