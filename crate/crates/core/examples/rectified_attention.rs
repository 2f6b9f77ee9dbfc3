//! Masked cross-attention on a tiny random instance: rows outside the mask
//! come back as zeros, rows inside match plain softmax attention.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

use xcompose::guidance::{rectified_cross_attention, Projection};
use xcompose::integrator::{FeatureSource, PromptFeature};

fn random(rng: &mut StdRng, rows: usize, cols: usize) -> Array2<f32> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn main() -> xcompose::Result<()> {
    let mut rng = StdRng::seed_from_u64(3);
    let (n, t, d) = (6, 4, 8);
    let z = random(&mut rng, n, d);
    let f = PromptFeature::new(random(&mut rng, t, d), FeatureSource::ImageContent)?;
    let w = Projection::new(random(&mut rng, d, d), random(&mut rng, d, d), random(&mut rng, d, d))?;

    let mask = [true, false, true, true, false, true];
    let masked = rectified_cross_attention(z.view(), &f, &w, &mask)?;
    let open = rectified_cross_attention(z.view(), &f, &w, &[true; 6])?;
    for (i, inside) in mask.iter().enumerate() {
        let diff = masked.row(i).iter().zip(open.row(i)).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        let norm = masked.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
        println!("query {i}: in mask {:<5} |a| = {norm:.4}  max |masked - open| = {diff:.2e}", inside);
    }
    Ok(())
}
