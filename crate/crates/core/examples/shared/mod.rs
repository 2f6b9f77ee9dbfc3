//! Synthetic scene shared by the examples.

#![allow(dead_code)]

use std::path::PathBuf;

use xcompose::core_model::{ImagePlane, MaskKind, MaskPlane, Placement, Rect};
use xcompose::pipeline::CompositionJob;

/// Sky over ground, 128 px square.
pub fn background() -> ImagePlane {
    ImagePlane::from_fn(128, 128, |y, x, c| {
        let (fy, fx) = (y as f32 / 128.0, x as f32 / 128.0);
        if fy < 0.55 {
            [0.55 + 0.3 * fx, 0.7, 0.9 - 0.2 * fy][c]
        } else {
            [0.25, 0.45 + 0.2 * fx, 0.2 + 0.1 * fy][c]
        }
    })
    .unwrap()
}

/// A striped disk on white and its silhouette.
pub fn foreground(size: usize) -> (ImagePlane, MaskPlane) {
    let (r, c) = (size as f32 * 0.4, size as f32 / 2.0);
    let inside = move |y: usize, x: usize| {
        let (dy, dx) = (y as f32 + 0.5 - c, x as f32 + 0.5 - c);
        dy * dy + dx * dx <= r * r
    };
    let img = ImagePlane::from_fn(size, size, |y, x, ch| {
        if !inside(y, x) {
            return 1.0;
        }
        let stripe = ((x / 4) % 2) as f32;
        [0.8 - 0.5 * stripe, 0.2 + 0.3 * stripe, 0.15][ch]
    })
    .unwrap();
    let mask = MaskPlane::from_fn(size, size, MaskKind::FgObject, |(y, x)| inside(y, x)).unwrap();
    (img, mask)
}

pub fn scene() -> CompositionJob {
    let (fg, mask) = foreground(48);
    let bx = MaskPlane::rect(128, 128, Rect::new(40, 48, 48, 48), MaskKind::BgBox).unwrap();
    CompositionJob::new(background(), fg, mask, Placement::new(40, 48, 1.0)).with_bg_box(bx)
}

/// First CLI argument, or `example-output/<name>`.
pub fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("example-output").join(name));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
