//! Deterministic procedural clean images in `[0, 1]`, used by the
//! evaluation harness when no real test images are supplied.

use rand::Rng;

use crate::image::ImageBuffer;
use crate::rng::seeded;

pub const SCENES: [&str; 3] = ["shapes", "waves", "mosaic"];

/// Horizontal linear ramp from `lo` (left) to `hi` (right).
pub fn ramp(height: usize, width: usize, lo: f64, hi: f64) -> ImageBuffer {
    let span = (width.max(2) - 1) as f64;
    ImageBuffer::from_fn(height, width, 1, |_, c, _| lo + (hi - lo) * c as f64 / span)
}

/// Horizontal ramp from `lo` to `hi` with alternating bands of `band` rows
/// raised by `step`, so that every intensity level sits next to an edge.
pub fn banded_ramp(size: usize, lo: f64, hi: f64, band: usize, step: f64) -> ImageBuffer {
    let base = ramp(size, size, lo, hi);
    let band = band.max(1);
    ImageBuffer::from_fn(size, size, 1, |r, c, _| {
        base.get(r, c, 0) + if (r / band).is_multiple_of(2) { step } else { 0.0 }
    })
}

/// Looks up a scene by name; `None` if unknown.
pub fn scene(name: &str, size: usize) -> Option<ImageBuffer> {
    match name {
        "shapes" => Some(shapes(size)),
        "waves" => Some(waves(size)),
        "mosaic" => Some(mosaic(size)),
        _ => None,
    }
}

/// Smooth background with overlapping disks and rectangles of varied
/// brightness.
pub fn shapes(size: usize) -> ImageBuffer {
    let mut rng = seeded(0x5ba9e5);
    let s = size as f64;
    let mut img = ImageBuffer::from_fn(size, size, 1, |r, c, _| {
        0.25 + 0.35 * (r as f64 / s) + 0.1 * (c as f64 / s)
    });
    for k in 0..14 {
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let rad = rng.random_range(0.04..0.18) * s;
        let level = rng.random_range(0.05..0.95);
        for r in 0..size {
            for c in 0..size {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let inside = if k % 2 == 0 {
                    dy * dy + dx * dx <= rad * rad
                } else {
                    dy.abs() <= rad && dx.abs() <= 0.6 * rad
                };
                if inside {
                    img.set(r, c, 0, level);
                }
            }
        }
    }
    img
}

/// Superposed oriented sinusoids with slowly varying amplitude.
pub fn waves(size: usize) -> ImageBuffer {
    let s = size as f64;
    let tau = std::f64::consts::TAU;
    ImageBuffer::from_fn(size, size, 1, |r, c, _| {
        let (y, x) = (r as f64 / s, c as f64 / s);
        let env = 0.5 + 0.5 * (tau * 0.7 * y).sin() * (tau * 0.5 * x).cos();
        let v = 0.5
            + 0.18 * (tau * (6.0 * x + 2.0 * y)).sin()
            + 0.12 * env * (tau * (3.0 * x - 9.0 * y)).cos()
            + 0.1 * (tau * 1.3 * (x + y)).sin();
        v.clamp(0.0, 1.0)
    })
}

/// Piecewise-constant tiles with some tiles carrying a fine stripe texture.
pub fn mosaic(size: usize) -> ImageBuffer {
    let mut rng = seeded(0x3051ac);
    let tile = (size / 8).max(1);
    let tiles = size.div_ceil(tile);
    let levels: Vec<(f64, bool)> = (0..tiles * tiles)
        .map(|_| (rng.random_range(0.08..0.92), rng.random_bool(0.3)))
        .collect();
    ImageBuffer::from_fn(size, size, 1, |r, c, _| {
        let (level, striped) = levels[(r / tile) * tiles + c / tile];
        if striped && (r + c) % 6 < 3 {
            (level + 0.12).min(1.0)
        } else {
            level
        }
    })
}
