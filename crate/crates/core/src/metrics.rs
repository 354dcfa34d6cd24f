//! Full-reference quality metrics.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable 'valid' filtering of a single-channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                acc += kv * plane[r * w + c + t];
            }
            rows[r * ow + c] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                acc += kv * rows[(r + t) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    out
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03,
/// dynamic range 1), averaged over the valid window positions and channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let window = gaussian_window();
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let pa: Vec<f64> = a.channel(ch).into_data();
        let pb: Vec<f64> = b.channel(ch).into_data();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&pa, h, w, &window);
        let mu_b = filter_valid(&pb, h, w, &window);
        let e_aa = filter_valid(&aa, h, w, &window);
        let e_bb = filter_valid(&bb, h, w, &window);
        let e_ab = filter_valid(&ab, h, w, &window);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn textured() -> ImageBuffer {
        ImageBuffer::from_fn(24, 20, 1, |r, c, _| ((r * 7 + c * 13) % 17) as f64 / 17.0)
    }

    #[test]
    fn psnr_known_values() {
        let a = ImageBuffer::filled(4, 4, 1, 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert_relative_eq!(psnr(&a, &b, 1.0).unwrap(), 20.0, epsilon = 1e-9);
        let c = a.map(|v| v + 0.01);
        assert_relative_eq!(psnr(&a, &c, 1.0).unwrap(), 40.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_shape_mismatch() {
        let a = ImageBuffer::zeros(4, 4, 1);
        let b = ImageBuffer::zeros(4, 5, 1);
        assert!(psnr(&a, &b, 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let t = textured();
        assert_relative_eq!(ssim(&t, &t).unwrap(), 1.0, epsilon = 1e-12);
        let half = ImageBuffer::filled(16, 16, 1, 0.5);
        assert_relative_eq!(ssim(&half, &half).unwrap(), 1.0, epsilon = 1e-12);
        let zero = ImageBuffer::filled(16, 16, 1, 0.0);
        let one = ImageBuffer::filled(16, 16, 1, 1.0);
        let c1 = 1e-4;
        let expected = c1 / (1.0 + c1);
        assert_relative_eq!(ssim(&zero, &one).unwrap(), expected, max_relative = 1e-9);
        assert_relative_eq!(expected, 9.999e-5, max_relative = 1e-4);
    }

    #[test]
    fn ssim_too_small() {
        let a = ImageBuffer::zeros(10, 30, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_drops_with_noise() {
        let t = textured();
        let n = t.map(|v| v * 0.5 + 0.2);
        let s = ssim(&t, &n).unwrap();
        assert!(s < 1.0 && s > -1.0);
    }
}
