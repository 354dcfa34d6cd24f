use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Separable Gaussian blur with radius `⌈3σ⌉` and replicated borders.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBlur {
    sigma_blur: f64,
    kernel: Vec<f64>,
}

impl GaussianBlur {
    pub fn new(sigma_blur: f64) -> Result<Self> {
        if !(sigma_blur > 0.0 && sigma_blur.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "blur width must be positive, got {sigma_blur}"
            )));
        }
        let radius = (3.0 * sigma_blur).ceil() as i64;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma_blur * sigma_blur)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        Ok(Self { sigma_blur, kernel })
    }

    pub fn sigma_blur(&self) -> f64 {
        self.sigma_blur
    }

    /// Normalized 1-D taps, centre at index `radius`.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    fn radius(&self) -> i64 {
        (self.kernel.len() / 2) as i64
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let tmp = self.pass(img, true);
        self.pass(&tmp, false)
    }

    /// Exact transpose of [`GaussianBlur::apply`]. Replicate padding makes
    /// the map non-symmetric near the borders, so taps that read a clamped
    /// pixel scatter back onto it.
    pub fn adjoint(&self, cot: &ImageBuffer) -> ImageBuffer {
        let tmp = self.pass_adjoint(cot, false);
        self.pass_adjoint(&tmp, true)
    }

    fn pass(&self, img: &ImageBuffer, horizontal: bool) -> ImageBuffer {
        let (h, w, ch) = (img.height(), img.width(), img.channels());
        let r = self.radius();
        let mut out = ImageBuffer::zeros(h, w, ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (t, k) in self.kernel.iter().enumerate() {
                        let d = t as i64 - r;
                        let (sy, sx) = if horizontal {
                            (y, clamp(x as i64 + d, w))
                        } else {
                            (clamp(y as i64 + d, h), x)
                        };
                        acc += k * img.get(sy, sx, c);
                    }
                    out.set(y, x, c, acc);
                }
            }
        }
        out
    }

    fn pass_adjoint(&self, cot: &ImageBuffer, horizontal: bool) -> ImageBuffer {
        let (h, w, ch) = (cot.height(), cot.width(), cot.channels());
        let r = self.radius();
        let mut out = ImageBuffer::zeros(h, w, ch);
        let data = out.data_mut();
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let g = cot.get(y, x, c);
                    for (t, k) in self.kernel.iter().enumerate() {
                        let d = t as i64 - r;
                        let (sy, sx) = if horizontal {
                            (y, clamp(x as i64 + d, w))
                        } else {
                            (clamp(y as i64 + d, h), x)
                        };
                        data[(sy * w + sx) * ch + c] += k * g;
                    }
                }
            }
        }
        out
    }
}

#[inline]
fn clamp(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn impulse_response_is_the_2d_kernel() {
        let blur = GaussianBlur::new(1.0).unwrap();
        assert_eq!(blur.kernel().len(), 7);
        let mut img = ImageBuffer::zeros(15, 15, 1);
        img.set(7, 7, 0, 1.0);
        let out = blur.apply(&img);
        // independent 2-D normalization over the (2r+1)² window
        let mut total = 0.0;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                total += (-((dy * dy + dx * dx) as f64) / 2.0).exp();
            }
        }
        assert_relative_eq!(out.get(7, 7, 0), 1.0 / total, max_relative = 1e-12);
        let off = (-(5.0f64) / 2.0).exp() / total;
        assert_relative_eq!(out.get(8, 9, 0), off, max_relative = 1e-12);
        let mass: f64 = out.data().iter().sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constants_are_preserved() {
        let blur = GaussianBlur::new(2.3).unwrap();
        let img = ImageBuffer::filled(6, 5, 3, 0.42);
        for v in blur.apply(&img).data() {
            assert_relative_eq!(*v, 0.42, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_width() {
        assert!(GaussianBlur::new(0.0).is_err());
        assert!(GaussianBlur::new(f64::NAN).is_err());
    }
}
