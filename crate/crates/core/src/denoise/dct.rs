//! Sliding-window 8×8 DCT soft thresholding.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const DCT_PATCH: usize = 8;
const P: usize = DCT_PATCH;

type Block = [[f64; P]; P];

/// Orthonormal DCT-II matrix, `C[k][n] = a_k cos(π(2n+1)k / 16)`.
fn dct_matrix() -> &'static Block {
    static MATRIX: OnceLock<Block> = OnceLock::new();
    MATRIX.get_or_init(|| {
        let mut m = [[0.0; P]; P];
        for (k, row) in m.iter_mut().enumerate() {
            let a = if k == 0 { (1.0 / P as f64).sqrt() } else { (2.0 / P as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (PI * (2 * n + 1) as f64 * k as f64 / (2 * P) as f64).cos();
            }
        }
        m
    })
}

/// `C · X · Cᵀ`
fn dct2(x: &Block) -> Block {
    let c = dct_matrix();
    let mut tmp = [[0.0; P]; P];
    for k in 0..P {
        for j in 0..P {
            let mut acc = 0.0;
            for n in 0..P {
                acc += c[k][n] * x[n][j];
            }
            tmp[k][j] = acc;
        }
    }
    let mut out = [[0.0; P]; P];
    for k in 0..P {
        for l in 0..P {
            let mut acc = 0.0;
            for j in 0..P {
                acc += tmp[k][j] * c[l][j];
            }
            out[k][l] = acc;
        }
    }
    out
}

/// `Cᵀ · D · C`
fn idct2(d: &Block) -> Block {
    let c = dct_matrix();
    let mut tmp = [[0.0; P]; P];
    for n in 0..P {
        for l in 0..P {
            let mut acc = 0.0;
            for k in 0..P {
                acc += c[k][n] * d[k][l];
            }
            tmp[n][l] = acc;
        }
    }
    let mut out = [[0.0; P]; P];
    for n in 0..P {
        for m in 0..P {
            let mut acc = 0.0;
            for l in 0..P {
                acc += tmp[n][l] * c[l][m];
            }
            out[n][m] = acc;
        }
    }
    out
}

/// Patch origins along one axis: multiples of `stride`, plus a final origin
/// flush with the far edge when the stride grid does not reach it. Axes
/// shorter than a patch are padded by replication.
fn origins(len: usize, stride: usize) -> Vec<usize> {
    let extent = len.max(P);
    let mut out: Vec<usize> = (0..=extent - P).step_by(stride).collect();
    if *out.last().unwrap() != extent - P {
        out.push(extent - P);
    }
    out
}

/// Denoises each 8×8 window on a stride grid by soft-thresholding its AC
/// DCT coefficients at `τ = threshold_factor·σ`, then averages the
/// overlapping reconstructions.
#[derive(Clone, Debug, PartialEq)]
pub struct DctThreshold {
    stride: usize,
    threshold_factor: f64,
}

impl DctThreshold {
    pub fn new(stride: usize, threshold_factor: f64) -> Result<Self> {
        if stride == 0 || stride > P {
            return Err(Error::InvalidArgument(format!(
                "DCT stride must be in 1..={P}, got {stride}"
            )));
        }
        if !(threshold_factor >= 0.0 && threshold_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold factor must be non-negative, got {threshold_factor}"
            )));
        }
        Ok(Self {
            stride,
            threshold_factor,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn threshold_factor(&self) -> f64 {
        self.threshold_factor
    }

    fn coverage(&self, h: usize, w: usize) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let rows = origins(h, self.stride);
        let cols = origins(w, self.stride);
        let mut count = vec![0.0; h * w];
        for &r0 in &rows {
            for &c0 in &cols {
                for i in 0..P.min(h - r0.min(h)) {
                    for j in 0..P.min(w - c0.min(w)) {
                        count[(r0 + i) * w + c0 + j] += 1.0;
                    }
                }
            }
        }
        (rows, cols, count)
    }

    /// Output plus, when `record` is set, one pass-through bitmask per
    /// (patch, channel) in row-major patch order.
    pub(super) fn forward(&self, img: &ImageBuffer, sigma: f64, record: bool) -> (ImageBuffer, Vec<u64>) {
        let (h, w, ch) = (img.height(), img.width(), img.channels());
        let tau = self.threshold_factor * sigma;
        let (rows, cols, count) = self.coverage(h, w);
        let mut sum = vec![0.0; h * w * ch];
        let mut masks = if record {
            Vec::with_capacity(rows.len() * cols.len() * ch)
        } else {
            Vec::new()
        };
        let last_r = h - 1;
        let last_c = w - 1;
        for &r0 in &rows {
            for &c0 in &cols {
                for c in 0..ch {
                    let mut block = [[0.0; P]; P];
                    for (i, row) in block.iter_mut().enumerate() {
                        let y = (r0 + i).min(last_r);
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = img.get(y, (c0 + j).min(last_c), c);
                        }
                    }
                    let mut coef = dct2(&block);
                    let mut mask = 1u64;
                    for (k, row) in coef.iter_mut().enumerate() {
                        for (l, d) in row.iter_mut().enumerate() {
                            if k == 0 && l == 0 {
                                continue;
                            }
                            let mag = d.abs() - tau;
                            if mag > 0.0 {
                                mask |= 1 << (k * P + l);
                                *d = d.signum() * mag;
                            } else {
                                *d = 0.0;
                            }
                        }
                    }
                    if record {
                        masks.push(mask);
                    }
                    let rec = idct2(&coef);
                    for (i, row) in rec.iter().enumerate() {
                        let y = r0 + i;
                        if y >= h {
                            break;
                        }
                        for (j, v) in row.iter().enumerate() {
                            let x = c0 + j;
                            if x >= w {
                                break;
                            }
                            sum[(y * w + x) * ch + c] += v;
                        }
                    }
                }
            }
        }
        for (i, v) in sum.iter_mut().enumerate() {
            *v /= count[i / ch];
        }
        (
            ImageBuffer::new(h, w, ch, sum).expect("finite output for finite input"),
            masks,
        )
    }

    pub(super) fn adjoint(&self, cot: &ImageBuffer, masks: &[u64]) -> ImageBuffer {
        let (h, w, ch) = (cot.height(), cot.width(), cot.channels());
        let (rows, cols, count) = self.coverage(h, w);
        let mut grad = vec![0.0; h * w * ch];
        let (last_r, last_c) = (h - 1, w - 1);
        let mut m = masks.iter();
        for &r0 in &rows {
            for &c0 in &cols {
                for c in 0..ch {
                    let mask = *m.next().expect("one mask per patch and channel");
                    let mut block = [[0.0; P]; P];
                    for (i, row) in block.iter_mut().enumerate() {
                        let y = r0 + i;
                        if y >= h {
                            break;
                        }
                        for (j, v) in row.iter_mut().enumerate() {
                            let x = c0 + j;
                            if x >= w {
                                break;
                            }
                            *v = cot.get(y, x, c) / count[y * w + x];
                        }
                    }
                    let mut coef = dct2(&block);
                    for (k, row) in coef.iter_mut().enumerate() {
                        for (l, d) in row.iter_mut().enumerate() {
                            if mask & (1 << (k * P + l)) == 0 {
                                *d = 0.0;
                            }
                        }
                    }
                    let back = idct2(&coef);
                    for (i, row) in back.iter().enumerate() {
                        let y = (r0 + i).min(last_r);
                        for (j, v) in row.iter().enumerate() {
                            grad[(y * w + (c0 + j).min(last_c)) * ch + c] += v;
                        }
                    }
                }
            }
        }
        ImageBuffer::new(h, w, ch, grad).expect("finite adjoint")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dct_is_orthonormal() {
        let c = dct_matrix();
        for a in 0..P {
            for b in 0..P {
                let dot: f64 = (0..P).map(|n| c[a][n] * c[b][n]).sum();
                assert_relative_eq!(dot, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn origin_grid_covers_edges() {
        assert_eq!(origins(8, 4), vec![0]);
        assert_eq!(origins(16, 4), vec![0, 4, 8]);
        assert_eq!(origins(18, 4), vec![0, 4, 8, 10]);
        assert_eq!(origins(5, 4), vec![0]);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let d = DctThreshold::new(4, 3.0).unwrap();
        let img = ImageBuffer::filled(21, 13, 1, 0.37);
        let (out, _) = d.forward(&img, 0.1, false);
        for v in out.data() {
            assert_relative_eq!(*v, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_threshold_is_identity() {
        let d = DctThreshold::new(3, 0.0).unwrap();
        let mut rng = seeded(4);
        let img = ImageBuffer::from_fn(19, 23, 3, |_, _, _| rng.random::<f64>());
        let (out, _) = d.forward(&img, 0.1, false);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn small_images_are_padded() {
        let d = DctThreshold::new(4, 3.0).unwrap();
        let img = ImageBuffer::filled(5, 6, 1, 0.8);
        let (out, _) = d.forward(&img, 0.1, false);
        assert_eq!((out.height(), out.width()), (5, 6));
        for v in out.data() {
            assert_relative_eq!(*v, 0.8, epsilon = 1e-12);
        }
    }

    #[test]
    fn reduces_gaussian_noise() {
        let sigma = 0.1;
        let d = DctThreshold::new(4, 3.0).unwrap();
        let mut rng = seeded(21);
        let normal = Normal::new(0.0, sigma).unwrap();
        let img = ImageBuffer::from_fn(64, 64, 1, |_, _, _| 0.5 + normal.sample(&mut rng));
        let (out, _) = d.forward(&img, sigma, false);
        let resid: f64 = out.data().iter().map(|v| (v - 0.5) * (v - 0.5)).sum::<f64>() / 4096.0;
        assert!(resid.sqrt() < 0.5 * sigma, "residual std {}", resid.sqrt());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DctThreshold::new(0, 3.0).is_err());
        assert!(DctThreshold::new(9, 3.0).is_err());
        assert!(DctThreshold::new(4, -1.0).is_err());
    }
}
