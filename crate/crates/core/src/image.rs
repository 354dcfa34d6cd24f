//! Dense floating-point images and training patch sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// H×W×C grid of samples stored row-major with interleaved channels.
///
/// Values are nominally in `[0, 1]` but are never clamped inside the
/// pipeline; clamping only happens when writing integer formats.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::InvalidArgument(format!(
                "channel count must be 1, 3 or 4, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image sample at index {pos}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant image. Panics on an invalid shape.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("valid image shape")
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image from `f(row, col, channel)`. Panics on an invalid shape.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data).expect("valid image shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )))
        }
    }

    /// Same-shape image with `f` applied to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sum of elementwise products, accumulated left to right.
    pub fn dot(&self, other: &ImageBuffer) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(pos) => Err(Error::NonFinite(format!("{context}: sample {pos}"))),
        }
    }

    /// Single-channel image holding channel `ch`.
    pub fn channel(&self, ch: usize) -> ImageBuffer {
        ImageBuffer::from_fn(self.height, self.width, 1, |r, c, _| self.get(r, c, ch))
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ImageBuffer> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({row}, {col}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(ImageBuffer::from_fn(height, width, self.channels, |r, c, ch| {
            self.get(row + r, col + c, ch)
        }))
    }

    /// Mirror left-right.
    pub fn flip_h(&self) -> ImageBuffer {
        let w = self.width;
        ImageBuffer::from_fn(self.height, w, self.channels, |r, c, ch| {
            self.get(r, w - 1 - c, ch)
        })
    }

    /// Mirror top-bottom.
    pub fn flip_v(&self) -> ImageBuffer {
        let h = self.height;
        ImageBuffer::from_fn(h, self.width, self.channels, |r, c, ch| {
            self.get(h - 1 - r, c, ch)
        })
    }

    /// Rotate counter-clockwise by `quarter_turns` × 90°.
    pub fn rot90(&self, quarter_turns: u8) -> ImageBuffer {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            let src = out;
            let (h, w) = (src.height, src.width);
            out = ImageBuffer::from_fn(w, h, src.channels, |r, c, ch| src.get(c, w - 1 - r, ch));
        }
        out
    }
}

/// Augmentation applied to one training crop, in the order flips then rotation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augmentation {
    pub flip_h: bool,
    pub flip_v: bool,
    pub rot90_count: u8,
}

impl Augmentation {
    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let mut out = img.clone();
        if self.flip_h {
            out = out.flip_h();
        }
        if self.flip_v {
            out = out.flip_v();
        }
        out.rot90(self.rot90_count)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchBatch {
    pub patches: Vec<ImageBuffer>,
    pub source_offsets: Vec<(usize, usize)>,
    pub augmentations: Vec<Augmentation>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Draws `batch` random square crops of side `min(patch, height, width)`,
/// each followed by random flips and a random quarter-turn rotation.
pub fn sample_training_batch(
    img: &ImageBuffer,
    rng: &mut SeededRng,
    patch: usize,
    batch: usize,
) -> PatchBatch {
    let side = patch.min(img.height()).min(img.width()).max(1);
    let mut out = PatchBatch {
        patches: Vec::with_capacity(batch),
        source_offsets: Vec::with_capacity(batch),
        augmentations: Vec::with_capacity(batch),
    };
    for _ in 0..batch {
        let row = rng.random_range(0..=img.height() - side);
        let col = rng.random_range(0..=img.width() - side);
        let aug = Augmentation {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            rot90_count: rng.random_range(0..4u8),
        };
        let crop = img.crop(row, col, side, side).expect("crop inside image");
        out.patches.push(aug.apply(&crop));
        out.source_offsets.push((row, col));
        out.augmentations.push(aug);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ramp(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 1, |r, c, _| (r * w + c) as f64)
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(0, 2, 1, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn rotation_is_counter_clockwise() {
        let img = ImageBuffer::from_fn(2, 3, 1, |r, c, _| (r * 3 + c) as f64);
        // 0 1 2      2 5
        // 3 4 5  ->  1 4
        //            0 3
        let r = img.rot90(1);
        assert_eq!((r.height(), r.width()), (3, 2));
        assert_eq!(r.data(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
        assert_eq!(img.rot90(4), img);
        assert_eq!(img.rot90(2), img.flip_h().flip_v());
    }

    #[test]
    fn batch_is_deterministic() {
        let img = ramp(40, 50);
        let a = sample_training_batch(&img, &mut seeded(3), 16, 6);
        let b = sample_training_batch(&img, &mut seeded(3), 16, 6);
        assert_eq!(a, b);
        for (p, &(r, c)) in a.patches.iter().zip(&a.source_offsets) {
            assert_eq!((p.height(), p.width()), (16, 16));
            assert!(r + 16 <= 40 && c + 16 <= 50);
        }
    }

    #[test]
    fn forced_crop_when_patch_matches_image() {
        let img = ramp(64, 64);
        let batch = sample_training_batch(&img, &mut seeded(11), 64, 12);
        for (p, aug) in batch.patches.iter().zip(&batch.augmentations) {
            assert_eq!(*p, aug.apply(&img));
        }
        assert!(batch.source_offsets.iter().all(|&o| o == (0, 0)));
    }

    #[test]
    fn patch_shrinks_to_small_images() {
        let img = ramp(10, 9);
        let batch = sample_training_batch(&img, &mut seeded(0), 64, 2);
        assert_eq!(batch.patches[0].height(), 9);
    }
}
