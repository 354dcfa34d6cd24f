//! Blind-spot wrapping of an arbitrary denoiser by partition masking.
//!
//! Pixels are split into `k²` classes by their coordinates modulo `k`. For
//! a class `J`, every pixel of `J` is replaced by the mean of its
//! neighbours, the denoiser runs on that hybrid image, and only the
//! outputs at `J` are kept. Because same-class pixels are at least `k ≥ 2`
//! apart, the output at pixel `i` never sees the input at `i`.

use arrayvec::ArrayVec;

use crate::denoise::{Denoiser, Linearization};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const DEFAULT_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PartitionClass {
    pub row_offset: usize,
    pub col_offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partition {
    stride: usize,
}

impl Partition {
    pub fn new(stride: usize) -> Result<Self> {
        if stride < 2 {
            return Err(Error::InvalidArgument(format!(
                "partition stride must be at least 2, got {stride}"
            )));
        }
        Ok(Self { stride })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn class_count(&self) -> usize {
        self.stride * self.stride
    }

    /// Class number `index` in row-major offset order.
    pub fn class(&self, index: usize) -> PartitionClass {
        PartitionClass {
            row_offset: index / self.stride,
            col_offset: index % self.stride,
        }
    }

    pub fn classes(&self) -> impl Iterator<Item = PartitionClass> + '_ {
        (0..self.class_count()).map(|i| self.class(i))
    }

    #[inline]
    pub fn contains(&self, class: PartitionClass, row: usize, col: usize) -> bool {
        row % self.stride == class.row_offset && col % self.stride == class.col_offset
    }

    /// Per-pixel membership of `class` on an `h × w` grid.
    pub fn mask(&self, class: PartitionClass, h: usize, w: usize) -> Vec<bool> {
        let mut m = vec![false; h * w];
        for r in (class.row_offset..h).step_by(self.stride) {
            for c in (class.col_offset..w).step_by(self.stride) {
                m[r * w + c] = true;
            }
        }
        m
    }
}

impl Default for Partition {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassSelector {
    One(PartitionClass),
    All,
}

/// Mean of the in-image 8-neighbours of each pixel, per channel.
///
/// Neighbours outside the image are dropped rather than replicated, since a
/// replicated border would feed a pixel's own value into its average.
pub fn eta(img: &ImageBuffer) -> ImageBuffer {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = ImageBuffer::zeros(h, w, ch);
    for r in 0..h {
        for c in 0..w {
            let nb = neighbours(r, c, h, w);
            let weight = if nb.is_empty() { 0.0 } else { 1.0 / nb.len() as f64 };
            for k in 0..ch {
                let mut acc = 0.0;
                for &(y, x) in &nb {
                    acc += img.get(y, x, k);
                }
                out.set(r, c, k, acc * weight);
            }
        }
    }
    out
}

/// Transpose of [`eta`].
pub fn eta_adjoint(cot: &ImageBuffer) -> ImageBuffer {
    let (h, w, ch) = (cot.height(), cot.width(), cot.channels());
    let mut out = ImageBuffer::zeros(h, w, ch);
    let data = out.data_mut();
    for r in 0..h {
        for c in 0..w {
            let nb = neighbours(r, c, h, w);
            if nb.is_empty() {
                continue;
            }
            let weight = 1.0 / nb.len() as f64;
            for k in 0..ch {
                let g = cot.get(r, c, k) * weight;
                for &(y, x) in &nb {
                    data[(y * w + x) * ch + k] += g;
                }
            }
        }
    }
    out
}

fn neighbours(r: usize, c: usize, h: usize, w: usize) -> ArrayVec<(usize, usize), 8> {
    let mut nb = ArrayVec::new();
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let (y, x) = (r as i64 + dy, c as i64 + dx);
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                nb.push((y as usize, x as usize));
            }
        }
    }
    nb
}

/// Hybrid input for `class`: neighbour means on the class pixels, original
/// values elsewhere. Also returns the per-pixel class mask.
pub fn hybrid_input(
    img: &ImageBuffer,
    partition: &Partition,
    class: PartitionClass,
) -> (ImageBuffer, Vec<bool>) {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mask = partition.mask(class, h, w);
    let averaged = eta(img);
    let mut hybrid = img.clone();
    let data = hybrid.data_mut();
    for (p, &inside) in mask.iter().enumerate() {
        if inside {
            for k in 0..ch {
                data[p * ch + k] = averaged.data()[p * ch + k];
            }
        }
    }
    (hybrid, mask)
}

/// Blind-spot output and the pixels at which it is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct BlindSpotOutput {
    /// Zero outside `mask`.
    pub image: ImageBuffer,
    pub mask: Vec<bool>,
}

pub fn apply_blindspot(
    d: &Denoiser,
    img: &ImageBuffer,
    sigma: f64,
    partition: &Partition,
    selector: ClassSelector,
) -> Result<BlindSpotOutput> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut image = ImageBuffer::zeros(h, w, ch);
    let mut mask = vec![false; h * w];
    let classes: Vec<PartitionClass> = match selector {
        ClassSelector::One(c) => vec![c],
        ClassSelector::All => partition.classes().collect(),
    };
    for class in classes {
        let (hybrid, class_mask) = hybrid_input(img, partition, class);
        let out = d.apply(&hybrid, sigma)?;
        let dst = image.data_mut();
        for (p, &inside) in class_mask.iter().enumerate() {
            if inside {
                mask[p] = true;
                dst[p * ch..(p + 1) * ch].copy_from_slice(&out.data()[p * ch..(p + 1) * ch]);
            }
        }
    }
    Ok(BlindSpotOutput { image, mask })
}

/// Blind-spot evaluation for one class with the denoiser linearization kept
/// for a later adjoint.
pub struct BlindSpotLinearization<'a> {
    lin: Linearization<'a>,
    mask: Vec<bool>,
    channels: usize,
}

impl<'a> BlindSpotLinearization<'a> {
    pub fn new(
        d: &'a Denoiser,
        img: &ImageBuffer,
        sigma: f64,
        partition: &Partition,
        class: PartitionClass,
    ) -> Result<Self> {
        let (hybrid, mask) = hybrid_input(img, partition, class);
        let lin = d.linearize(&hybrid, sigma)?;
        Ok(Self {
            lin,
            mask,
            channels: img.channels(),
        })
    }

    /// Full denoiser output on the hybrid image; only entries under
    /// [`Self::mask`] are blind-spot outputs.
    pub fn output(&self) -> &ImageBuffer {
        self.lin.output()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Gradient with respect to the original input of `⟨cot, output⟩`
    /// over the class pixels. Entries of `cot` outside the mask are ignored.
    pub fn vjp(&self, cot: &ImageBuffer) -> Result<ImageBuffer> {
        let ch = self.channels;
        let mut masked = cot.clone();
        for (p, &inside) in self.mask.iter().enumerate() {
            if !inside {
                masked.data_mut()[p * ch..(p + 1) * ch].fill(0.0);
            }
        }
        let through_d = self.lin.vjp(&masked)?;
        // split: class pixels were fed by eta, the rest passed straight through
        let mut on_class = through_d.clone();
        let mut direct = through_d;
        for (p, &inside) in self.mask.iter().enumerate() {
            let span = p * ch..(p + 1) * ch;
            if inside {
                direct.data_mut()[span].fill(0.0);
            } else {
                on_class.data_mut()[span].fill(0.0);
            }
        }
        let via_eta = eta_adjoint(&on_class);
        direct.zip_map(&via_eta, |a, b| a + b)
    }
}

/// Adjoint of [`apply_blindspot`]'s linearization at `img`.
pub fn vjp_blindspot(
    d: &Denoiser,
    img: &ImageBuffer,
    sigma: f64,
    partition: &Partition,
    selector: ClassSelector,
    cotangent: &ImageBuffer,
) -> Result<ImageBuffer> {
    img.check_same_shape(cotangent)?;
    let classes: Vec<PartitionClass> = match selector {
        ClassSelector::One(c) => vec![c],
        ClassSelector::All => partition.classes().collect(),
    };
    let mut total = ImageBuffer::zeros(img.height(), img.width(), img.channels());
    for class in classes {
        let g = BlindSpotLinearization::new(d, img, sigma, partition, class)?.vjp(cotangent)?;
        total = total.zip_map(&g, |a, b| a + b)?;
    }
    Ok(total)
}
