//! Plain convolutional denoiser loaded from an `N2VCNN1` weights file.
//!
//! File layout (little endian): magic `N2VCNN1\0`, `u32` layer count, then
//! per layer `u32 in_ch`, `u32 out_ch`, `u32 k`, `f32` weights
//! (`out·in·k·k`, row-major), `f32` bias (`out`), and finally a `u8`
//! flag telling whether σ is appended as a constant input channel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const CONVNET_MAGIC: &[u8; 8] = b"N2VCNN1\0";

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        let k = self.kernel_size;
        self.weights[((o * self.in_channels + i) * k + ky) * k + kx]
    }
}

/// Convolutions with replicate padding and ReLU between layers (none after
/// the last). The output is the denoised image itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    layers: Vec<ConvLayer>,
    noise_map_input: bool,
}

impl ConvNet {
    pub fn new(layers: Vec<ConvLayer>, noise_map_input: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invariant("network has no layers".into()));
        }
        for (idx, l) in layers.iter().enumerate() {
            if l.kernel_size % 2 == 0 {
                return Err(Error::Invariant(format!(
                    "layer {idx}: kernel size {} is not odd",
                    l.kernel_size
                )));
            }
            if l.in_channels == 0 || l.out_channels == 0 {
                return Err(Error::Invariant(format!("layer {idx}: zero channels")));
            }
            let expected = l.out_channels * l.in_channels * l.kernel_size * l.kernel_size;
            if l.weights.len() != expected || l.bias.len() != l.out_channels {
                return Err(Error::Invariant(format!(
                    "layer {idx}: weight/bias sizes do not match its shape"
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {idx} weights")));
            }
        }
        for (idx, pair) in layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Invariant(format!(
                    "layer {idx} emits {} channels but layer {} expects {}",
                    pair[0].out_channels,
                    idx + 1,
                    pair[1].in_channels
                )));
            }
        }
        let first_in = layers[0].in_channels;
        if noise_map_input && first_in < 2 {
            return Err(Error::Invariant(
                "noise-map input needs at least one image channel besides σ".into(),
            ));
        }
        let image_channels = first_in - usize::from(noise_map_input);
        if layers.last().unwrap().out_channels != image_channels {
            return Err(Error::Invariant(format!(
                "network maps {image_channels} image channels to {}",
                layers.last().unwrap().out_channels
            )));
        }
        Ok(Self {
            layers,
            noise_map_input,
        })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn noise_map_input(&self) -> bool {
        self.noise_map_input
    }

    pub fn image_channels(&self) -> usize {
        self.layers[0].in_channels - usize::from(self.noise_map_input)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CONVNET_MAGIC {
            return Err(Error::Malformed("bad N2VCNN1 magic".into()));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let in_channels = r.u32()? as usize;
            let out_channels = r.u32()? as usize;
            let kernel_size = r.u32()? as usize;
            let n = out_channels
                .checked_mul(in_channels)
                .and_then(|v| v.checked_mul(kernel_size * kernel_size))
                .ok_or_else(|| Error::Malformed("layer size overflows".into()))?;
            let weights = r.f32s(n)?;
            let bias = r.f32s(out_channels)?;
            layers.push(ConvLayer {
                in_channels,
                out_channels,
                kernel_size,
                weights,
                bias,
            });
        }
        let flag = r.take(1)?[0];
        if r.pos != bytes.len() {
            return Err(Error::Malformed("trailing bytes after N2VCNN1 payload".into()));
        }
        Self::new(layers, flag != 0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CONVNET_MAGIC.to_vec();
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for v in [l.in_channels, l.out_channels, l.kernel_size] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for &v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.push(u8::from(self.noise_map_input));
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| Error::Unwritable {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Runs the network. With `record`, returns the pre-activation planes of
    /// every layer but the last (needed for the ReLU masks in the adjoint).
    pub(super) fn forward(
        &self,
        img: &ImageBuffer,
        sigma: f64,
        record: bool,
    ) -> Result<(ImageBuffer, Vec<Vec<f64>>)> {
        if img.channels() != self.image_channels() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} channels, image has {}",
                self.image_channels(),
                img.channels()
            )));
        }
        let (h, w) = (img.height(), img.width());
        let mut planes = to_planar(img);
        if self.noise_map_input {
            planes.extend(std::iter::repeat_n(sigma, h * w));
        }
        let mut tape = Vec::new();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut pre = conv_forward(layer, &planes, h, w);
            if idx < last {
                if record {
                    tape.push(pre.clone());
                }
                pre.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            planes = pre;
        }
        let out = from_planar(&planes, h, w, img.channels())?;
        Ok((out, tape))
    }

    pub(super) fn adjoint(&self, cot: &ImageBuffer, tape: &[Vec<f64>]) -> ImageBuffer {
        let (h, w) = (cot.height(), cot.width());
        let mut grad = to_planar(cot);
        for idx in (0..self.layers.len()).rev() {
            grad = conv_adjoint(&self.layers[idx], &grad, h, w);
            if idx > 0 {
                for (g, &pre) in grad.iter_mut().zip(&tape[idx - 1]) {
                    if pre <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
        }
        grad.truncate(self.image_channels() * h * w);
        from_planar(&grad, h, w, cot.channels()).expect("finite adjoint")
    }
}

fn to_planar(img: &ImageBuffer) -> Vec<f64> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0; h * w * ch];
    for (i, &v) in img.data().iter().enumerate() {
        let (p, c) = (i / ch, i % ch);
        out[c * h * w + p] = v;
    }
    out
}

fn from_planar(planes: &[f64], h: usize, w: usize, ch: usize) -> Result<ImageBuffer> {
    let mut data = vec![0.0; h * w * ch];
    for (i, v) in data.iter_mut().enumerate() {
        let (p, c) = (i / ch, i % ch);
        *v = planes[c * h * w + p];
    }
    ImageBuffer::new(h, w, ch, data)
}

fn conv_forward(layer: &ConvLayer, input: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = layer.kernel_size;
    let pad = (k / 2) as i64;
    let mut out = vec![0.0; layer.out_channels * h * w];
    for o in 0..layer.out_channels {
        let plane = &mut out[o * h * w..(o + 1) * h * w];
        plane.iter_mut().for_each(|v| *v = layer.bias[o]);
        for i in 0..layer.in_channels {
            let src = &input[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = layer.w(o, i, ky, kx);
                    if wt == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = clamp(y as i64 + ky as i64 - pad, h);
                        for x in 0..w {
                            let sx = clamp(x as i64 + kx as i64 - pad, w);
                            plane[y * w + x] += wt * src[sy * w + sx];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_adjoint(layer: &ConvLayer, grad_out: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = layer.kernel_size;
    let pad = (k / 2) as i64;
    let mut grad_in = vec![0.0; layer.in_channels * h * w];
    for o in 0..layer.out_channels {
        let g = &grad_out[o * h * w..(o + 1) * h * w];
        for i in 0..layer.in_channels {
            let dst = &mut grad_in[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = layer.w(o, i, ky, kx);
                    if wt == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let sy = clamp(y as i64 + ky as i64 - pad, h);
                        for x in 0..w {
                            let sx = clamp(x as i64 + kx as i64 - pad, w);
                            dst[sy * w + sx] += wt * g[y * w + x];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

#[inline]
fn clamp(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Malformed("N2VCNN1 file truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Malformed("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect())
    }
}
