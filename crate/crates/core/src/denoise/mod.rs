//! Frozen Gaussian denoisers with exact input vector-Jacobian products.
//!
//! Each denoiser can be *linearized* at an input: the forward output is
//! returned together with whatever state the adjoint needs (threshold
//! masks, activations), so a training step runs the forward pass once.

mod blur;
mod convnet;
mod dct;

pub use blur::GaussianBlur;
pub use convnet::{ConvLayer, ConvNet, CONVNET_MAGIC};
pub use dct::{DctThreshold, DCT_PATCH};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Noise level the built-in non-blind denoisers are run at, in `[0, 1]` units.
pub const DEFAULT_SIGMA: f64 = 25.0 / 255.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Denoiser {
    Identity,
    GaussianBlur(GaussianBlur),
    DctThreshold(DctThreshold),
    ConvNet(ConvNet),
}

impl Denoiser {
    /// Sliding 8×8 DCT soft thresholding, stride 4, τ = 3σ.
    pub fn default_dct() -> Self {
        Denoiser::DctThreshold(DctThreshold::new(4, 3.0).expect("valid defaults"))
    }

    pub fn gaussian_blur(sigma_blur: f64) -> Result<Self> {
        Ok(Denoiser::GaussianBlur(GaussianBlur::new(sigma_blur)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Denoiser::Identity => "identity",
            Denoiser::GaussianBlur(_) => "blur",
            Denoiser::DctThreshold(_) => "dct",
            Denoiser::ConvNet(_) => "convnet",
        }
    }

    pub fn apply(&self, img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
        check_sigma(sigma)?;
        match self {
            Denoiser::Identity => Ok(img.clone()),
            Denoiser::GaussianBlur(b) => Ok(b.apply(img)),
            Denoiser::DctThreshold(d) => Ok(d.forward(img, sigma, false).0),
            Denoiser::ConvNet(n) => Ok(n.forward(img, sigma, false)?.0),
        }
    }

    /// Forward pass that also records what the adjoint needs.
    pub fn linearize(&self, img: &ImageBuffer, sigma: f64) -> Result<Linearization<'_>> {
        check_sigma(sigma)?;
        let (output, tape) = match self {
            Denoiser::Identity => (img.clone(), Tape::Identity),
            Denoiser::GaussianBlur(b) => (b.apply(img), Tape::Blur(b)),
            Denoiser::DctThreshold(d) => {
                let (out, masks) = d.forward(img, sigma, true);
                (out, Tape::Dct(d, masks))
            }
            Denoiser::ConvNet(n) => {
                let (out, acts) = n.forward(img, sigma, true)?;
                (out, Tape::ConvNet(n, acts))
            }
        };
        Ok(Linearization { output, tape })
    }

    /// `Jᵀ·cotangent` with `J` the Jacobian of [`Denoiser::apply`] at `img`.
    pub fn vjp(&self, img: &ImageBuffer, sigma: f64, cotangent: &ImageBuffer) -> Result<ImageBuffer> {
        img.check_same_shape(cotangent)?;
        self.linearize(img, sigma)?.vjp(cotangent)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "denoiser noise level must be positive, got {sigma}"
        )))
    }
}

enum Tape<'a> {
    Identity,
    Blur(&'a GaussianBlur),
    Dct(&'a DctThreshold, Vec<u64>),
    ConvNet(&'a ConvNet, Vec<Vec<f64>>),
}

/// Output of a denoiser at a fixed input plus its recorded linearization.
pub struct Linearization<'a> {
    output: ImageBuffer,
    tape: Tape<'a>,
}

impl Linearization<'_> {
    pub fn output(&self) -> &ImageBuffer {
        &self.output
    }

    pub fn into_output(self) -> ImageBuffer {
        self.output
    }

    pub fn vjp(&self, cotangent: &ImageBuffer) -> Result<ImageBuffer> {
        self.output.check_same_shape(cotangent)?;
        Ok(match &self.tape {
            Tape::Identity => cotangent.clone(),
            Tape::Blur(b) => b.adjoint(cotangent),
            Tape::Dct(d, masks) => d.adjoint(cotangent, masks),
            Tape::ConvNet(n, acts) => n.adjoint(cotangent, acts),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageBuffer {
        let mut rng = seeded(seed);
        ImageBuffer::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn identity_passes_through() {
        let img = random_image(9, 7, 3, 1);
        let d = Denoiser::Identity;
        assert_eq!(d.apply(&img, 0.1).unwrap(), img);
        let c = random_image(9, 7, 3, 2);
        assert_eq!(d.vjp(&img, 0.1, &c).unwrap(), c);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let img = random_image(8, 8, 1, 1);
        for d in [Denoiser::Identity, Denoiser::default_dct()] {
            assert!(d.apply(&img, 0.0).is_err());
            assert!(d.apply(&img, -1.0).is_err());
        }
    }

    #[test]
    fn vjp_shape_mismatch() {
        let img = random_image(8, 8, 1, 1);
        let c = random_image(8, 9, 1, 1);
        assert!(Denoiser::default_dct().vjp(&img, 0.1, &c).is_err());
    }

    #[test]
    fn deterministic() {
        let img = random_image(20, 17, 1, 5);
        let d = Denoiser::default_dct();
        assert_eq!(d.apply(&img, 0.1).unwrap(), d.apply(&img, 0.1).unwrap());
    }
}
