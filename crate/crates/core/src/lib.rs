//! Zero-shot denoising by learning a variance-stabilizing transform.
//!
//! A monotone piecewise-linear transform `f` and a corrected inverse
//! `f_inv` are fitted to a single noisy image so that a fixed Gaussian
//! denoiser `D` works well in the transformed domain. Training uses a
//! blind-spot version of `D` and the noisy image as its own target;
//! inference returns `f_inv(D(f(z)))`.
//!
//! Module map:
//! - [`image`], [`io`], [`metrics`]: buffers, patch sampling, file formats, PSNR/SSIM
//! - [`vst`]: the spline transform and its derivatives
//! - [`denoise`]: frozen denoisers with vector-Jacobian products
//! - [`blindspot`]: partition masking
//! - [`train`]: loss, gradients, Adam, training loop, inference
//! - [`noise`]: synthetic noise, GAT baseline, stabilization diagnostics
//! - [`corpus`]: procedural clean test images

pub mod blindspot;
pub mod corpus;
pub mod denoise;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod rng;
pub mod train;
pub mod vst;

pub use blindspot::{apply_blindspot, eta, vjp_blindspot, ClassSelector, Partition, PartitionClass};
pub use denoise::{Denoiser, DEFAULT_SIGMA};
pub use error::{Error, Result};
pub use image::{sample_training_batch, Augmentation, ImageBuffer, PatchBatch};
pub use io::{load_image, save_image, BitDepth};
pub use metrics::{psnr, ssim};
pub use noise::{gat_forward, gat_inverse, gat_pipeline, synthesize, InverseMode, NoiseModel};
pub use rng::{seeded, SeededRng};
pub use train::{infer, loss_and_grad, train, TrainConfig, TrainOutcome, VstGradient, VstSet};
pub use vst::Vst;
