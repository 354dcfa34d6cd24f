#![allow(dead_code)]

use n2vst::denoise::{ConvLayer, ConvNet, Denoiser};
use n2vst::image::ImageBuffer;
use n2vst::rng::seeded;
use rand::Rng;

pub fn random_image(seed: u64, h: usize, w: usize, ch: usize) -> ImageBuffer {
    let mut rng = seeded(seed);
    ImageBuffer::from_fn(h, w, ch, |_, _, _| rng.random_range(0.0..1.0))
}

fn random_layer(rng: &mut impl Rng, i: usize, o: usize, k: usize) -> ConvLayer {
    let scale = 1.0 / ((i * k * k) as f64).sqrt();
    ConvLayer {
        in_channels: i,
        out_channels: o,
        kernel_size: k,
        weights: (0..o * i * k * k).map(|_| rng.random_range(-scale..scale)).collect(),
        bias: (0..o).map(|_| rng.random_range(-0.1..0.1)).collect(),
    }
}

pub fn random_convnet(seed: u64, channels: usize, noise_map: bool) -> ConvNet {
    let mut rng = seeded(seed);
    let input = channels + usize::from(noise_map);
    let layers = vec![
        random_layer(&mut rng, input, 6, 3),
        random_layer(&mut rng, 6, 5, 3),
        random_layer(&mut rng, 5, channels, 3),
    ];
    ConvNet::new(layers, noise_map).unwrap()
}

/// Every built-in denoiser, with a small random network standing in for
/// loaded weights.
pub fn all_denoisers(channels: usize) -> Vec<Denoiser> {
    vec![
        Denoiser::Identity,
        Denoiser::gaussian_blur(1.2).unwrap(),
        Denoiser::default_dct(),
        Denoiser::ConvNet(random_convnet(11, channels, true)),
    ]
}
