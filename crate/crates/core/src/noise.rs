//! Synthetic noise, the generalized Anscombe transform baseline, and
//! variance-stabilization diagnostics.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::rng::{substream, SeededRng};
use crate::vst::{Knots, Vst};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseModel {
    /// `z = a·P(s/a) + N(0, b)`, so `var(z | s) = a·s + b`.
    PoissonGauss { a: f64, b: f64 },
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn poisson_gauss(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Poisson-Gaussian parameters need a > 0 and b >= 0, got a = {a}, b = {b}"
            )));
        }
        Ok(NoiseModel::PoissonGauss { a, b })
    }

    /// Pure Poisson noise at photon scale `λ`: `z = P(λ·s)/λ`.
    pub fn poisson(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Poisson scale must be positive, got {lambda}"
            )));
        }
        Self::poisson_gauss(1.0 / lambda, 0.0)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian noise level must be positive, got {sigma}"
            )));
        }
        Ok(NoiseModel::Gaussian { sigma })
    }

    /// Noise variance at clean intensity `s`.
    pub fn variance(&self, s: f64) -> f64 {
        match *self {
            NoiseModel::PoissonGauss { a, b } => a * s + b,
            NoiseModel::Gaussian { sigma } => sigma * sigma,
        }
    }

    fn sample(&self, s: f64, rng: &mut SeededRng) -> f64 {
        match *self {
            NoiseModel::PoissonGauss { a, b } => {
                let counts = sample_poisson(s / a, rng) as f64;
                let read = if b > 0.0 {
                    b.sqrt() * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                a * counts + read
            }
            NoiseModel::Gaussian { sigma } => s + sigma * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

const INVERSION_LIMIT: f64 = 30.0;

/// Exact Poisson draw: sequential inversion below rate 30, Hörmann's
/// transformed rejection (PTRS) at and above.
pub fn sample_poisson(rate: f64, rng: &mut SeededRng) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate < INVERSION_LIMIT {
        poisson_inversion(rate, rng)
    } else {
        poisson_ptrs(rate, rng)
    }
}

fn poisson_inversion(rate: f64, rng: &mut SeededRng) -> u64 {
    let cap = (rate + 40.0 * rate.sqrt() + 100.0) as u64;
    loop {
        let u: f64 = rng.random();
        let mut p = (-rate).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf && k < cap {
            k += 1;
            p *= rate / k as f64;
            cdf += p;
        }
        // the cap is only hit when rounding leaves cdf short of u; redraw
        if k < cap {
            return k;
        }
    }
}

fn poisson_ptrs(rate: f64, rng: &mut SeededRng) -> u64 {
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -rate + k * loglam - ln_gamma(k + 1.0)
        {
            return k as u64;
        }
    }
}

/// Noisy observation of `clean`. Row `r` draws from substream `r` of `seed`.
pub fn synthesize(clean: &ImageBuffer, model: &NoiseModel, seed: u64) -> Result<ImageBuffer> {
    if let NoiseModel::PoissonGauss { .. } = model {
        if let Some(v) = clean.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Poisson rate must be non-negative, found clean value {v}"
            )));
        }
    }
    let (h, w, ch) = (clean.height(), clean.width(), clean.channels());
    let mut data = Vec::with_capacity(clean.len());
    for r in 0..h {
        let mut rng = substream(seed, r as u64);
        for &s in &clean.data()[r * w * ch..(r + 1) * w * ch] {
            data.push(model.sample(s, &mut rng));
        }
    }
    ImageBuffer::new(h, w, ch, data)
}

/// Generalized Anscombe transform `(2/a)·√max(a·z + 3a²/8 + b, 0)`.
pub fn gat_forward(z: f64, a: f64, b: f64) -> f64 {
    2.0 / a * (a * z + 0.375 * a * a + b).max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InverseMode {
    Algebraic,
    /// Closed-form approximation of the exact unbiased inverse.
    Unbiased,
}

pub fn gat_inverse(w: f64, a: f64, b: f64, mode: InverseMode) -> Result<f64> {
    match mode {
        InverseMode::Algebraic => {
            let half = a * w / 2.0;
            Ok((half * half - 0.375 * a * a - b) / a)
        }
        InverseMode::Unbiased => {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "unbiased GAT inverse needs w > 0, got {w}"
                )));
            }
            Ok(unbiased_inverse(w, a, b))
        }
    }
}

fn unbiased_inverse(w: f64, a: f64, b: f64) -> f64 {
    let r = 1.5f64.sqrt();
    let inv = 1.0 / w;
    a * (w * w / 4.0 - 0.125 + r / 4.0 * inv - 1.375 * inv * inv + 0.625 * r * inv * inv * inv
        - b / (a * a))
}

/// Inverse used inside [`gat_pipeline`]. The unbiased form is only
/// meaningful above the stabilized value of a zero signal,
/// `2·√(3/8 + b/a²)`; below it (and wherever it would go negative) the
/// estimate is zero.
fn pipeline_inverse(w: f64, a: f64, b: f64, mode: InverseMode) -> f64 {
    match mode {
        InverseMode::Algebraic => gat_inverse(w, a, b, mode).expect("algebraic inverse is total"),
        InverseMode::Unbiased => {
            let floor = 2.0 * (0.375 + b / (a * a)).sqrt();
            if w <= floor {
                0.0
            } else {
                unbiased_inverse(w, a, b).max(0.0)
            }
        }
    }
}

/// Stabilize with the GAT, scale to the denoiser's noise level `sigma_d`,
/// denoise, scale back and invert.
pub fn gat_pipeline(
    z: &ImageBuffer,
    a: f64,
    b: f64,
    d: &Denoiser,
    sigma_d: f64,
    mode: InverseMode,
) -> Result<ImageBuffer> {
    NoiseModel::poisson_gauss(a, b)?;
    let stabilized = z.map(|v| gat_forward(v, a, b) * sigma_d);
    let denoised = d.apply(&stabilized, sigma_d)?;
    Ok(denoised.map(|v| pipeline_inverse(v / sigma_d, a, b, mode)))
}

/// Pointwise transform whose stabilization is being measured.
#[derive(Clone, Copy, Debug)]
pub enum Transform<'a> {
    Identity,
    Gat { a: f64, b: f64 },
    Vst(&'a Vst),
}

enum Prepared {
    Identity,
    Gat { a: f64, b: f64 },
    Vst(Knots),
}

impl Prepared {
    fn eval(&self, z: f64) -> f64 {
        match self {
            Prepared::Identity => z,
            Prepared::Gat { a, b } => gat_forward(z, *a, *b),
            Prepared::Vst(k) => k.forward(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinStat {
    pub center: f64,
    pub std: f64,
    /// Pixels in the bin.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizationProfile {
    pub bins: Vec<BinStat>,
    /// Indices of bins that held no pixels and were dropped.
    pub empty_bins: Vec<usize>,
    /// Largest over smallest bin std.
    pub ratio: f64,
}

impl StabilizationProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,std,count\n");
        for b in &self.bins {
            out.push_str(&format!("{:.6},{:.8},{}\n", b.center, b.std, b.count));
        }
        out
    }
}

/// Bins pixels of `clean` by intensity and reports, per bin, the noise std
/// of `transform(z)`: the root mean of per-pixel sample variances over
/// `draws` independent noisy realizations.
pub fn stabilization_profile(
    transform: Transform<'_>,
    clean: &ImageBuffer,
    model: &NoiseModel,
    bins: usize,
    draws: usize,
    seed: u64,
) -> Result<StabilizationProfile> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if draws < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 draws, got {draws}")));
    }
    let (lo, hi) = clean.min_max();
    if !(hi > lo) {
        return Err(Error::InvalidArgument("clean image has a single intensity".into()));
    }
    let width = (hi - lo) / bins as f64;
    let bin_of = |s: f64| (((s - lo) / width) as usize).min(bins - 1);
    let prepared = match transform {
        Transform::Identity => Prepared::Identity,
        Transform::Gat { a, b } => Prepared::Gat { a, b },
        Transform::Vst(v) => Prepared::Vst(v.knots()),
    };
    let n = clean.len();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for draw in 0..draws {
        let stream_seed = seed.wrapping_add((draw as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let noisy = synthesize(clean, model, stream_seed)?;
        for (i, &z) in noisy.data().iter().enumerate() {
            let t = prepared.eval(z);
            sum[i] += t;
            sum_sq[i] += t * t;
        }
    }
    let mut var_sum = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    let m = draws as f64;
    for (i, &s) in clean.data().iter().enumerate() {
        let mean = sum[i] / m;
        let var = ((sum_sq[i] - m * mean * mean) / (m - 1.0)).max(0.0);
        let b = bin_of(s);
        var_sum[b] += var;
        counts[b] += 1;
    }
    let mut out = Vec::new();
    let mut empty_bins = Vec::new();
    for b in 0..bins {
        if counts[b] == 0 {
            empty_bins.push(b);
            continue;
        }
        out.push(BinStat {
            center: lo + (b as f64 + 0.5) * width,
            std: (var_sum[b] / counts[b] as f64).sqrt(),
            count: counts[b],
        });
    }
    if out.len() < 2 {
        return Err(Error::InvalidArgument("clean image spans fewer than 2 bins".into()));
    }
    let max = out.iter().map(|b| b.std).fold(f64::NEG_INFINITY, f64::max);
    let min = out.iter().map(|b| b.std).fold(f64::INFINITY, f64::min);
    Ok(StabilizationProfile {
        bins: out,
        empty_bins,
        ratio: max / min,
    })
}
