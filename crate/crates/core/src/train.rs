//! Self-supervised fitting of the transform pair around a blind-spot
//! denoiser, and inference with the plain denoiser.
//!
//! Each iteration draws a batch of augmented crops and one partition
//! class, evaluates `f_inv(D̄_J(f(z)))` on the class pixels, and takes an
//! Adam step on the mean squared difference to `z`. The gradient is exact
//! given the spline segment assignments: it flows through the explicit
//! `(θ, α, β)` dependence of `f_inv`, and through the denoiser input back
//! to `f`. The target `z` is constant.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blindspot::{apply_blindspot, BlindSpotLinearization, ClassSelector, Partition, PartitionClass};
use crate::denoise::{Denoiser, DEFAULT_SIGMA};
use crate::error::{Error, Result};
use crate::image::{sample_training_batch, ImageBuffer, PatchBatch};
use crate::rng::seeded;
use crate::vst::{Knots, ThetaAccumulator, ThetaGrad, Vst, VstDocument, DEFAULT_KNOTS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr0: f64,
    pub sigma_d: f64,
    pub stride_k: usize,
    pub seed: u64,
    pub shared_vst_across_channels: bool,
    pub knots: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 4,
            patch: 64,
            lr0: 0.01,
            sigma_d: DEFAULT_SIGMA,
            stride_k: 4,
            seed: 0,
            shared_vst_across_channels: true,
            knots: DEFAULT_KNOTS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch < 1 {
            return bad("batch must be at least 1".into());
        }
        if self.patch < 8 {
            return bad(format!("patch must be at least 8, got {}", self.patch));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return bad(format!("sigma_d must be positive, got {}", self.sigma_d));
        }
        if self.knots < 2 {
            return bad(format!("need at least 2 knots, got {}", self.knots));
        }
        Partition::new(self.stride_k)?;
        Ok(())
    }
}

/// Step schedule: `lr0` until `⌊T/3⌋`, then `lr0/10` until `⌊2T/3⌋`, then `lr0/100`.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    let t = cfg.iterations;
    let drops = usize::from(iter >= t / 3) + usize::from(iter >= 2 * t / 3);
    cfg.lr0 / 10f64.powi(drops as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VstGradient {
    pub d_theta: Vec<f64>,
    pub d_alpha: f64,
    pub d_beta: f64,
}

impl VstGradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_theta: vec![0.0; n],
            d_alpha: 0.0,
            d_beta: 0.0,
        }
    }

    /// `[dθ, dα, dβ]`, matching [`Vst::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.d_theta.clone();
        out.push(self.d_alpha);
        out.push(self.d_beta);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.d_theta.iter().all(|v| v.is_finite()) && self.d_alpha.is_finite() && self.d_beta.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(parameter_count: usize) -> Self {
        Self {
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of all `n + 2` parameters; θ is clamped
/// afterwards.
pub fn adam_step(state: &mut AdamState, params: &mut Vst, grad: &VstGradient, lr: f64) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!(
            "gradient at optimizer step {}",
            state.step + 1
        )));
    }
    let g = grad.to_flat();
    if g.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} parameters, gradient has {}",
            state.m.len(),
            g.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let mut p = params.parameters();
    for i in 0..g.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    params.set_parameters(&p)
}

/// One transform shared by all channels, or one per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct VstSet {
    vsts: Vec<Vst>,
}

pub const SET_FORMAT: &str = "n2vst-set/1";

#[derive(Serialize, Deserialize)]
struct SetDocument {
    format: String,
    channels: Vec<VstDocument>,
}

impl VstSet {
    pub fn shared(vst: Vst) -> Self {
        Self { vsts: vec![vst] }
    }

    pub fn per_channel(vsts: Vec<Vst>) -> Result<Self> {
        if vsts.is_empty() {
            return Err(Error::InvalidArgument("empty transform set".into()));
        }
        Ok(Self { vsts })
    }

    pub fn vsts(&self) -> &[Vst] {
        &self.vsts
    }

    pub fn is_shared(&self) -> bool {
        self.vsts.len() == 1
    }

    /// The shared transform, or the first channel's.
    pub fn primary(&self) -> &Vst {
        &self.vsts[0]
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.vsts.len() == 1 || self.vsts.len() == channels {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} per-channel transforms for a {channels}-channel image",
                self.vsts.len()
            )))
        }
    }

    fn knots(&self) -> Vec<Knots> {
        self.vsts.iter().map(Vst::knots).collect()
    }

    pub fn forward_image(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        self.check_channels(img.channels())?;
        Ok(map_channels(img, &self.knots(), |k, v| k.forward(v)))
    }

    pub fn inverse_image(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        self.check_channels(img.channels())?;
        Ok(map_channels(img, &self.knots(), |k, v| k.inverse(v)))
    }

    /// A single transform is written in the plain checkpoint layout.
    pub fn serialize(&self) -> String {
        if self.is_shared() {
            return self.vsts[0].serialize();
        }
        let doc = SetDocument {
            format: SET_FORMAT.to_string(),
            channels: self.vsts.iter().map(Vst::to_document).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("plain data serializes")
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) == Some(SET_FORMAT) {
            let doc: SetDocument =
                serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))?;
            let vsts = doc
                .channels
                .into_iter()
                .map(Vst::from_document)
                .collect::<Result<Vec<_>>>()?;
            return Self::per_channel(vsts);
        }
        Ok(Self::shared(Vst::deserialize(text)?))
    }
}

fn map_channels(img: &ImageBuffer, knots: &[Knots], f: impl Fn(&Knots, f64) -> f64) -> ImageBuffer {
    let ch = img.channels();
    let mut out = img.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = f(&knots[(i % ch) % knots.len()], *v);
    }
    out
}

struct PatchGrad {
    loss_sum: f64,
    count: usize,
    theta: Vec<ThetaAccumulator>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn patch_loss_and_grad(
    knots: &[Knots],
    d: &Denoiser,
    z: &ImageBuffer,
    partition: &Partition,
    class: PartitionClass,
    sigma_d: f64,
) -> Result<PatchGrad> {
    let ch = z.channels();
    let nv = knots.len();
    let which = |i: usize| (i % ch) % nv;
    let n = knots[0].x.len();

    let mut fwd = Vec::with_capacity(z.len());
    let mut u = z.clone();
    for (i, v) in u.data_mut().iter_mut().enumerate() {
        let (value, _, tg) = knots[which(i)].forward_grad(*v);
        *v = value;
        fwd.push(tg);
    }
    u.ensure_finite("transformed patch")?;

    let lin = BlindSpotLinearization::new(d, &u, sigma_d, partition, class)?;
    let out = lin.output();
    let mask = lin.mask();

    let mut grad = PatchGrad {
        loss_sum: 0.0,
        count: 0,
        theta: vec![ThetaAccumulator::new(n); nv],
        alpha: vec![0.0; nv],
        beta: vec![0.0; nv],
    };
    let mut residual_cot = ImageBuffer::zeros(z.height(), z.width(), ch);
    let mut dinv: Vec<(usize, f64, f64, ThetaGrad)> = Vec::new();
    for (p, &inside) in mask.iter().enumerate() {
        if !inside {
            continue;
        }
        for c in 0..ch {
            let i = p * ch + c;
            let w = out.data()[i];
            let (value, slope, tg) = knots[which(i)].inverse_grad(w);
            let r = value - z.data()[i];
            grad.loss_sum += r * r;
            grad.count += 1;
            dinv.push((i, w, r, tg));
            residual_cot.data_mut()[i] = r * slope;
        }
    }
    // weights are 2r per element here; the caller divides by the global count
    for (i, w, r, tg) in &dinv {
        let k = which(*i);
        grad.theta[k].add(2.0 * r, tg);
        grad.alpha[k] += 2.0 * r * w;
        grad.beta[k] += 2.0 * r;
    }
    let cot = residual_cot.map(|v| 2.0 * v);
    let through = lin.vjp(&cot)?;
    for (i, (&g, tg)) in through.data().iter().zip(&fwd).enumerate() {
        if g != 0.0 {
            grad.theta[which(i)].add(g, tg);
        }
    }
    Ok(grad)
}

/// Mean masked loss over a batch and its gradient, one entry per transform
/// in `vsts` (a single shared transform, or one per channel).
pub fn loss_and_grad_set(
    vsts: &[Vst],
    d: &Denoiser,
    batch: &PatchBatch,
    partition: &Partition,
    class: PartitionClass,
    sigma_d: f64,
) -> Result<(f64, Vec<VstGradient>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let knots: Vec<Knots> = vsts.iter().map(Vst::knots).collect();
    let parts: Vec<PatchGrad> = batch
        .patches
        .par_iter()
        .map(|z| patch_loss_and_grad(&knots, d, z, partition, class, sigma_d))
        .collect::<Result<Vec<_>>>()?;

    let n = vsts[0].n();
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    let mut theta = vec![ThetaAccumulator::new(n); vsts.len()];
    let mut alpha = vec![0.0; vsts.len()];
    let mut beta = vec![0.0; vsts.len()];
    for part in &parts {
        loss_sum += part.loss_sum;
        count += part.count;
        for k in 0..vsts.len() {
            theta[k].merge(&part.theta[k]);
            alpha[k] += part.alpha[k];
            beta[k] += part.beta[k];
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("partition class selects no pixels".into()));
    }
    let scale = 1.0 / count as f64;
    let grads = (0..vsts.len())
        .map(|k| VstGradient {
            d_theta: theta[k]
                .finish(&knots[k].exp_theta)
                .into_iter()
                .map(|g| g * scale)
                .collect(),
            d_alpha: alpha[k] * scale,
            d_beta: beta[k] * scale,
        })
        .collect();
    Ok((loss_sum * scale, grads))
}

/// [`loss_and_grad_set`] for a single shared transform.
pub fn loss_and_grad(
    vst: &Vst,
    d: &Denoiser,
    batch: &PatchBatch,
    partition: &Partition,
    class: PartitionClass,
    sigma_d: f64,
) -> Result<(f64, VstGradient)> {
    let (loss, mut grads) =
        loss_and_grad_set(std::slice::from_ref(vst), d, batch, partition, class, sigma_d)?;
    Ok((loss, grads.pop().unwrap()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub vsts: VstSet,
    pub trace: Vec<TraceRow>,
}

impl TrainOutcome {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,lr,loss\n");
        for row in &self.trace {
            out.push_str(&format!("{},{:e},{:.10e}\n", row.iteration, row.lr, row.loss));
        }
        out
    }
}

fn value_range(img: &ImageBuffer, channel: Option<usize>) -> (f64, f64) {
    let ch = img.channels();
    img.data()
        .iter()
        .enumerate()
        .filter(|(i, _)| channel.is_none_or(|c| i % ch == c))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)))
}

/// Learns the transform pair from the noisy image alone, starting from the
/// identity on `[min z, max z]`.
pub fn train(img: &ImageBuffer, d: &Denoiser, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if img.height() < 8 || img.width() < 8 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 8x8 pixels, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let ranges: Vec<(f64, f64)> = if cfg.shared_vst_across_channels || img.channels() == 1 {
        vec![value_range(img, None)]
    } else {
        (0..img.channels()).map(|c| value_range(img, Some(c))).collect()
    };
    let mut vsts = Vec::with_capacity(ranges.len());
    for (lo, hi) in ranges {
        if !(hi > lo) {
            return Err(Error::InvalidArgument(
                "input is constant; there is no intensity range to learn a transform over".into(),
            ));
        }
        vsts.push(Vst::new_identity(lo, hi, cfg.knots)?);
    }
    let partition = Partition::new(cfg.stride_k)?;
    let mut states: Vec<AdamState> = vsts.iter().map(|v| AdamState::new(v.parameter_count())).collect();
    let mut rng = seeded(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let batch = sample_training_batch(img, &mut rng, cfg.patch, cfg.batch);
        let class = partition.class(rng.random_range(0..partition.class_count()));
        let (loss, grads) = loss_and_grad_set(&vsts, d, &batch, &partition, class, cfg.sigma_d)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {iteration}")));
        }
        let lr = lr_at(iteration, cfg);
        for ((vst, state), grad) in vsts.iter_mut().zip(&mut states).zip(&grads) {
            adam_step(state, vst, grad, lr)
                .map_err(|e| Error::NonFinite(format!("iteration {iteration}: {e}")))?;
        }
        trace.push(TraceRow { iteration, lr, loss });
    }
    let vsts = if vsts.len() == 1 {
        VstSet::shared(vsts.pop().unwrap())
    } else {
        VstSet::per_channel(vsts)?
    };
    Ok(TrainOutcome { vsts, trace })
}

/// `f_inv(D(f(z)))` with the plain (not blind-spot) denoiser. No clamping.
pub fn infer(img: &ImageBuffer, vsts: &VstSet, d: &Denoiser, sigma_d: f64) -> Result<ImageBuffer> {
    let u = vsts.forward_image(img)?;
    let o = d.apply(&u, sigma_d)?;
    vsts.inverse_image(&o)
}

/// `f_inv(D̄(f(z)))` with all partition classes assembled: what inference
/// would give if the blind-spot denoiser were kept.
pub fn infer_blindspot(
    img: &ImageBuffer,
    vsts: &VstSet,
    d: &Denoiser,
    sigma_d: f64,
    partition: &Partition,
) -> Result<ImageBuffer> {
    let u = vsts.forward_image(img)?;
    let o = apply_blindspot(d, &u, sigma_d, partition, ClassSelector::All)?;
    vsts.inverse_image(&o.image)
}
