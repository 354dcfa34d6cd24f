//! Command-line front end: denoise, synthesize noise, run the Anscombe
//! baseline, evaluate, export learned curves, and benchmark.
//!
//! Every command that writes files also writes a JSON manifest next to its
//! main output; `n2vst replay --manifest M` re-runs it with the recorded
//! arguments.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use n2vst::blindspot::Partition;
use n2vst::corpus;
use n2vst::denoise::{ConvNet, Denoiser, DEFAULT_SIGMA};
use n2vst::image::ImageBuffer;
use n2vst::io::{load_image, save_image, BitDepth};
use n2vst::metrics::{psnr, ssim};
use n2vst::noise::{gat_pipeline, synthesize, InverseMode, NoiseModel};
use n2vst::train::{infer, infer_blindspot, train, TrainConfig, VstSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "N2VST_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("check failed:\n{0}")]
    Check(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 0 success, 1 check or run failure, 2 usage, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Check(_) | CliError::Failed(_) => 1,
        }
    }
}

impl From<n2vst::Error> for CliError {
    fn from(e: n2vst::Error) -> Self {
        use n2vst::Error as E;
        match e {
            E::InvalidArgument(_) | E::ShapeMismatch(_) => CliError::Usage(e.to_string()),
            E::Unreadable { .. }
            | E::Unwritable { .. }
            | E::UnsupportedFormat { .. }
            | E::UnsupportedBitDepth { .. }
            | E::CorruptHeader { .. }
            | E::Malformed(_) => CliError::Io(e.to_string()),
            E::Invariant(_) | E::NonFinite(_) => CliError::Failed(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "n2vst", version, about = "Zero-shot denoising with a learned variance-stabilizing transform")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a transform on the noisy input and denoise it.
    Denoise(DenoiseArgs),
    /// Add synthetic noise to a clean image (written as float NPF1).
    Synth(SynthArgs),
    /// Anscombe-transform baseline with oracle noise parameters.
    Gat(GatArgs),
    /// PSNR and SSIM of a test image against a reference.
    Eval(EvalArgs),
    /// Sample a transform checkpoint as `z,f,f_inv` CSV.
    ExportVst(ExportArgs),
    /// Noisy / baseline / learned comparison over a corpus and noise levels.
    Bench(BenchArgs),
    /// Write the built-in procedural test images.
    Corpus(CorpusArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum DenoiserKind {
    Identity,
    Blur,
    Dct,
    Convnet,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserArgs {
    #[arg(long, value_enum, default_value_t = DenoiserKind::Dct)]
    pub denoiser: DenoiserKind,
    /// Network weights, required for `--denoiser convnet`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Kernel width for `--denoiser blur`.
    #[arg(long, default_value_t = 1.0)]
    pub blur_sigma: f64,
    /// Noise level the denoiser is told to expect.
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma_d: f64,
}

impl DenoiserArgs {
    pub fn build(&self) -> CliResult<Denoiser> {
        if !(self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return Err(CliError::Usage(format!("--sigma-d must be positive, got {}", self.sigma_d)));
        }
        match self.denoiser {
            DenoiserKind::Identity => Ok(Denoiser::Identity),
            DenoiserKind::Blur => Ok(Denoiser::gaussian_blur(self.blur_sigma)?),
            DenoiserKind::Dct => Ok(Denoiser::default_dct()),
            DenoiserKind::Convnet => {
                let path = self
                    .weights
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--denoiser convnet needs --weights".into()))?;
                Ok(Denoiser::ConvNet(ConvNet::load(path)?))
            }
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub stride_k: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learn one transform per colour channel instead of a shared one.
    #[arg(long)]
    pub per_channel: bool,
    /// Loss trace CSV; defaults to `<output>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Transform checkpoint; defaults to `<output>.vst.json`.
    #[arg(long)]
    pub export_vst: Option<PathBuf>,
    /// Sample depth for PNG/PNM output.
    #[arg(long, default_value_t = 8)]
    pub bit_depth: u32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum ModelKind {
    Poisson,
    PoissonGauss,
    Gauss,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct NoiseArgs {
    /// Peak photon count; equivalent to `--a 1/λ --b 0`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Poisson gain.
    #[arg(long)]
    pub a: Option<f64>,
    /// Gaussian variance added to the Poisson term.
    #[arg(long)]
    pub b: Option<f64>,
}

impl NoiseArgs {
    /// `(a, b)` from either `--lambda` or `--a [--b]`.
    pub fn gain_and_offset(&self) -> CliResult<(f64, f64)> {
        match (self.lambda, self.a) {
            (Some(_), Some(_)) => Err(CliError::Usage("give either --lambda or --a, not both".into())),
            (Some(l), None) => {
                let NoiseModel::PoissonGauss { a, b } = NoiseModel::poisson(l)? else {
                    unreachable!()
                };
                Ok((a, b + self.b.unwrap_or(0.0)))
            }
            (None, Some(a)) => {
                let b = self.b.unwrap_or(0.0);
                NoiseModel::poisson_gauss(a, b)?;
                Ok((a, b))
            }
            (None, None) => Err(CliError::Usage("noise parameters missing: give --lambda or --a".into())),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Must end in `.npf`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Poisson)]
    pub model: ModelKind,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Standard deviation for `--model gauss`.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum InverseKind {
    Unbiased,
    Algebraic,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GatArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    #[arg(long, value_enum, default_value_t = InverseKind::Unbiased)]
    pub inverse: InverseKind,
    #[arg(long, default_value_t = 8)]
    pub bit_depth: u32,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Reference image.
    #[arg(long)]
    pub clean: PathBuf,
    /// Image under test.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ExportArgs {
    /// Checkpoint written by `denoise`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Which transform of a per-channel checkpoint to export.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Directory of clean images; the procedural corpus is used if absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory for `bench.csv`, `bench.md` and the manifest.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,25,50")]
    pub lambda: Vec<f64>,
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub stride_k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side of the procedural corpus images.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Exit 1 unless the aggregate thresholds hold.
    #[arg(long)]
    pub check: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CorpusArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Argument vector that reproduces the run, program name excluded.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("plain data serializes");
        write_text(path, &(text + "\n"))
    }
}

struct Recorder {
    command: &'static str,
    args: Vec<String>,
    start: Instant,
}

impl Recorder {
    fn finish<C: Serialize>(
        self,
        config: &C,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[&Path],
        manifest: &Path,
    ) -> CliResult<()> {
        let show = |p: &&Path| p.display().to_string();
        RunManifest {
            command: self.command.to_string(),
            args: self.args,
            config: serde_json::to_value(config).expect("plain data serializes"),
            seed,
            inputs: inputs.iter().map(show).collect(),
            outputs: outputs.iter().map(show).collect(),
            version: VERSION.to_string(),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        }
        .write(manifest)
    }
}

/// `out.png` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn bit_depth(bits: u32) -> CliResult<BitDepth> {
    BitDepth::from_bits(bits).map_err(|e| CliError::Usage(e.to_string()))
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        // a pool that already exists (e.g. a second run in one process) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parses and runs one command line (program name first).
pub fn run_from<I, T>(argv: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Usage(String::new())
        }
        _ => CliError::Usage(e.to_string()),
    })?;
    configure_threads();
    let rest: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    dispatch(cli.command, rest)
}

/// Runs a command line and reports errors on stderr; returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    if let Err(e) = Cli::try_parse_from(&argv) {
        let code = if e.use_stderr() { 2 } else { 0 };
        let _ = e.print();
        return code;
    }
    match run_from(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("n2vst: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, args: Vec<String>) -> CliResult<()> {
    let rec = |name: &'static str| Recorder {
        command: name,
        args: args.clone(),
        start: Instant::now(),
    };
    match command {
        Command::Denoise(a) => cmd_denoise(&a, rec("denoise")),
        Command::Synth(a) => cmd_synth(&a, rec("synth")),
        Command::Gat(a) => cmd_gat(&a, rec("gat")),
        Command::Eval(a) => cmd_eval(&a).map(|report| print!("{}", report.to_text())),
        Command::ExportVst(a) => cmd_export_vst(&a, rec("export-vst")),
        Command::Bench(a) => cmd_bench(&a, rec("bench")).map(|_| ()),
        Command::Corpus(a) => cmd_corpus(&a, rec("corpus")),
        Command::Replay(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if m.command == "replay" {
                return Err(CliError::Usage("manifest records a replay".into()));
            }
            run_from(std::iter::once("n2vst".to_string()).chain(m.args))
        }
    }
}

pub fn train_config(
    iters: usize,
    batch: usize,
    patch: usize,
    stride_k: usize,
    seed: u64,
    sigma_d: f64,
) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        iterations: iters,
        batch,
        patch,
        stride_k,
        seed,
        sigma_d,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_denoise(a: &DenoiseArgs, rec: Recorder) -> CliResult<()> {
    let mut cfg = train_config(a.iters, a.batch, a.patch, a.stride_k, a.seed, a.denoiser.sigma_d)?;
    cfg.lr0 = a.lr;
    cfg.shared_vst_across_channels = !a.per_channel;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let depth = bit_depth(a.bit_depth)?;
    let d = a.denoiser.build()?;
    let trace = a.trace.clone().unwrap_or_else(|| sibling(&a.output, "trace.csv"));
    let ckpt = a.export_vst.clone().unwrap_or_else(|| sibling(&a.output, "vst.json"));
    let manifest = sibling(&a.output, "manifest.json");

    let z = load_image(&a.input)?;
    let outcome = train(&z, &d, &cfg)?;
    let out = infer(&z, &outcome.vsts, &d, cfg.sigma_d)?;
    save_image(&out, &a.output, depth)?;
    write_text(&ckpt, &(outcome.vsts.serialize() + "\n"))?;
    write_text(&trace, &outcome.trace_csv())?;
    rec.finish(&(a, &cfg), Some(a.seed), &[&a.input], &[&a.output, &ckpt, &trace], &manifest)
}

pub fn noise_model(model: ModelKind, noise: &NoiseArgs, sigma: Option<f64>) -> CliResult<NoiseModel> {
    match model {
        ModelKind::Gauss => {
            let s = sigma.ok_or_else(|| CliError::Usage("--model gauss needs --sigma".into()))?;
            Ok(NoiseModel::gaussian(s)?)
        }
        ModelKind::Poisson => {
            if noise.b.is_some_and(|b| b != 0.0) {
                return Err(CliError::Usage("--model poisson takes no --b; use poisson-gauss".into()));
            }
            let (a, b) = noise.gain_and_offset()?;
            Ok(NoiseModel::poisson_gauss(a, b)?)
        }
        ModelKind::PoissonGauss => {
            let (a, b) = noise.gain_and_offset()?;
            Ok(NoiseModel::poisson_gauss(a, b)?)
        }
    }
}

fn cmd_synth(a: &SynthArgs, rec: Recorder) -> CliResult<()> {
    let model = noise_model(a.model, &a.noise, a.sigma)?;
    let is_npf = a
        .output
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("npf"));
    if !is_npf {
        return Err(CliError::Usage(
            "noisy images are stored as float; give an --output ending in .npf".into(),
        ));
    }
    let clean = load_image(&a.input)?;
    let z = synthesize(&clean, &model, a.seed)?;
    save_image(&z, &a.output, BitDepth::Sixteen)?;
    let manifest = sibling(&a.output, "manifest.json");
    rec.finish(&(a, &model_summary(&model)), Some(a.seed), &[&a.input], &[&a.output], &manifest)
}

fn model_summary(model: &NoiseModel) -> serde_json::Value {
    match *model {
        NoiseModel::PoissonGauss { a, b } => serde_json::json!({ "poisson_gauss": { "a": a, "b": b } }),
        NoiseModel::Gaussian { sigma } => serde_json::json!({ "gaussian": { "sigma": sigma } }),
    }
}

fn cmd_gat(a: &GatArgs, rec: Recorder) -> CliResult<()> {
    let (gain, offset) = a.noise.gain_and_offset()?;
    let depth = bit_depth(a.bit_depth)?;
    let d = a.denoiser.build()?;
    let mode = match a.inverse {
        InverseKind::Unbiased => InverseMode::Unbiased,
        InverseKind::Algebraic => InverseMode::Algebraic,
    };
    let z = load_image(&a.input)?;
    let out = gat_pipeline(&z, gain, offset, &d, a.denoiser.sigma_d, mode)?;
    save_image(&out, &a.output, depth)?;
    let manifest = sibling(&a.output, "manifest.json");
    rec.finish(a, None, &[&a.input], &[&a.output], &manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the images are identical (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub ssim: f64,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let p = self.psnr_db.map_or_else(|| "inf".to_string(), |v| format!("{v:.4}"));
        format!("psnr_db={p}\nssim={:.6}\n", self.ssim)
    }
}

pub fn evaluate(clean: &ImageBuffer, test: &ImageBuffer, peak: f64) -> CliResult<EvalReport> {
    let p = psnr(test, clean, peak)?;
    Ok(EvalReport {
        psnr_db: p.is_finite().then_some(p),
        ssim: ssim(test, clean)?,
    })
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<EvalReport> {
    let clean = load_image(&a.clean)?;
    let test = load_image(&a.input)?;
    let report = evaluate(&clean, &test, a.peak)?;
    if let Some(out) = &a.output {
        let text = serde_json::to_string_pretty(&report).expect("plain data serializes");
        write_text(out, &(text + "\n"))?;
    }
    Ok(report)
}

fn cmd_export_vst(a: &ExportArgs, rec: Recorder) -> CliResult<()> {
    if a.points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.input.display())))?;
    let set = VstSet::deserialize(&text)?;
    let vst = set.vsts().get(a.channel).ok_or_else(|| {
        CliError::Usage(format!("checkpoint has {} transforms, no channel {}", set.vsts().len(), a.channel))
    })?;
    write_text(&a.output, &vst.curve_csv(a.points))?;
    let manifest = sibling(&a.output, "manifest.json");
    rec.finish(a, None, &[&a.input], &[&a.output], &manifest)
}

fn cmd_corpus(a: &CorpusArgs, rec: Recorder) -> CliResult<()> {
    if a.size < 16 {
        return Err(CliError::Usage("--size must be at least 16".into()));
    }
    std::fs::create_dir_all(&a.output).map_err(|e| CliError::Io(format!("{}: {e}", a.output.display())))?;
    let mut written = Vec::new();
    for name in corpus::SCENES {
        let path = a.output.join(format!("{name}.png"));
        save_image(&corpus::scene(name, a.size).expect("known scene"), &path, BitDepth::Sixteen)?;
        written.push(path);
    }
    let outs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    rec.finish(a, None, &[], &outs, &a.output.join("manifest.json"))
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub lambdas: Vec<f64>,
    pub denoiser: Denoiser,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub image: String,
    pub lambda: f64,
    pub psnr_noisy: f64,
    pub ssim_noisy: f64,
    pub psnr_gat: f64,
    pub ssim_gat: f64,
    pub psnr_n2vst: f64,
    pub ssim_n2vst: f64,
    /// Learned transform with the blind-spot denoiser kept at inference.
    pub psnr_blindspot: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchMeans {
    pub psnr_noisy: f64,
    pub ssim_noisy: f64,
    pub psnr_gat: f64,
    pub ssim_gat: f64,
    pub psnr_n2vst: f64,
    pub ssim_n2vst: f64,
    pub psnr_blindspot: f64,
}

/// Aggregate thresholds enforced by `bench --check`.
pub const MAX_DEFICIT_VS_GAT_DB: f64 = 0.5;
pub const MIN_GAIN_OVER_NOISY_DB: f64 = 3.0;

impl BenchReport {
    /// Column means over rows accepted by `keep`.
    pub fn means(&self, keep: impl Fn(&BenchRow) -> bool) -> Option<BenchMeans> {
        let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| keep(r)).collect();
        if rows.is_empty() {
            return None;
        }
        let m = |f: fn(&BenchRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
        Some(BenchMeans {
            psnr_noisy: m(|r| r.psnr_noisy),
            ssim_noisy: m(|r| r.ssim_noisy),
            psnr_gat: m(|r| r.psnr_gat),
            ssim_gat: m(|r| r.ssim_gat),
            psnr_n2vst: m(|r| r.psnr_n2vst),
            ssim_n2vst: m(|r| r.ssim_n2vst),
            psnr_blindspot: m(|r| r.psnr_blindspot),
        })
    }

    /// Threshold violations on the all-rows means; empty when all hold.
    pub fn check(&self) -> Vec<String> {
        let Some(m) = self.means(|_| true) else {
            return vec!["no rows".into()];
        };
        let mut failures = Vec::new();
        if m.psnr_n2vst < m.psnr_gat - MAX_DEFICIT_VS_GAT_DB {
            failures.push(format!(
                "mean PSNR {:.3} dB is more than {MAX_DEFICIT_VS_GAT_DB} dB below the Anscombe baseline {:.3} dB",
                m.psnr_n2vst, m.psnr_gat
            ));
        }
        if m.psnr_n2vst < m.psnr_noisy + MIN_GAIN_OVER_NOISY_DB {
            failures.push(format!(
                "mean PSNR {:.3} dB gains less than {MIN_GAIN_OVER_NOISY_DB} dB over the noisy input {:.3} dB",
                m.psnr_n2vst, m.psnr_noisy
            ));
        }
        failures
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "image,lambda,psnr_noisy,ssim_noisy,psnr_gat,ssim_gat,psnr_n2vst,ssim_n2vst,psnr_blindspot\n",
        );
        let line = |name: &str, lam: &str, v: [f64; 7]| {
            format!(
                "{name},{lam},{:.4},{:.6},{:.4},{:.6},{:.4},{:.6},{:.4}\n",
                v[0], v[1], v[2], v[3], v[4], v[5], v[6]
            )
        };
        for r in &self.rows {
            out.push_str(&line(&r.image, &format!("{}", r.lambda), row_values(r)));
        }
        if let Some(m) = self.means(|_| true) {
            out.push_str(&line("mean", "all", mean_values(&m)));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| image | λ | noisy PSNR | noisy SSIM | GAT PSNR | GAT SSIM | learned PSNR | learned SSIM | blind-spot PSNR |\n\
             |---|---|---|---|---|---|---|---|---|\n",
        );
        let line = |name: &str, lam: &str, v: [f64; 7]| {
            format!(
                "| {name} | {lam} | {:.2} | {:.4} | {:.2} | {:.4} | {:.2} | {:.4} | {:.2} |\n",
                v[0], v[1], v[2], v[3], v[4], v[5], v[6]
            )
        };
        for r in &self.rows {
            out.push_str(&line(&r.image, &format!("{}", r.lambda), row_values(r)));
        }
        if let Some(m) = self.means(|_| true) {
            out.push_str(&line("**mean**", "all", mean_values(&m)));
        }
        out
    }
}

fn row_values(r: &BenchRow) -> [f64; 7] {
    [r.psnr_noisy, r.ssim_noisy, r.psnr_gat, r.ssim_gat, r.psnr_n2vst, r.ssim_n2vst, r.psnr_blindspot]
}

fn mean_values(m: &BenchMeans) -> [f64; 7] {
    [m.psnr_noisy, m.ssim_noisy, m.psnr_gat, m.ssim_gat, m.psnr_n2vst, m.ssim_n2vst, m.psnr_blindspot]
}

/// Runs every (image, λ) case. Cases run in parallel; rows come back in
/// input order with λ varying fastest.
pub fn run_bench(images: &[(String, ImageBuffer)], cfg: &BenchConfig) -> CliResult<BenchReport> {
    if images.is_empty() {
        return Err(CliError::Usage("benchmark corpus is empty".into()));
    }
    if cfg.lambdas.is_empty() {
        return Err(CliError::Usage("no noise levels given".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..cfg.lambdas.len()).map(move |l| (i, l)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, l)| bench_case(&images[i].0, &images[i].1, cfg, i, l))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(BenchReport { rows })
}

fn bench_case(name: &str, clean: &ImageBuffer, cfg: &BenchConfig, i: usize, l: usize) -> CliResult<BenchRow> {
    let lambda = cfg.lambdas[l];
    let case_seed = cfg.seed.wrapping_add(1000 * i as u64 + l as u64);
    let model = NoiseModel::poisson(lambda)?;
    let z = synthesize(clean, &model, case_seed)?;
    let sigma_d = cfg.train.sigma_d;
    let gat = gat_pipeline(&z, 1.0 / lambda, 0.0, &cfg.denoiser, sigma_d, InverseMode::Unbiased)?;
    let tcfg = TrainConfig {
        seed: case_seed,
        ..cfg.train.clone()
    };
    let outcome = train(&z, &cfg.denoiser, &tcfg)?;
    let learned = infer(&z, &outcome.vsts, &cfg.denoiser, sigma_d)?;
    let partition = Partition::new(tcfg.stride_k)?;
    let composite = infer_blindspot(&z, &outcome.vsts, &cfg.denoiser, sigma_d, &partition)?;
    Ok(BenchRow {
        image: name.to_string(),
        lambda,
        psnr_noisy: psnr(&z, clean, 1.0)?,
        ssim_noisy: ssim(&z, clean)?,
        psnr_gat: psnr(&gat, clean, 1.0)?,
        ssim_gat: ssim(&gat, clean)?,
        psnr_n2vst: psnr(&learned, clean, 1.0)?,
        ssim_n2vst: ssim(&learned, clean)?,
        psnr_blindspot: psnr(&composite, clean, 1.0)?,
    })
}

/// Clean images of a directory, sorted by file name; files that are not
/// images are skipped.
pub fn load_corpus_dir(dir: &Path) -> CliResult<Vec<(String, ImageBuffer)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm" | "pnm" | "npf")
            })
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_image(&p)?))
        })
        .collect()
}

pub fn procedural_corpus(size: usize) -> Vec<(String, ImageBuffer)> {
    corpus::SCENES
        .iter()
        .map(|name| (name.to_string(), corpus::scene(name, size).expect("known scene")))
        .collect()
}

fn cmd_bench(a: &BenchArgs, rec: Recorder) -> CliResult<BenchReport> {
    if a.lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(CliError::Usage("every --lambda must be positive".into()));
    }
    let train = train_config(a.iters, a.batch, a.patch, a.stride_k, a.seed, a.denoiser.sigma_d)?;
    let cfg = BenchConfig {
        lambdas: a.lambda.clone(),
        denoiser: a.denoiser.build()?,
        train,
        seed: a.seed,
    };
    let images = match &a.input {
        Some(dir) => load_corpus_dir(dir)?,
        None => {
            if a.size < 16 {
                return Err(CliError::Usage("--size must be at least 16".into()));
            }
            procedural_corpus(a.size)
        }
    };
    let report = run_bench(&images, &cfg)?;
    std::fs::create_dir_all(&a.output).map_err(|e| CliError::Io(format!("{}: {e}", a.output.display())))?;
    let csv = a.output.join("bench.csv");
    let md = a.output.join("bench.md");
    write_text(&csv, &report.to_csv())?;
    write_text(&md, &report.to_markdown())?;
    print!("{}", report.to_markdown());
    let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    rec.finish(a, Some(a.seed), &inputs, &[&csv, &md], &a.output.join("manifest.json"))?;
    if a.check {
        let failures = report.check();
        if !failures.is_empty() {
            return Err(CliError::Check(failures.join("\n")));
        }
    }
    Ok(report)
}
