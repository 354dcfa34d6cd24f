//! Acceptance suite. Runs every criterion at full size and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

use std::path::Path;
use std::time::Instant;

use n2vst::blindspot::{apply_blindspot, ClassSelector, Partition};
use n2vst::corpus::{banded_ramp, ramp};
use n2vst::denoise::{ConvLayer, ConvNet, Denoiser, DEFAULT_SIGMA};
use n2vst::image::{Augmentation, ImageBuffer, PatchBatch};
use n2vst::io::{save_image, BitDepth};
use n2vst::noise::{
    gat_forward, gat_inverse, stabilization_profile, synthesize, InverseMode, NoiseModel, Transform,
};
use n2vst::rng::seeded;
use n2vst::train::{loss_and_grad, train, TrainConfig};
use n2vst::vst::{Vst, DEFAULT_KNOTS};
use n2vst_cli::{main_with_args, procedural_corpus, run_bench, BenchConfig, BenchReport};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_vst(rng: &mut impl Rng, n: usize, z_min: f64, z_max: f64) -> Vst {
    let step = ((z_max - z_min) / (n - 1) as f64).ln();
    let mut theta = vec![rng.random_range(-0.5..0.5)];
    theta.extend((1..n).map(|_| step + rng.random_range(-1.5..1.5)));
    Vst::from_parts(z_min, z_max, theta, rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)).unwrap()
}

fn spline_suite() -> Outcome {
    let mut rng = seeded(1);
    let mut worst_round_trip = 0.0f64;
    let mut monotone = true;
    for _ in 0..500 {
        let (lo, span) = (rng.random_range(-1.0..1.0), rng.random_range(0.1..3.0));
        let v = random_vst(&mut rng, DEFAULT_KNOTS, lo, lo + span);
        let mut zs: Vec<f64> = (0..200).map(|_| rng.random_range(lo - span..lo + 2.0 * span)).collect();
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        let fs: Vec<f64> = zs.iter().map(|&z| v.forward(z)).collect();
        monotone &= fs.windows(2).all(|w| w[0] < w[1]);
        let inv: Vec<f64> = fs.iter().map(|&w| v.algebraic_inverse(w)).collect();
        monotone &= inv.windows(2).all(|w| w[0] < w[1]);
        for (z, back) in zs.iter().zip(&inv) {
            worst_round_trip = worst_round_trip.max((z - back).abs());
        }
    }
    let mut worst_identity = 0.0f64;
    for _ in 0..200 {
        let lo = rng.random_range(-1.0..1.0);
        let hi = lo + rng.random_range(0.01..5.0);
        let v = Vst::new_identity(lo, hi, DEFAULT_KNOTS).unwrap();
        for _ in 0..50 {
            let z = rng.random_range(lo - 1.0..hi + 1.0);
            worst_identity = worst_identity.max((v.forward(z) - z).abs()).max((v.inverse(z) - z).abs());
        }
    }
    let count = Vst::new_identity(0.0, 1.0, DEFAULT_KNOTS).unwrap().parameter_count();
    outcome(
        monotone && worst_round_trip <= 1e-10 && worst_identity <= 1e-9 && count == 130,
        format!(
            "monotone={monotone}, round trip {worst_round_trip:.2e} (<= 1e-10), identity {worst_identity:.2e} (<= 1e-9), parameters {count} (== 130)"
        ),
    )
}

fn gradient_exactness() -> Outcome {
    let p = Partition::default();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for (label, d) in [("blur", Denoiser::gaussian_blur(1.0).unwrap()), ("dct", Denoiser::default_dct())] {
        for seed in 0..20u64 {
            let mut rng = seeded(1000 + seed);
            let v = random_vst(&mut rng, DEFAULT_KNOTS, 0.0, 1.0);
            let patches: Vec<ImageBuffer> = (0..2)
                .map(|_| ImageBuffer::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.02..0.98)))
                .collect();
            let batch = PatchBatch {
                source_offsets: vec![(0, 0); 2],
                augmentations: vec![Augmentation::default(); 2],
                patches,
            };
            let class = p.class(rng.random_range(0..p.class_count()));
            let (_, g) = loss_and_grad(&v, &d, &batch, &p, class, 0.1).unwrap();
            let g = g.to_flat();
            let base = v.parameters();
            let fd: Vec<f64> = (0..base.len())
                .map(|i| {
                    let eval = |delta: f64| {
                        let mut q = base.clone();
                        q[i] += delta;
                        let mut u = v.clone();
                        u.set_parameters(&q).unwrap();
                        loss_and_grad(&u, &d, &batch, &p, class, 0.1).unwrap().0
                    };
                    (eval(h) - eval(-h)) / (2.0 * h)
                })
                .collect();
            let num = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            let rel = num / den;
            if rel > worst {
                worst = rel;
                worst_at = format!("{label} seed {seed}");
            }
        }
    }
    outcome(worst < 1e-3, format!("worst relative error {worst:.2e} ({worst_at}), 40 cases, tolerance 1e-3"))
}

fn random_convnet() -> ConvNet {
    let mut rng = seeded(77);
    let mut layer = |i: usize, o: usize| ConvLayer {
        in_channels: i,
        out_channels: o,
        kernel_size: 3,
        weights: (0..o * i * 9).map(|_| rng.random_range(-0.3..0.3)).collect(),
        bias: (0..o).map(|_| rng.random_range(-0.1..0.1)).collect(),
    };
    ConvNet::new(vec![layer(2, 8), layer(8, 8), layer(8, 1)], true).unwrap()
}

fn blindspot_structure() -> Outcome {
    let p = Partition::default();
    let denoisers = [
        Denoiser::Identity,
        Denoiser::gaussian_blur(1.0).unwrap(),
        Denoiser::default_dct(),
        Denoiser::ConvNet(random_convnet()),
    ];
    let mut rng = seeded(3);
    let z = ImageBuffer::from_fn(32, 32, 1, |_, _, _| rng.random_range(0.0..1.0));
    let mut violations = 0;
    for d in &denoisers {
        let base = apply_blindspot(d, &z, 0.1, &p, ClassSelector::All).unwrap();
        for _ in 0..50 {
            let (r, c) = (rng.random_range(0..32), rng.random_range(0..32));
            let mut moved = z.clone();
            moved.set(r, c, 0, z.get(r, c, 0) + rng.random_range(-2.0..2.0));
            let out = apply_blindspot(d, &moved, 0.1, &p, ClassSelector::All).unwrap();
            if out.image.get(r, c, 0).to_bits() != base.image.get(r, c, 0).to_bits() {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} of 200 perturbations changed their own output (identity, blur, dct, convnet)"),
    )
}

fn risk_identity() -> Outcome {
    let sigma = 0.1;
    let clean = n2vst::corpus::shapes(32);
    let model = NoiseModel::gaussian(sigma).unwrap();
    let p = Partition::default();
    let n = clean.len() as f64;
    let mut details = Vec::new();
    let mut pass = true;
    for (label, d) in [("dct", Denoiser::default_dct()), ("blur", Denoiser::gaussian_blur(1.0).unwrap())] {
        let diffs: Vec<f64> = (0..2000u64)
            .map(|draw| {
                let z = synthesize(&clean, &model, 50_000 + draw).unwrap();
                let g = apply_blindspot(&d, &z, sigma, &p, ClassSelector::All).unwrap().image;
                let to_z: f64 = g.data().iter().zip(z.data()).map(|(a, b)| (a - b).powi(2)).sum();
                let to_s: f64 = g.data().iter().zip(clean.data()).map(|(a, b)| (a - b).powi(2)).sum();
                to_z - to_s
            })
            .collect();
        let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        let se = (var / diffs.len() as f64).sqrt();
        let expected = n * sigma * sigma;
        let ok = (m - expected).abs() <= 3.0 * se;
        pass &= ok;
        details.push(format!("{label}: {m:.3} vs N·σ² = {expected:.3}, |Δ| = {:.2} SE", (m - expected).abs() / se));
    }
    outcome(pass, details.join("; "))
}

fn constant_draws(model: &NoiseModel, s: f64, n: usize, seed: u64) -> Vec<f64> {
    synthesize(&ImageBuffer::filled(n / 1000, 1000, 1, s), model, seed).unwrap().into_data()
}

fn gat_stabilization() -> Outcome {
    let unit = NoiseModel::poisson_gauss(1.0, 0.0).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for rate in 4..=50u32 {
        let w: Vec<f64> = constant_draws(&unit, rate as f64, 100_000, rate as u64)
            .iter()
            .map(|&z| gat_forward(z, 1.0, 0.0))
            .collect();
        let m = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
        lo = lo.min(sd);
        hi = hi.max(sd);
    }
    let (a, s) = (1.0 / 20.0, 0.5);
    let z = constant_draws(&NoiseModel::poisson_gauss(a, 0.0).unwrap(), s, 1_000_000, 99);
    let mean_w = z.iter().map(|&v| gat_forward(v, a, 0.0)).sum::<f64>() / z.len() as f64;
    let alg = (gat_inverse(mean_w, a, 0.0, InverseMode::Algebraic).unwrap() - s).abs();
    let unb = (gat_inverse(mean_w, a, 0.0, InverseMode::Unbiased).unwrap() - s).abs();
    outcome(
        lo >= 0.9 && hi <= 1.1 && unb < alg,
        format!("std over rates 4..=50 in [{lo:.4}, {hi:.4}] (within [0.9, 1.1]); bias unbiased {unb:.2e} < algebraic {alg:.2e}"),
    )
}

fn learned_stabilization() -> Outcome {
    let model = NoiseModel::poisson(30.0).unwrap();
    let d = Denoiser::default_dct();
    let measure = |clean: &ImageBuffer| {
        let z = synthesize(clean, &model, 1).unwrap();
        let out = train(&z, &d, &TrainConfig::default()).unwrap();
        let before = stabilization_profile(Transform::Identity, clean, &model, 10, 20, 5).unwrap().ratio;
        let after = stabilization_profile(Transform::Vst(out.vsts.primary()), clean, &model, 10, 20, 5)
            .unwrap()
            .ratio;
        (before, after)
    };
    let (before, after) = measure(&banded_ramp(256, 0.15, 0.9, 16, 0.1));
    let (plain_before, plain_after) = measure(&ramp(256, 256, 0.15, 1.0));
    outcome(
        before >= 2.0 && after <= 1.3,
        format!(
            "banded ramp: identity {before:.3} (>= 2.0) -> trained {after:.3} (<= 1.3); plain ramp for reference: {plain_before:.3} -> {plain_after:.3}"
        ),
    )
}

fn end_to_end(report: &BenchReport) -> Outcome {
    let m = report.means(|_| true).unwrap();
    let pass = m.psnr_n2vst >= m.psnr_gat - 0.5 && m.psnr_n2vst >= m.psnr_noisy + 3.0;
    outcome(
        pass,
        format!(
            "mean PSNR learned {:.3} dB, Anscombe oracle {:.3} dB (need >= {:.3}), noisy {:.3} dB (need >= {:.3}); {} cases",
            m.psnr_n2vst,
            m.psnr_gat,
            m.psnr_gat - 0.5,
            m.psnr_noisy,
            m.psnr_noisy + 3.0,
            report.rows.len()
        ),
    )
}

fn inference_swap(report: &BenchReport) -> Outcome {
    let m = report.means(|r| r.lambda == 50.0).unwrap();
    let per_image: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.lambda == 50.0)
        .map(|r| format!("{} {:.2}/{:.2}", r.image, r.psnr_n2vst, r.psnr_blindspot))
        .collect();
    outcome(
        m.psnr_n2vst > m.psnr_blindspot,
        format!(
            "λ=50 mean PSNR plain D {:.3} dB > blind-spot composite {:.3} dB (per image: {})",
            m.psnr_n2vst,
            m.psnr_blindspot,
            per_image.join(", ")
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let clean = dir.join("clean.png");
    save_image(&n2vst::corpus::shapes(256), &clean, BitDepth::Sixteen).unwrap();
    let noisy = dir.join("z.npf");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let run = |args: Vec<String>| main_with_args(std::iter::once("n2vst".to_string()).chain(args));
    let code = run(vec!["synth".into(), "--input".into(), s(&clean), "--output".into(), s(&noisy), "--lambda".into(), "25".into(), "--seed".into(), "4".into()]);
    if code != 0 {
        return outcome(false, format!("synth exited {code}"));
    }
    let outs = [dir.join("a.png"), dir.join("b.png")];
    for out in &outs {
        let code = run(vec![
            "denoise".into(), "--input".into(), s(&noisy), "--output".into(), s(out),
            "--denoiser".into(), "dct".into(), "--iters".into(), "2000".into(), "--seed".into(), "1".into(),
        ]);
        if code != 0 {
            return outcome(false, format!("denoise exited {code}"));
        }
    }
    let mut same = Vec::new();
    for suffix in ["png", "vst.json", "trace.csv"] {
        let a = std::fs::read(outs[0].with_extension(suffix)).unwrap();
        let b = std::fs::read(outs[1].with_extension(suffix)).unwrap();
        same.push((suffix, a == b));
    }
    outcome(
        same.iter().all(|(_, eq)| *eq),
        same.iter().map(|(s, eq)| format!("{s} identical={eq}")).collect::<Vec<_>>().join(", "),
    )
}

fn throughput() -> Outcome {
    let clean = n2vst::corpus::waves(256);
    let z = synthesize(&clean, &NoiseModel::poisson(25.0).unwrap(), 8).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let res = pool.install(|| train(&z, &Denoiser::default_dct(), &TrainConfig::default()));
    let secs = start.elapsed().as_secs_f64();
    match res {
        Ok(out) => outcome(
            secs <= 300.0 && out.trace.len() == 2000,
            format!("2000 iterations on 256x256 with dct, 1 thread: {secs:.1} s (<= 300 s)"),
        ),
        Err(e) => outcome(false, format!("training failed: {e}")),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("{} {id:>2} {name}: {} [{secs:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };
    timed(1, "spline correctness", &spline_suite);
    timed(2, "gradient exactness", &gradient_exactness);
    timed(3, "blind-spot structure", &blindspot_structure);
    timed(4, "risk identity", &risk_identity);
    timed(5, "GAT stabilization and bias", &gat_stabilization);
    timed(6, "learned stabilization", &learned_stabilization);

    let start = Instant::now();
    let cfg = BenchConfig {
        lambdas: vec![5.0, 25.0, 50.0],
        denoiser: Denoiser::default_dct(),
        train: TrainConfig {
            sigma_d: DEFAULT_SIGMA,
            ..TrainConfig::default()
        },
        seed: 0,
    };
    let report = run_bench(&procedural_corpus(256), &cfg).unwrap();
    let bench_secs = start.elapsed().as_secs_f64();
    println!("     benchmark table ({bench_secs:.1} s):\n{}", report.to_markdown());
    timed(7, "end-to-end relative quality", &|| end_to_end(&report));
    timed(8, "inference swap benefit", &|| inference_swap(&report));
    timed(9, "determinism", &|| determinism(dir.path()));
    timed(10, "throughput", &throughput);

    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.2.pass)
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
