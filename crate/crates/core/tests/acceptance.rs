//! Acceptance suite. Runs every criterion in sequence on a single worker
//! thread and prints one `PASS`/`FAIL`/`SKIP` line each. Exits nonzero if
//! any criterion fails.
//!
//! The real-data criterion runs only when `LUMENORM_YALEB_MANIFEST` (a
//! manifest with gallery = frontal shot per subject) or `LUMENORM_YALEB_DIR`
//! (a directory of `yaleBNN_P00A...E...` images) is set.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lumenorm::classifier::{chi_square, nn_classify, GalleryEntry};
use lumenorm::features::{block_count, circular_transitions, msulbph, BlockLayout, FeatureKind, FeatureVector};
use lumenorm::filters::{
    bilateral_filter, convolve, dob_filter, dog_filter, gaussian_kernel, BilateralParams,
};
use lumenorm::harness::{
    load_manifest, report_csv, report_summary_json, run_experiment, synth_dataset, yale_dataset,
    Dataset, EvaluationReport, ExperimentSpec, SynthSpec,
};
use lumenorm::image::{IntensityImage, RealImage};
use lumenorm::pipeline::{fdfi_ltein, MethodId, PipelineConfig};
use lumenorm::stages::{blend, fuse_sd, fusion_weights, lce_block, lce_stage1, tanh_compress, FusionWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Check) -> Check {
    let t = Instant::now();
    let detail = f()?;
    let el = t.elapsed();
    ensure(el < budget, || format!("{detail}; took {el:?}, budget {budget:?}"))?;
    Ok(format!("{detail}; {el:.2?}"))
}

fn random_real(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> RealImage {
    RealImage::from_fn(w, h, |_, _| rng.gen_range(lo..hi)).unwrap()
}

fn max_abs(img: &RealImage) -> f64 {
    img.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn max_abs_diff(a: &RealImage, b: &RealImage) -> f64 {
    a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn c1_filter_algebra() -> Check {
    timed(Duration::from_secs(5), || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst_mass = 0.0f64;
        for s in [0.5, 1.0, 1.5, 2.0, 3.0, 4.5] {
            let k = gaussian_kernel(s).map_err(|e| e.to_string())?;
            worst_mass = worst_mass.max((k.weights().iter().sum::<f64>() - 1.0).abs());
        }
        ensure(worst_mass <= 1e-12, || format!("gaussian mass error {worst_mass:e}"))?;

        let p1 = BilateralParams::new(1.0, 0.3, 3).unwrap();
        let p2 = BilateralParams::new(2.0, 0.3, 6).unwrap();
        let wide = BilateralParams::new(1.0, 1e6, 3).unwrap();
        let blur = gaussian_kernel(1.0).unwrap();
        let (mut worst_const, mut worst_blur) = (0.0f64, 0.0f64);
        for _ in 0..50 {
            let c = rng.gen_range(-50.0..50.0);
            let flat = RealImage::filled(16, 16, c).unwrap();
            worst_const = worst_const.max(max_abs(&dog_filter(&flat, 1.0, 2.0).unwrap()));
            worst_const = worst_const.max(max_abs(&dob_filter(&flat, &p1, &p2).unwrap()));

            let img = random_real(&mut rng, 16, 16, 0.0, 8.0);
            let b = bilateral_filter(&img, &wide).unwrap();
            worst_blur = worst_blur.max(max_abs_diff(&b, &convolve(&img, &blur)));
        }
        ensure(worst_const <= 1e-9, || format!("DoG/DoB of constant: {worst_const:e}"))?;
        ensure(worst_blur <= 1e-6, || format!("wide-range bilateral vs blur: {worst_blur:e}"))?;
        Ok(format!(
            "mass err {worst_mass:.1e}, const residue {worst_const:.1e}, blur diff {worst_blur:.1e}"
        ))
    })
}

fn c2_fusion() -> Check {
    timed(Duration::from_secs(1), || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst_self = 0.0f64;
        let mut worst_sum = 0.0f64;
        for _ in 0..50 {
            let a = random_real(&mut rng, 16, 16, -2.0, 2.0);
            let b = random_real(&mut rng, 16, 16, -1.0, 1.0);
            worst_self = worst_self.max(max_abs_diff(&fuse_sd(&a, &a).unwrap(), &a));
            let w = fusion_weights(&a, &b).unwrap();
            worst_sum = worst_sum.max((w.w_dog + w.w_dob - 1.0).abs());
        }
        ensure(worst_self <= 1e-12, || format!("fuse(A,A) deviates by {worst_self:e}"))?;
        ensure(worst_sum <= 1e-15, || format!("weights sum off by {worst_sum:e}"))?;

        let dog = random_real(&mut rng, 16, 16, -1.0, 1.0);
        let flat = RealImage::filled(16, 16, 0.25).unwrap();
        let w = fusion_weights(&dog, &flat).unwrap();
        ensure(w.w_dog == 1.0 && w.w_dob == 0.0, || format!("zero-SD DoB weights {w:?}"))?;
        ensure(fuse_sd(&dog, &flat).unwrap() == dog, || "zero-SD DoB output is not I_DoG".into())?;

        let z1 = RealImage::filled(16, 16, 0.0).unwrap();
        let z2 = RealImage::filled(16, 16, 3.0).unwrap();
        let w = fusion_weights(&z1, &z2).unwrap();
        ensure(w == FusionWeights::new(0.5).unwrap() && w.w_dob == 0.5, || {
            format!("both-zero SD weights {w:?}")
        })?;
        let mid = blend(&z1, &z2, w).unwrap();
        ensure(mid.data().iter().all(|&v| v == 1.5), || "both-zero blend not averaged".into())?;
        Ok(format!("self-fusion err {worst_self:.1e}, weight-sum err {worst_sum:.1e}"))
    })
}

/// Straight transcription of the two-phase block normalization.
fn lce_oracle(x: &[f64], alpha: f64, tau: f64, eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let d1 = (x.iter().map(|v| v.abs().powf(alpha)).sum::<f64>() / n).powf(1.0 / alpha).max(eps);
    let y: Vec<f64> = x.iter().map(|v| v / d1).collect();
    let d2 = (y.iter().map(|v| v.abs().min(tau).powf(alpha)).sum::<f64>() / n)
        .powf(1.0 / alpha)
        .max(eps);
    y.iter().map(|v| v / d2).collect()
}

fn c3_lce() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (alpha, tau, eps) = (0.1, 10.0, 1e-9);
    let mut worst_oracle = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..200 {
        let block = random_real(&mut rng, 5, 5, -3.0, 3.0);
        let got = lce_block(&block, alpha, tau, eps);
        let want = lce_oracle(block.data(), alpha, tau, eps);
        for (g, w) in got.data().iter().zip(&want) {
            worst_oracle = worst_oracle.max((g - w).abs());
        }
        let base = lce_stage1(&block, alpha, eps);
        for c in [0.5, 2.0, 10.0] {
            let scaled = lce_stage1(&block.map(|v| c * v), alpha, eps);
            for (s, b) in scaled.data().iter().zip(base.data()) {
                worst_scale = worst_scale.max((s - b).abs() / b.abs().max(1.0));
            }
        }
    }
    ensure(worst_oracle <= 1e-10, || format!("oracle mismatch {worst_oracle:e}"))?;
    ensure(worst_scale <= 1e-9, || format!("stage-1 scale drift {worst_scale:e}"))?;

    let wild = random_real(&mut rng, 16, 16, -1e6, 1e6);
    let mut extremes = wild.clone().into_data();
    extremes.extend([1e300, -1e300, 10.0, -10.0, 9.999_999_999]);
    let extremes = RealImage::new(extremes.len(), 1, extremes).unwrap();
    for img in [wild, extremes] {
        let t = tanh_compress(&img, tau).unwrap();
        ensure(t.data().iter().all(|v| v.abs() < tau), || "tanh output reached tau".into())?;
    }
    Ok(format!("oracle err {worst_oracle:.1e}, scale drift {worst_scale:.1e}"))
}

fn c4_census() -> Check {
    let counts: Vec<usize> = (1..=4).map(|l| block_count(l).unwrap()).collect();
    ensure(counts == [1, 5, 21, 85], || format!("block counts {counts:?}"))?;
    let img = IntensityImage::from_fn(64, 64, |x, y| ((x * 37 + y * 91) % 256) as u8).unwrap();
    let v = msulbph(&img, 3).map_err(|e| e.to_string())?;
    ensure(v.len() == 1239, || format!("msulbph:3 length {}", v.len()))?;
    let uniform = (0..=255u8).filter(|&c| circular_transitions(c) <= 2).count();
    ensure(uniform == 58, || format!("{uniform} uniform codes"))?;
    Ok(format!("blocks {counts:?}, msulbph:3 len 1239, uniform codes 58"))
}

fn random_hist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen() })
        .collect();
    let s: f64 = v.iter().sum::<f64>().max(1e-300);
    v.into_iter().map(|x| x / s).collect()
}

fn c5_metric() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..1000 {
        let a = random_hist(&mut rng, 59);
        // Every tenth pair is an exact copy to exercise the zero case.
        let b = if i % 10 == 0 { a.clone() } else { random_hist(&mut rng, 59) };
        let d = chi_square(&a, &b).unwrap();
        ensure(d >= 0.0, || format!("pair {i}: negative distance"))?;
        ensure(d == chi_square(&b, &a).unwrap(), || format!("pair {i}: asymmetric"))?;
        ensure((d == 0.0) == (a == b), || format!("pair {i}: zero-iff-equal broken"))?;
    }
    let fv = |values: Vec<f64>| FeatureVector {
        values,
        layout: BlockLayout::Grid { gx: 1, gy: 1 },
    };
    let entry = |label: &str, values: Vec<f64>| GalleryEntry {
        label: label.into(),
        vector: fv(values),
        source: format!("{label}.pgm").into(),
    };
    let gallery = vec![
        entry("far", vec![1.0, 0.0, 0.0]),
        entry("first", vec![0.2, 0.3, 0.5]),
        entry("second", vec![0.2, 0.3, 0.5]),
    ];
    let m = nn_classify(&fv(vec![0.2, 0.3, 0.5]), &gallery).unwrap();
    ensure(m.index == 1 && m.label == "first", || format!("tie went to {m:?}"))?;
    Ok("1000 pairs ok, tie -> lowest index".into())
}

/// Smooth seeded texture spanning exactly `[lo, hi]`.
fn texture(rng: &mut ChaCha8Rng, size: usize, lo: f64, hi: f64) -> IntensityImage {
    let waves: Vec<[f64; 4]> = (0..8)
        .map(|_| {
            let period: f64 = rng.gen_range(5.0..30.0);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / period;
            [k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.2..1.0)]
        })
        .collect();
    let f = RealImage::from_fn(size, size, |x, y| {
        waves
            .iter()
            .map(|w| w[3] * (w[0] * x as f64 + w[1] * y as f64 + w[2]).cos())
            .sum()
    })
    .unwrap();
    let (mn, mx) = f.min_max();
    IntensityImage::from_fn(size, size, |x, y| {
        (lo + (f.get(x, y) - mn) / (mx - mn) * (hi - lo)).round() as u8
    })
    .unwrap()
}

fn mean_abs_diff(a: &IntensityImage, b: &IntensityImage) -> f64 {
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .sum();
    s / a.data().len() as f64
}

fn c6_gain() -> Check {
    timed(Duration::from_secs(10), || {
        let cfg = PipelineConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut worst_out, mut least_in) = (0.0f64, f64::INFINITY);
        for _ in 0..20 {
            let img = texture(&mut rng, 100, 32.0, 120.0);
            let doubled = img.map(|v| v * 2);
            least_in = least_in.min(mean_abs_diff(&doubled, &img));
            let a = fdfi_ltein(&img, &cfg).map_err(|e| e.to_string())?;
            let b = fdfi_ltein(&doubled, &cfg).map_err(|e| e.to_string())?;
            worst_out = worst_out.max(mean_abs_diff(&a, &b));
        }
        ensure(least_in >= 32.0, || format!("input change only {least_in:.2}"))?;
        ensure(worst_out <= 8.0, || format!("output change {worst_out:.3} gray levels"))?;
        Ok(format!("max mean |out diff| {worst_out:.3}, min mean |in diff| {least_in:.2}"))
    })
}

fn experiment(ds: &Dataset, method: MethodId, feature: FeatureKind) -> Result<EvaluationReport, String> {
    run_experiment(&ExperimentSpec {
        dataset: ds.clone(),
        method,
        feature,
        config: PipelineConfig::default(),
        seed: 7,
    })
    .map_err(|e| e.to_string())
}

/// Synthesizes the 10-subject set and runs both arms. Returns the rates and
/// the serialized proposed-arm report.
fn synthetic_run(dir: &Path) -> Result<(f64, f64, String), String> {
    let ds = synth_dataset(&SynthSpec::standard(10, 100), 7, dir).map_err(|e| e.to_string())?;
    let reloaded = load_manifest(dir.join("manifest.csv"))
        .map_err(|e| e.to_string())?
        .with_size(100, 100);
    ensure(reloaded.entries.len() == ds.entries.len(), || "manifest mismatch".into())?;
    let ours = experiment(&reloaded, MethodId::Fdfi, FeatureKind::Msulbph { layers: 3 })?;
    let base = experiment(&reloaded, MethodId::None, FeatureKind::Raw)?;
    let summary: String = report_summary_json(&ours)
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"duration_ms\""))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((ours.rate, base.rate, format!("{}\n{summary}", report_csv(&ours))))
}

fn c7_synthetic(first: &mut Option<String>) -> Check {
    timed(Duration::from_secs(120), || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (ours, base, report) = synthetic_run(dir.path())?;
        *first = Some(report);
        ensure(ours >= base, || format!("fdfi+msulbph:3 {ours:.4} < none+raw {base:.4}"))?;
        ensure(ours >= 0.90, || format!("fdfi+msulbph:3 rate {ours:.4} < 0.90"))?;
        Ok(format!("fdfi+msulbph:3 {ours:.4} vs none+raw {base:.4}"))
    })
}

fn c8_yale() -> Outcome {
    let ds = if let Ok(m) = std::env::var("LUMENORM_YALEB_MANIFEST") {
        load_manifest(&m)
    } else if let Ok(d) = std::env::var("LUMENORM_YALEB_DIR") {
        yale_dataset(&d).map(|s| s.dataset)
    } else {
        return Outcome::Skip(
            "set LUMENORM_YALEB_MANIFEST or LUMENORM_YALEB_DIR to run".into(),
        );
    };
    let ds = match ds {
        Ok(ds) => ds.with_size(100, 100),
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let grid = FeatureKind::Lbph { gx: 8, gy: 8 };
    let run = || -> Result<(f64, f64), String> {
        Ok((
            experiment(&ds, MethodId::Fdfi, grid)?.rate,
            experiment(&ds, MethodId::Tt, grid)?.rate,
        ))
    };
    match run() {
        Ok((ours, tt)) if ours > tt => Outcome::Pass(format!("fdfi {ours:.4} > tt {tt:.4}")),
        Ok((ours, tt)) => Outcome::Fail(format!("fdfi {ours:.4} <= tt {tt:.4}")),
        Err(e) => Outcome::Fail(e),
    }
}

fn c9_budget() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = texture(&mut rng, 100, 20.0, 230.0);
    let cfg = PipelineConfig::default();
    fdfi_ltein(&img, &cfg).map_err(|e| e.to_string())?;
    let mut times: Vec<Duration> = (0..7)
        .map(|_| {
            let t = Instant::now();
            let out = fdfi_ltein(&img, &cfg);
            let el = t.elapsed();
            std::hint::black_box(out).map(|_| el).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    times.sort();
    let median = times[times.len() / 2];
    ensure(median <= Duration::from_millis(50), || format!("median {median:?} > 50ms"))?;
    Ok(format!("median {median:.2?} over 7 runs"))
}

fn c10_determinism(first: Option<String>) -> Check {
    let first = first.ok_or("criterion 7 produced no report")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, _, second) = synthetic_run(dir.path())?;
    ensure(first == second, || "reports differ between runs".into())?;
    Ok(format!("{} report bytes identical", first.len()))
}

fn main() -> ExitCode {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build_global()
        .expect("global pool");

    let mut synthetic_report = None;
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, check: Check| {
        let outcome = match check {
            Ok(d) => Outcome::Pass(d),
            Err(d) => Outcome::Fail(d),
        };
        results.push((name, outcome));
    };
    record("1 filter algebra", c1_filter_algebra());
    record("2 fusion identities", c2_fusion());
    record("3 contrast equalization", c3_lce());
    record("4 block and code census", c4_census());
    record("5 metric axioms", c5_metric());
    record("6 gain robustness", c6_gain());
    record("7 synthetic end-to-end", c7_synthetic(&mut synthetic_report));
    record("9 single-image budget", c9_budget());
    record("10 determinism", c10_determinism(synthetic_report));
    results.insert(7, ("8 Yale B ordering", c8_yale()));

    let mut failed = 0;
    for (name, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
