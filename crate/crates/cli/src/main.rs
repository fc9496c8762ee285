//! `lumenorm` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error.
//! `LUMENORM_THREADS` caps the worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lumenorm::features::FeatureKind;
use lumenorm::harness::{
    feature_csv_row, format_rate, load_manifest, prepare_image, run_experiment, summary_path,
    synth_dataset, write_report, ExperimentSpec, SynthSpec, DEFAULT_SIZE,
};
use lumenorm::image::{load_image, save_image, ImageFormat, IntensityImage};
use lumenorm::pipeline::{normalize, MethodId, PipelineConfig};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "lumenorm", version, about = "Illumination normalization for face images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize one image or every PGM/PNG in a directory.
    Normalize(NormalizeArgs),
    /// Write feature vectors as CSV.
    Features(FeaturesArgs),
    /// Run a gallery/probe recognition experiment from a manifest.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic relighting dataset with a manifest.
    Synth(SynthArgs),
    /// Print the default pipeline configuration as JSON.
    PrintConfig,
}

#[derive(Args)]
struct NormalizeArgs {
    /// Input image file or directory.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; files keep their basenames.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "fdfi")]
    method: MethodId,
    /// JSON file overriding default parameters key by key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write `grid.png` with original and normalized images side by side.
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Input image file or directory.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    input: Option<PathBuf>,
    /// Manifest CSV; every entry is featurized.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "fdfi")]
    method: MethodId,
    /// `raw`, `lbph:<gx>x<gy>` or `msulbph:<layers>`.
    #[arg(long, default_value = "msulbph:3")]
    feature: FeatureKind,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resize to SIZE x SIZE first (default: keep size for --input, 100 for --manifest).
    #[arg(long)]
    size: Option<usize>,
    /// Output CSV file.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "fdfi")]
    method: MethodId,
    #[arg(long, default_value = "msulbph:3")]
    feature: FeatureKind,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-probe CSV; the JSON summary goes next to it.
    #[arg(long)]
    report: PathBuf,
    /// Images are resized to SIZE x SIZE.
    #[arg(long, default_value_t = DEFAULT_SIZE)]
    size: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 100)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<lumenorm::Error> for Failure {
    fn from(e: lumenorm::Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(&format!(": {s}"));
            src = s.source();
        }
        Failure::Data(msg)
    }
}

type CliResult = Result<(), Failure>;

fn usage(e: lumenorm::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(f) = configure_threads() {
        return report_failure(f);
    }
    let result = match cli.command {
        Command::Normalize(a) => cmd_normalize(a),
        Command::Features(a) => cmd_features(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::PrintConfig => {
            print!("{}", PipelineConfig::default().to_json_pretty());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    match f {
        Failure::Usage(m) => {
            eprintln!("error: {m}");
            eprintln!("run `lumenorm --help` for usage");
            ExitCode::from(1)
        }
        Failure::Data(m) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> CliResult {
    let Ok(v) = std::env::var("LUMENORM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("LUMENORM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Data(e.to_string()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    Ok(match path {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    })
}

/// Image files directly inside `input` (sorted), or `input` itself.
fn input_images(input: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !input.is_dir() {
        if !input.exists() {
            return Err(Failure::Data(format!("{}: no such file or directory", input.display())));
        }
        return Ok(vec![input.to_path_buf()]);
    }
    let rd = fs::read_dir(input).map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_some())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!("{}: no PGM or PNG images", input.display())));
    }
    Ok(files)
}

fn mkdir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn cmd_normalize(a: NormalizeArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let files = input_images(&a.input)?;
    mkdir(&a.output)?;
    let results: Vec<lumenorm::Result<(IntensityImage, IntensityImage)>> = files
        .par_iter()
        .map(|f| {
            let img = load_image(f)?;
            let out = normalize(a.method, &img, &cfg)?;
            let name = f.file_name().expect("listed files have names");
            let fmt = ImageFormat::from_path(f).unwrap_or(ImageFormat::Pgm);
            save_image(&out, a.output.join(name), fmt)?;
            Ok((img, out))
        })
        .collect();
    let mut pairs = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(p) => pairs.push(p),
            Err(e) => errors.push(format!("{}: {}", f.display(), Failure::from(e).message())),
        }
    }
    if a.grid && !pairs.is_empty() {
        save_image(&comparison_grid(&pairs), a.output.join("grid.png"), ImageFormat::Png)?;
    }
    eprintln!("normalized {} of {} images with {}", pairs.len(), files.len(), a.method);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(errors.join("\n")))
    }
}

impl Failure {
    fn message(self) -> String {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

/// One row per image: original on the left, normalized on the right, on a
/// white background with 4-pixel gutters.
fn comparison_grid(pairs: &[(IntensityImage, IntensityImage)]) -> IntensityImage {
    const GAP: usize = 4;
    let width = pairs.iter().map(|(a, b)| a.width() + b.width()).max().unwrap_or(0) + 3 * GAP;
    let height = pairs.iter().map(|(a, _)| a.height()).sum::<usize>() + GAP * (pairs.len() + 1);
    let mut canvas = vec![255u8; width * height];
    let mut y0 = GAP;
    for (orig, norm) in pairs {
        for (img, x0) in [(orig, GAP), (norm, 2 * GAP + orig.width())] {
            for y in 0..img.height() {
                let row = &img.data()[y * img.width()..(y + 1) * img.width()];
                let start = (y0 + y) * width + x0;
                canvas[start..start + img.width()].copy_from_slice(row);
            }
        }
        y0 += orig.height() + GAP;
    }
    IntensityImage::new(width, height, canvas).expect("grid has positive size")
}

fn cmd_features(a: FeaturesArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    // (name, label, path)
    let (items, size): (Vec<(String, String, PathBuf)>, Option<usize>) = match (&a.input, &a.manifest) {
        (Some(input), _) => (
            input_images(input)?
                .into_iter()
                .map(|p| {
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    (p.display().to_string(), stem, p)
                })
                .collect(),
            a.size,
        ),
        (None, Some(m)) => (
            load_manifest(m)?
                .entries
                .into_iter()
                .map(|e| (e.name, e.label, e.path))
                .collect(),
            Some(a.size.unwrap_or(DEFAULT_SIZE)),
        ),
        (None, None) => unreachable!("clap requires one of --input/--manifest"),
    };
    if let Some(s) = size {
        a.feature.validate_for(s, s).map_err(usage)?;
    }
    let rows: Vec<lumenorm::Result<String>> = items
        .par_iter()
        .map(|(name, label, path)| {
            let v = match size {
                Some(s) => prepare_image(path, s, s, a.method, &a.feature, &cfg)?,
                None => {
                    let img = load_image(path)?;
                    a.feature.extract(&normalize(a.method, &img, &cfg)?)?
                }
            };
            Ok(feature_csv_row(name, label, &v))
        })
        .collect();
    let mut out = String::new();
    let mut width = None;
    for ((name, _, _), r) in items.iter().zip(rows) {
        let row = r.map_err(|e| Failure::Data(format!("{name}: {}", Failure::from(e).message())))?;
        let n = row.matches(',').count() - 1;
        if width.is_some_and(|w| w != n) {
            return Err(Failure::Data(format!(
                "{name}: feature length {n} differs from earlier images; use --size"
            )));
        }
        if width.is_none() {
            out.push_str("path,label");
            for i in 0..n {
                out.push_str(&format!(",f{i}"));
            }
            out.push('\n');
            width = Some(n);
        }
        out.push_str(&row);
    }
    fs::write(&a.output, out).map_err(|e| Failure::Data(format!("{}: {e}", a.output.display())))?;
    eprintln!("wrote {} feature rows to {}", items.len(), a.output.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    a.feature.validate_for(a.size, a.size).map_err(usage)?;
    let cfg = load_config(a.config.as_deref())?;
    let dataset = load_manifest(&a.manifest)?.with_size(a.size, a.size);
    let report = run_experiment(&ExperimentSpec {
        dataset,
        method: a.method,
        feature: a.feature,
        config: cfg,
        seed: 0,
    })?;
    for (path, err) in &report.failures {
        eprintln!("warning: skipped probe {path}: {err}");
    }
    write_report(&report, &a.report)?;
    for (subset, r) in &report.per_subset {
        eprintln!("subset {subset}: {}/{} = {}", r.correct, r.total, format_rate(r.rate));
    }
    eprintln!(
        "report: {} and {}",
        a.report.display(),
        summary_path(&a.report).display()
    );
    println!("rate={}", format_rate(report.rate));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let spec = SynthSpec::standard(a.subjects, a.size);
    spec.validate().map_err(usage)?;
    let ds = synth_dataset(&spec, a.seed, &a.out)?;
    println!(
        "subjects={} size={} seed={} images={} manifest={}",
        a.subjects,
        a.size,
        a.seed,
        ds.entries.len(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}
