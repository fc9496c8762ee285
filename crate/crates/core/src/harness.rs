//! Datasets, synthetic relighting, experiment execution and reports.
//!
//! A manifest is a CSV file with header `path,subject,role[,subset]`, where
//! `role` is `gallery` or `probe` and `subset` (optional) is 1..=5. Relative
//! paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::Serialize;

use crate::classifier::{nn_classify, GalleryEntry};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureVector};
use crate::image::{load_image, resize_bilinear, save_image, to_u8, ImageFormat, IntensityImage};
use crate::pipeline::{normalize, MethodId, PipelineConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Light-source direction parsed from an Extended Yale B file name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct YaleName {
    pub subject: u32,
    pub azimuth: i32,
    pub elevation: i32,
}

/// Parses `yaleB<NN>_P00A<+-AAA>E<+-EE>` followed by any extension.
pub fn parse_yale_filename(name: &str) -> Result<YaleName> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^yaleB(\d{2,})_P00A([+-]\d{3})E([+-]\d{2})(\..*)?$").expect("valid regex")
    });
    let base = Path::new(name)
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or(name);
    let caps = re
        .captures(base)
        .ok_or_else(|| Error::YaleName(name.to_string()))?;
    let num = |i: usize| caps[i].parse::<i32>().map_err(|_| Error::YaleName(name.to_string()));
    Ok(YaleName {
        subject: num(1)? as u32,
        azimuth: num(2)?,
        elevation: num(3)?,
    })
}

/// Illumination subset (1..=5) from the angle between the light source and
/// the optical axis, `acos(cos(az) cos(el))`.
///
/// Bounds: `< 12`, `<= 25`, `<= 50`, `<= 77`, otherwise 5.
pub fn subset_of(azimuth: f64, elevation: f64) -> u8 {
    let theta = (azimuth.to_radians().cos() * elevation.to_radians().cos())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees();
    // Integer-degree inputs on a boundary must not fall off it through
    // trigonometric rounding.
    let theta = (theta * 1e6).round() / 1e6;
    if theta < 12.0 {
        1
    } else if theta <= 25.0 {
        2
    } else if theta <= 50.0 {
        3
    } else if theta <= 77.0 {
        4
    } else {
        5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gallery,
    Probe,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::Gallery => "gallery",
            Role::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    /// Path as written in the manifest; used verbatim in reports.
    pub name: String,
    /// Resolved path used for reading.
    pub path: PathBuf,
    pub label: String,
    pub role: Role,
    pub subset: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
    /// Every image is resized to this size before normalization.
    pub width: usize,
    pub height: usize,
}

pub const DEFAULT_SIZE: usize = 100;

impl Dataset {
    pub fn gallery(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(|e| e.role == Role::Gallery)
    }

    pub fn probes(&self) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(|e| e.role == Role::Probe)
    }

    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: u64, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["path", "subject", "role"] && cols != ["path", "subject", "role", "subset"] {
        return Err(err(
            1,
            format!("header must be path,subject,role[,subset], got {}", cols.join(",")),
        ));
    }
    let has_subset = cols.len() == 4;

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let name = record[0].to_string();
        let label = record[1].to_string();
        if name.is_empty() {
            return Err(err(line, "empty path".into()));
        }
        if label.is_empty() {
            return Err(err(line, "empty subject label".into()));
        }
        let role = match &record[2] {
            "gallery" => Role::Gallery,
            "probe" => Role::Probe,
            other => {
                return Err(err(
                    line,
                    format!("unknown role `{other}` (expected gallery or probe)"),
                ))
            }
        };
        let subset = if has_subset && !record[3].is_empty() {
            match record[3].parse::<u8>() {
                Ok(s @ 1..=5) => Some(s),
                _ => return Err(err(line, format!("subset must be 1..=5, got `{}`", &record[3]))),
            }
        } else {
            None
        };
        let resolved = Path::new(&name);
        let resolved = if resolved.is_absolute() {
            resolved.to_path_buf()
        } else {
            base.join(resolved)
        };
        entries.push(DatasetEntry {
            name,
            path: resolved,
            label,
            role,
            subset,
        });
    }
    Ok(Dataset {
        entries,
        width: DEFAULT_SIZE,
        height: DEFAULT_SIZE,
    })
}

/// Writes a manifest. The subset column is emitted when any entry has one.
pub fn write_manifest(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let with_subset = dataset.entries.iter().any(|e| e.subset.is_some());
    let mut out = String::from(if with_subset {
        "path,subject,role,subset\n"
    } else {
        "path,subject,role\n"
    });
    for e in &dataset.entries {
        out.push_str(&format!("{},{},{}", e.name, e.label, e.role.as_str()));
        if with_subset {
            out.push(',');
            if let Some(s) = e.subset {
                out.push_str(&s.to_string());
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Outcome of scanning an Extended Yale B directory.
#[derive(Debug, Clone)]
pub struct YaleScan {
    pub dataset: Dataset,
    /// File names that did not follow the naming convention.
    pub skipped: Vec<String>,
}

/// Builds a dataset from a directory tree of Yale B images: the frontal
/// `A+000E+00` shot of each subject is the gallery, every other image a
/// probe tagged with its illumination subset. Ambient shots and files with
/// other names are skipped.
pub fn yale_dataset(dir: impl AsRef<Path>) -> Result<YaleScan> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for file in files {
        let fname = file.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let is_image = matches!(
            ImageFormat::from_path(&file),
            Some(ImageFormat::Pgm | ImageFormat::Png)
        );
        if !is_image {
            continue;
        }
        match parse_yale_filename(&fname) {
            Ok(y) => {
                let frontal = y.azimuth == 0 && y.elevation == 0;
                let name = file
                    .strip_prefix(dir)
                    .unwrap_or(&file)
                    .to_string_lossy()
                    .into_owned();
                entries.push(DatasetEntry {
                    name,
                    path: file.clone(),
                    label: format!("yaleB{:02}", y.subject),
                    role: if frontal { Role::Gallery } else { Role::Probe },
                    subset: Some(subset_of(f64::from(y.azimuth), f64::from(y.elevation))),
                });
            }
            Err(_) => skipped.push(fname),
        }
    }
    Ok(YaleScan {
        dataset: Dataset {
            entries,
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
        },
        skipped,
    })
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in rd {
        let entry = entry.map_err(|source| Error::Read {
            path: dir.to_path_buf(),
            source,
        })?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Multiplicative illumination field applied to a base texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lighting {
    /// Constant gain.
    Uniform(f64),
    /// Gain varying linearly from `from` (left column) to `to` (right column).
    Ramp { from: f64, to: f64 },
    /// Left half multiplied by the factor, right half untouched.
    HalfShadow(f64),
}

impl Lighting {
    pub fn gain_at(&self, x: usize, width: usize) -> f64 {
        match *self {
            Lighting::Uniform(g) => g,
            Lighting::Ramp { from, to } => {
                let t = x as f64 / (width - 1) as f64;
                from + (to - from) * t
            }
            Lighting::HalfShadow(f) => {
                if x < width / 2 {
                    f
                } else {
                    1.0
                }
            }
        }
    }

    fn max_gain(&self) -> f64 {
        match *self {
            Lighting::Uniform(g) => g,
            Lighting::Ramp { from, to } => from.max(to),
            Lighting::HalfShadow(f) => f.max(1.0),
        }
    }

    fn min_gain(&self) -> f64 {
        match *self {
            Lighting::Uniform(g) => g,
            Lighting::Ramp { from, to } => from.min(to),
            Lighting::HalfShadow(f) => f.min(1.0),
        }
    }
}

/// Range of the synthetic base textures.
pub const TEXTURE_MIN: f64 = 40.0;
pub const TEXTURE_MAX: f64 = 160.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub subjects: usize,
    pub size: usize,
    pub lighting: Vec<Lighting>,
}

impl SynthSpec {
    /// Probe set: gain 0.5, gain 1.5, left-right ramp 0.3 to 1.0 and a
    /// half-plane shadow at 0.35.
    pub fn standard(subjects: usize, size: usize) -> Self {
        Self {
            subjects,
            size,
            lighting: vec![
                Lighting::Uniform(0.5),
                Lighting::Uniform(1.5),
                Lighting::Ramp { from: 0.3, to: 1.0 },
                Lighting::HalfShadow(0.35),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::InvalidParameter(format!(
                "synthetic datasets need at least 2 subjects, got {}",
                self.subjects
            )));
        }
        if self.size < 32 {
            return Err(Error::InvalidParameter(format!(
                "synthetic image size must be at least 32, got {}",
                self.size
            )));
        }
        for l in &self.lighting {
            if !(l.min_gain() > 0.0) || l.max_gain() * TEXTURE_MAX > 255.0 {
                return Err(Error::InvalidParameter(format!(
                    "lighting {l:?} must keep gains in (0, {:.4}]",
                    255.0 / TEXTURE_MAX
                )));
            }
        }
        Ok(())
    }
}

/// Seeded sum of cosine gratings, linearly fitted to
/// `[TEXTURE_MIN, TEXTURE_MAX]`.
pub fn synth_texture(size: usize, rng: &mut ChaCha8Rng) -> IntensityImage {
    const GRATINGS: usize = 10;
    let waves: Vec<(f64, f64, f64, f64)> = (0..GRATINGS)
        .map(|_| {
            let period = rng.gen_range(4.0..24.0);
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / period;
            (k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.3..1.0))
        })
        .collect();
    let mut field = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            field.push(
                waves
                    .iter()
                    .map(|&(kx, ky, phase, amp)| amp * (kx * xf + ky * yf + phase).cos())
                    .sum::<f64>(),
            );
        }
    }
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = (TEXTURE_MAX - TEXTURE_MIN) / (hi - lo).max(f64::MIN_POSITIVE);
    IntensityImage::new(
        size,
        size,
        field.iter().map(|&v| to_u8(TEXTURE_MIN + (v - lo) * scale)).collect(),
    )
    .expect("size validated")
}

/// `clip(round(base * gain))` per pixel.
pub fn relight(base: &IntensityImage, lighting: &Lighting) -> IntensityImage {
    IntensityImage::from_fn(base.width(), base.height(), |x, y| {
        to_u8(f64::from(base.get(x, y)) * lighting.gain_at(x, base.width()))
    })
    .expect("same size as base")
}

/// Writes `s<NN>/gallery.pgm` and `s<NN>/probe_<k>.pgm` (k from 1) for each
/// subject plus `manifest.csv`, and returns the dataset.
pub fn synth_dataset(spec: &SynthSpec, seed: u64, out_dir: impl AsRef<Path>) -> Result<Dataset> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| Error::Write {
            path: p.to_path_buf(),
            source,
        })
    };
    mkdir(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for s in 1..=spec.subjects {
        let label = format!("s{s:02}");
        mkdir(&out_dir.join(&label))?;
        let base = synth_texture(spec.size, &mut rng);
        let mut push = |file: String, img: &IntensityImage, role| -> Result<()> {
            let name = format!("{label}/{file}");
            let path = out_dir.join(&name);
            save_image(img, &path, ImageFormat::Pgm)?;
            entries.push(DatasetEntry {
                name,
                path,
                label: label.clone(),
                role,
                subset: None,
            });
            Ok(())
        };
        push("gallery.pgm".into(), &base, Role::Gallery)?;
        for (k, light) in spec.lighting.iter().enumerate() {
            push(format!("probe_{}.pgm", k + 1), &relight(&base, light), Role::Probe)?;
        }
    }
    let dataset = Dataset {
        entries,
        width: spec.size,
        height: spec.size,
    };
    write_manifest(&dataset, out_dir.join("manifest.csv"))?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: Dataset,
    pub method: MethodId,
    pub feature: FeatureKind,
    pub config: PipelineConfig,
    /// Only consumed by synthetic generation; recorded for provenance.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub path: String,
    pub true_label: String,
    pub predicted: String,
    pub distance: f64,
    pub subset: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRate {
    pub correct: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub records: Vec<ProbeRecord>,
    pub correct: usize,
    pub total: usize,
    pub rate: f64,
    pub per_subset: BTreeMap<u8, SubsetRate>,
    pub method: MethodId,
    pub feature: FeatureKind,
    pub config: PipelineConfig,
    pub duration_ms: u128,
    /// Probe images that could not be processed, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Loads, resizes, normalizes and featurizes one image.
pub fn prepare_image(
    path: &Path,
    width: usize,
    height: usize,
    method: MethodId,
    feature: &FeatureKind,
    config: &PipelineConfig,
) -> Result<FeatureVector> {
    let img = load_image(path)?;
    let img = resize_bilinear(&img, width, height)?;
    let img = normalize(method, &img, config)?;
    feature.extract(&img)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<EvaluationReport> {
    let start = Instant::now();
    let ds = &spec.dataset;
    if ds.gallery().next().is_none() {
        return Err(Error::Experiment("dataset has no gallery entries".into()));
    }
    if ds.probes().next().is_none() {
        return Err(Error::Experiment("dataset has no probe entries".into()));
    }
    spec.config.validate()?;
    spec.feature.validate_for(ds.width, ds.height)?;

    let featurize = |entries: Vec<&DatasetEntry>| -> Vec<Result<FeatureVector>> {
        entries
            .par_iter()
            .map(|e| {
                prepare_image(&e.path, ds.width, ds.height, spec.method, &spec.feature, &spec.config)
            })
            .collect()
    };

    let gallery_entries: Vec<&DatasetEntry> = ds.gallery().collect();
    let gallery_vecs = featurize(gallery_entries.clone());
    let mut gallery = Vec::with_capacity(gallery_entries.len());
    let mut gallery_failures = Vec::new();
    for (e, v) in gallery_entries.iter().zip(gallery_vecs) {
        match v {
            Ok(vector) => gallery.push(GalleryEntry {
                label: e.label.clone(),
                vector,
                source: e.path.clone(),
            }),
            Err(err) => gallery_failures.push(format!("{}: {err}", e.name)),
        }
    }
    if !gallery_failures.is_empty() {
        return Err(Error::Experiment(format!(
            "gallery images failed: {}",
            gallery_failures.join("; ")
        )));
    }

    let probe_entries: Vec<&DatasetEntry> = ds.probes().collect();
    let probe_vecs = featurize(probe_entries.clone());
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (e, v) in probe_entries.iter().zip(probe_vecs) {
        match v.and_then(|v| nn_classify(&v, &gallery)) {
            Ok(m) => records.push(ProbeRecord {
                path: e.name.clone(),
                true_label: e.label.clone(),
                predicted: m.label,
                distance: m.distance,
                subset: e.subset,
            }),
            Err(err) => failures.push((e.name.clone(), err.to_string())),
        }
    }
    if records.is_empty() {
        return Err(Error::Experiment("no probe image could be processed".into()));
    }

    let correct = records.iter().filter(|r| r.true_label == r.predicted).count();
    let total = records.len();
    let mut per_subset: BTreeMap<u8, SubsetRate> = BTreeMap::new();
    for r in &records {
        if let Some(s) = r.subset {
            let entry = per_subset.entry(s).or_insert(SubsetRate {
                correct: 0,
                total: 0,
                rate: 0.0,
            });
            entry.total += 1;
            entry.correct += usize::from(r.true_label == r.predicted);
        }
    }
    for s in per_subset.values_mut() {
        s.rate = s.correct as f64 / s.total as f64;
    }

    Ok(EvaluationReport {
        records,
        correct,
        total,
        rate: correct as f64 / total as f64,
        per_subset,
        method: spec.method,
        feature: spec.feature,
        config: spec.config.clone(),
        duration_ms: start.elapsed().as_millis(),
        failures,
    })
}

/// Rate printed with four decimals.
pub fn format_rate(rate: f64) -> String {
    format!("{rate:.4}")
}

fn fixed4(rate: f64) -> serde_json::Number {
    format_rate(rate).parse().expect("formatted float is a JSON number")
}

#[derive(Serialize)]
struct Summary<'a> {
    rate: serde_json::Number,
    correct: usize,
    total: usize,
    per_subset: BTreeMap<String, serde_json::Number>,
    method: &'a str,
    feature: String,
    config: &'a PipelineConfig,
    duration_ms: u128,
    version: &'static str,
    failures: Vec<FailureRecord<'a>>,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    path: &'a str,
    error: &'a str,
}

/// Location of the JSON sidecar for a report CSV path.
pub fn summary_path(report: &Path) -> PathBuf {
    if report.extension().is_some_and(|e| e == "json") {
        let mut s = report.as_os_str().to_owned();
        s.push(".summary.json");
        PathBuf::from(s)
    } else {
        report.with_extension("json")
    }
}

pub fn report_csv(report: &EvaluationReport) -> String {
    let mut out = String::from("path,true,predicted,distance\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&r.path),
            csv_field(&r.true_label),
            csv_field(&r.predicted),
            r.distance
        ));
    }
    out
}

pub fn report_summary_json(report: &EvaluationReport) -> String {
    let summary = Summary {
        rate: fixed4(report.rate),
        correct: report.correct,
        total: report.total,
        per_subset: report
            .per_subset
            .iter()
            .map(|(k, v)| (k.to_string(), fixed4(v.rate)))
            .collect(),
        method: report.method.as_str(),
        feature: report.feature.to_string(),
        config: &report.config,
        duration_ms: report.duration_ms,
        version: VERSION,
        failures: report
            .failures
            .iter()
            .map(|(p, e)| FailureRecord { path: p, error: e })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Writes the per-probe CSV at `path` and the JSON summary next to it
/// (see [`summary_path`]).
pub fn write_report(report: &EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let write = |p: &Path, body: String| {
        fs::File::create(p)
            .and_then(|mut f| f.write_all(body.as_bytes()))
            .map_err(|source| Error::Write {
                path: p.to_path_buf(),
                source,
            })
    };
    write(path, report_csv(report))?;
    write(&summary_path(path), report_summary_json(report))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV rows `path,label,v1,...,vn` with values at 9 significant digits.
pub fn feature_csv_row(path: &str, label: &str, v: &FeatureVector) -> String {
    let mut row = format!("{},{}", csv_field(path), csv_field(label));
    for x in &v.values {
        row.push_str(&format!(",{x:.8e}"));
    }
    row.push('\n');
    row
}
