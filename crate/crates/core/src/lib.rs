//! Illumination normalization for face recognition.
//!
//! The central normalizer ([`pipeline::fdfi_ltein`]) lifts an 8-bit face
//! image into the log domain, extracts texture with both a difference of
//! Gaussians and a difference of bilateral filters, blends the two
//! responses with weights proportional to their standard deviations, then
//! equalizes contrast block by block and compresses outliers with `tanh`.
//!
//! Around it sit the pieces needed to measure it: baseline normalizers,
//! uniform LBP histogram features (flat grids and a spatial pyramid), a
//! chi-square nearest-neighbor recognizer and an evaluation harness that
//! runs gallery/probe experiments from CSV manifests or synthetic data.
//!
//! ```no_run
//! use lumenorm::{image, pipeline};
//!
//! let face = image::load_image("face.pgm")?;
//! let out = pipeline::fdfi_ltein(&face, &pipeline::PipelineConfig::default())?;
//! image::save_image(&out, "face_norm.pgm", image::ImageFormat::Pgm)?;
//! # Ok::<(), lumenorm::Error>(())
//! ```

pub mod classifier;
mod error;
pub mod features;
pub mod filters;
pub mod harness;
pub mod image;
pub mod pipeline;
pub mod stages;

pub use error::{Error, Result};
