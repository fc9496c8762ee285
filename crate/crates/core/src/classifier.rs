//! Chi-square dissimilarity and nearest-neighbor identification.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// An enrolled, featurized gallery image.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub label: String,
    pub vector: FeatureVector,
    pub source: PathBuf,
}

/// `sum (a - b)^2 / (a + b)`; bins where `a + b == 0` contribute nothing.
pub fn chi_square(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let s = x + y;
            if s == 0.0 {
                0.0
            } else {
                (x - y) * (x - y) / s
            }
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub label: String,
    pub distance: f64,
    pub index: usize,
}

/// Nearest gallery entry under [`chi_square`]. Ties go to the lowest index.
pub fn nn_classify(probe: &FeatureVector, gallery: &[GalleryEntry]) -> Result<Match> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let distances: Vec<f64> = gallery
        .par_iter()
        .map(|g| chi_square(&probe.values, &g.vector.values))
        .collect::<Result<_>>()?;
    // Index-ordered scan keeps the reduction deterministic.
    let (index, distance) = distances
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
    Ok(Match {
        label: gallery[index].label.clone(),
        distance,
        index,
    })
}
