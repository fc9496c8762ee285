//! SD-weighted fusion of the two band-pass images, block-wise local contrast
//! equalization and the final tanh compression.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{image_sd, RealImage};

/// Blend weights for the DoG and DoB images. Always sums to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub w_dog: f64,
    pub w_dob: f64,
}

impl FusionWeights {
    /// Weights `(w_dog, 1 - w_dog)`.
    pub fn new(w_dog: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w_dog) {
            return Err(Error::InvalidParameter(format!(
                "fusion weight must lie in [0, 1], got {w_dog}"
            )));
        }
        Ok(Self {
            w_dog,
            w_dob: 1.0 - w_dog,
        })
    }
}

/// Parameters of local contrast equalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LceParams {
    /// Blocks per side are `2^n`.
    pub n: u32,
    pub alpha: f64,
    pub tau: f64,
    pub guard_eps: f64,
}

impl Default for LceParams {
    fn default() -> Self {
        Self {
            n: 2,
            alpha: 0.1,
            tau: 10.0,
            guard_eps: 1e-9,
        }
    }
}

impl LceParams {
    pub fn validate(&self) -> Result<()> {
        if self.n > 16 {
            return Err(Error::InvalidParameter(format!(
                "lce.n = {} is absurdly large",
                self.n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lce.alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lce.tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.guard_eps > 0.0 && self.guard_eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lce.guard_eps must be positive, got {}",
                self.guard_eps
            )));
        }
        Ok(())
    }
}

/// `w_dog = sd_dog / (sd_dog + sd_dob)`, and symmetrically for `w_dob`.
/// Two constant inputs get equal weights.
pub fn fusion_weights(i_dog: &RealImage, i_dob: &RealImage) -> Result<FusionWeights> {
    i_dog.same_dims(i_dob)?;
    let sd_dog = image_sd(i_dog);
    let sd_dob = image_sd(i_dob);
    let total = sd_dog + sd_dob;
    if total == 0.0 {
        return Ok(FusionWeights {
            w_dog: 0.5,
            w_dob: 0.5,
        });
    }
    let w_dog = sd_dog / total;
    Ok(FusionWeights {
        w_dog,
        w_dob: 1.0 - w_dog,
    })
}

/// Pixelwise `w_dog * i_dog + w_dob * i_dob` for explicit weights.
pub fn blend(i_dog: &RealImage, i_dob: &RealImage, w: FusionWeights) -> Result<RealImage> {
    i_dog.zip_map(i_dob, |a, b| {
        // Equal inputs come back bit-exact regardless of rounding in the weights.
        if a == b {
            a
        } else {
            w.w_dog * a + w.w_dob * b
        }
    })
}

/// SD-weighted fusion of the DoG and DoB images.
pub fn fuse_sd(i_dog: &RealImage, i_dob: &RealImage) -> Result<RealImage> {
    blend(i_dog, i_dob, fusion_weights(i_dog, i_dob)?)
}

/// Axis-aligned tile of a block partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Splits `len` into `parts` runs whose lengths differ by at most one, the
/// longer runs first. Returns `(offset, length)` pairs.
pub fn split_even(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    let extra = len % parts;
    let mut offset = 0;
    (0..parts)
        .map(|i| {
            let l = base + usize::from(i < extra);
            let run = (offset, l);
            offset += l;
            run
        })
        .collect()
}

/// `2^n x 2^n` tiling, row-major. Leftover rows/columns go one each to the
/// leading tiles.
pub fn partition_blocks(width: usize, height: usize, n: u32) -> Result<Vec<Block>> {
    let per_side = 1usize
        .checked_shl(n)
        .filter(|&k| k <= width.min(height))
        .ok_or(Error::InvalidDimensions {
            width,
            height,
            reason: "image too small for the requested block count",
        })?;
    let cols = split_even(width, per_side);
    let rows = split_even(height, per_side);
    Ok(rows
        .iter()
        .flat_map(|&(y, h)| {
            cols.iter().map(move |&(x, w)| Block {
                x,
                y,
                width: w,
                height: h,
            })
        })
        .collect())
}

/// `(mean(v^alpha))^(1/alpha)` over nonnegative magnitudes, floored at `guard`.
fn power_mean(mags: impl Iterator<Item = f64>, count: usize, alpha: f64, guard: f64) -> f64 {
    let m = mags.map(|v| v.powf(alpha)).sum::<f64>() / count as f64;
    m.powf(1.0 / alpha).max(guard)
}

/// First normalization phase: divide by the alpha-power mean of `|v|`.
pub fn lce_stage1(block: &RealImage, alpha: f64, guard_eps: f64) -> RealImage {
    let n = block.data().len();
    let d = power_mean(block.data().iter().map(|v| v.abs()), n, alpha, guard_eps);
    block.map(|v| v / d)
}

/// Second phase: divide by the alpha-power mean of `min(tau, |v|)`.
pub fn lce_stage2(block: &RealImage, alpha: f64, tau: f64, guard_eps: f64) -> RealImage {
    let n = block.data().len();
    let d = power_mean(
        block.data().iter().map(|v| v.abs().min(tau)),
        n,
        alpha,
        guard_eps,
    );
    block.map(|v| v / d)
}

/// Two-phase contrast equalization of a single block.
pub fn lce_block(block: &RealImage, alpha: f64, tau: f64, guard_eps: f64) -> RealImage {
    lce_stage2(&lce_stage1(block, alpha, guard_eps), alpha, tau, guard_eps)
}

/// Applies [`lce_block`] to every tile of the `2^n x 2^n` partition and
/// reassembles the tiles in place.
pub fn lce(img: &RealImage, p: &LceParams) -> Result<RealImage> {
    p.validate()?;
    let blocks = partition_blocks(img.width(), img.height(), p.n)?;
    let tiles: Vec<RealImage> = blocks
        .par_iter()
        .map(|b| {
            let tile = img.crop(b.x, b.y, b.width, b.height);
            lce_block(&tile, p.alpha, p.tau, p.guard_eps)
        })
        .collect();
    let mut out = img.clone();
    for (b, t) in blocks.iter().zip(&tiles) {
        out.paste(t, b.x, b.y);
    }
    Ok(out)
}

/// `tau * tanh(v / tau)`. Saturated values are pulled to the largest float
/// strictly below `tau` so the output stays inside the open interval.
pub fn tanh_compress(img: &RealImage, tau: f64) -> Result<RealImage> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let inner = tau.next_down();
    Ok(img.map(|v| (tau * (v / tau).tanh()).clamp(-inner, inner)))
}
