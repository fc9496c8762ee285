//! Tone curves (log, gamma, histogram equalization) and spatial filters
//! (Gaussian, DoG, LoG, bilateral, difference of bilaterals).
//!
//! Every spatial filter pads by replicating the border pixel, so no
//! artificial step edge is introduced at the image boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_u8, IntensityImage, RealImage};

/// Square correlation kernel of side `2 * radius + 1`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: usize,
    weights: Vec<f64>,
    /// Nominal weight sum: 1 for Gaussians, 0 for LoG.
    mass: f64,
    /// Normalized 1-D factor `g` with `weights[i][j] = g[i] * g[j]`, when
    /// the kernel is separable.
    separable: Option<Vec<f64>>,
}

impl Kernel {
    /// Builds a general (non-separable) kernel.
    pub fn new(radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if weights.len() != side * side {
            return Err(Error::InvalidParameter(format!(
                "kernel of radius {radius} needs {} weights, got {}",
                side * side,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("non-finite kernel weight".into()));
        }
        let mass = weights.iter().sum();
        Ok(Self {
            radius,
            weights,
            mass,
            separable: None,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dy + r) * (2 * r + 1) + dx + r) as usize]
    }
}

/// Parameters of one bilateral filter: spatial scale, range scale and the
/// half-width of the square neighborhood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilateralParams {
    pub sigma_d: f64,
    pub sigma_r: f64,
    pub radius: usize,
}

impl BilateralParams {
    pub fn new(sigma_d: f64, sigma_r: f64, radius: usize) -> Result<Self> {
        let p = Self {
            sigma_d,
            sigma_r,
            radius,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bilateral sigma_d must be positive, got {}",
                self.sigma_d
            )));
        }
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bilateral sigma_r must be positive, got {}",
                self.sigma_r
            )));
        }
        if self.radius < 1 {
            return Err(Error::InvalidParameter("bilateral radius must be >= 1".into()));
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// `log2(I + epsilon)` per pixel.
pub fn log2_transform(img: &IntensityImage, epsilon: f64) -> Result<RealImage> {
    positive("epsilon", epsilon)?;
    let lut: Vec<f64> = (0..=255).map(|v| (f64::from(v) + epsilon).log2()).collect();
    RealImage::new(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| lut[v as usize]).collect(),
    )
}

/// `255 * (I / 255)^gamma` per pixel.
pub fn gamma_transform(img: &IntensityImage, gamma: f64) -> Result<RealImage> {
    positive("gamma", gamma)?;
    let lut: Vec<f64> = (0..=255)
        .map(|v| 255.0 * (f64::from(v) / 255.0).powf(gamma))
        .collect();
    RealImage::new(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| lut[v as usize]).collect(),
    )
}

/// Global histogram equalization, `cdf_min` variant.
///
/// Maps level `v` to `round(255 * (cdf(v) - cdf_min) / (N - cdf_min))`.
/// A constant image maps to all zeros.
pub fn hist_equalize(img: &IntensityImage) -> IntensityImage {
    let mut hist = [0usize; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    let total = img.data().len();
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let denom = (total - cdf_min) as f64;
    let lut: Vec<u8> = cdf
        .iter()
        .map(|&c| {
            if denom > 0.0 {
                to_u8(255.0 * c.saturating_sub(cdf_min) as f64 / denom)
            } else {
                0
            }
        })
        .collect();
    img.map(|v| lut[v as usize])
}

/// Radius used for Gaussian-derived kernels: `ceil(3 * sigma)`.
pub fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

/// Normalized Gaussian `exp(-(x^2 + y^2) / (2 sigma^2))` with radius
/// `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Kernel> {
    positive("sigma", sigma)?;
    let radius = gaussian_radius(sigma);
    let r = radius as isize;
    let mut g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);

    let side = 2 * radius + 1;
    let mut weights = Vec::with_capacity(side * side);
    for gy in &g {
        for gx in &g {
            weights.push(gy * gx);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    Ok(Kernel {
        radius,
        weights,
        mass: 1.0,
        separable: Some(g),
    })
}

/// Discretized Laplacian of Gaussian, shifted so the weights sum to zero.
pub fn log_kernel(sigma: f64) -> Result<Kernel> {
    positive("sigma", sigma)?;
    let radius = gaussian_radius(sigma);
    let r = radius as isize;
    let s2 = sigma * sigma;
    let mut weights = Vec::with_capacity((2 * radius + 1).pow(2));
    for y in -r..=r {
        for x in -r..=r {
            let d2 = (x * x + y * y) as f64;
            weights.push((d2 - 2.0 * s2) / (s2 * s2) * (-d2 / (2.0 * s2)).exp());
        }
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights.iter_mut().for_each(|w| *w -= mean);
    Ok(Kernel {
        radius,
        weights,
        mass: 0.0,
        separable: None,
    })
}

/// 2-D correlation with replicate padding. Separable kernels take a
/// row-then-column path.
///
/// Sums are accumulated relative to the center pixel,
/// `mass * I(p) + sum k(q) (I(q) - I(p))`, so a constant input is reproduced
/// (or annihilated, for zero-mass kernels) without rounding residue.
pub fn convolve(img: &RealImage, k: &Kernel) -> RealImage {
    match &k.separable {
        Some(g) => convolve_separable(img, g),
        None => convolve_full(img, k),
    }
}

fn convolve_full(img: &RealImage, k: &Kernel) -> RealImage {
    let (w, h) = (img.width(), img.height());
    let r = k.radius as isize;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = img.get_clamped(x, y);
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += k.at(dx, dy) * (img.get_clamped(x + dx, y + dy) - center);
                }
            }
            out.push(k.mass * center + acc);
        }
    }
    RealImage::from_parts(w, h, out)
}

fn convolve_separable(img: &RealImage, g: &[f64]) -> RealImage {
    let (w, h) = (img.width(), img.height());
    let r = (g.len() / 2) as isize;
    let src = img.data();
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h as isize - 1) as usize;

    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..w as isize {
            let center = line[x as usize];
            rows[y * w + x as usize] = center
                + g.iter()
                    .zip(-r..=r)
                    .map(|(wt, d)| wt * (line[clamp_x(x + d)] - center))
                    .sum::<f64>();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            let center = rows[y as usize * w + x];
            out[y as usize * w + x] = center
                + g.iter()
                    .zip(-r..=r)
                    .map(|(wt, d)| wt * (rows[clamp_y(y + d) * w + x] - center))
                    .sum::<f64>();
        }
    }
    RealImage::from_parts(w, h, out)
}

/// Difference of Gaussians `G(sigma1) * I - G(sigma2) * I`, `sigma1 < sigma2`.
pub fn dog_filter(img: &RealImage, sigma1: f64, sigma2: f64) -> Result<RealImage> {
    positive("sigma1", sigma1)?;
    if !(sigma1 < sigma2) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "DoG needs 0 < sigma1 < sigma2, got {sigma1} and {sigma2}"
        )));
    }
    let fine = convolve(img, &gaussian_kernel(sigma1)?);
    let coarse = convolve(img, &gaussian_kernel(sigma2)?);
    fine.zip_map(&coarse, |a, b| a - b)
}

/// Laplacian-of-Gaussian response.
pub fn log_filter(img: &RealImage, sigma: f64) -> Result<RealImage> {
    Ok(convolve(img, &log_kernel(sigma)?))
}

/// Edge-preserving bilateral filter.
///
/// Each output pixel is the normalized sum over its `(2r+1)^2` window of
/// `I(k,l) * d * r`, with spatial weight `d = exp(-|p - q|^2 / 2 sigma_d^2)`
/// and range weight `r = exp(-(I(p) - I(q))^2 / 2 sigma_r^2)`. The center
/// pixel always carries weight 1, so the denominator never vanishes. The
/// weighted sum is taken relative to the center value, which keeps constant
/// regions exact.
pub fn bilateral_filter(img: &RealImage, p: &BilateralParams) -> Result<RealImage> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    let r = p.radius as isize;
    let side = 2 * p.radius + 1;
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .map(|(dx, dy)| (-((dx * dx + dy * dy) as f64) / (2.0 * p.sigma_d * p.sigma_d)).exp())
        .collect();
    let range_coeff = -1.0 / (2.0 * p.sigma_r * p.sigma_r);

    // Pad once so the inner loop is branch-free.
    let pw = w + 2 * p.radius;
    let ph = h + 2 * p.radius;
    let mut padded = Vec::with_capacity(pw * ph);
    for y in 0..ph as isize {
        for x in 0..pw as isize {
            padded.push(img.get_clamped(x - r, y - r));
        }
    }

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let center = padded[(y + p.radius) * pw + x + p.radius];
            let mut num = 0.0;
            let mut den = 0.0;
            for wy in 0..side {
                let row = &padded[(y + wy) * pw + x..(y + wy) * pw + x + side];
                let srow = &spatial[wy * side..(wy + 1) * side];
                for (&v, &s) in row.iter().zip(srow) {
                    let diff = v - center;
                    let wt = s * (range_coeff * diff * diff).exp();
                    num += diff * wt;
                    den += wt;
                }
            }
            out.push(center + num / den);
        }
    }
    Ok(RealImage::from_parts(w, h, out))
}

/// Difference of two bilateral filters, `B(p1) - B(p2)`.
pub fn dob_filter(img: &RealImage, p1: &BilateralParams, p2: &BilateralParams) -> Result<RealImage> {
    if p1 == p2 {
        return Err(Error::InvalidParameter(
            "DoB needs two different bilateral parameter sets".into(),
        ));
    }
    let a = bilateral_filter(img, p1)?;
    let b = bilateral_filter(img, p2)?;
    a.zip_map(&b, |x, y| x - y)
}
