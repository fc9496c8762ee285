//! End-to-end normalizers behind a single method registry.
//!
//! The main chain works in the log domain:
//!
//! ```text
//! I' = log2(I + eps)
//! I'' = w_dog * DoG(I') + w_dob * DoB(I')      (weights from the two SDs)
//! I''' = per-block contrast equalization of I''
//! out = stretch(tau * tanh(I''' / tau))
//! ```
//!
//! Baselines: TT (gamma, DoG, holistic CE), HE, GIC, LoG and single-scale
//! retinex.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    convolve, dob_filter, dog_filter, gamma_transform, gaussian_kernel, hist_equalize,
    log2_transform, log_filter, BilateralParams,
};
use crate::image::{rescale_to_intensity, to_real, to_u8, IntensityImage, RealImage};
use crate::stages::{blend, fusion_weights, lce, tanh_compress, FusionWeights, LceParams};

/// Every tunable of the normalizers. Missing JSON keys take the defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub dog_sigma1: f64,
    pub dog_sigma2: f64,
    pub dob_p1: BilateralParams,
    pub dob_p2: BilateralParams,
    pub lce: LceParams,
    /// Surround scale `c` of the retinex Gaussian `exp(-(x^2+y^2)/c^2)`.
    pub ssr_c: f64,
    pub gic_gamma: f64,
    pub tt_gamma: f64,
    /// Scale of the LoG baseline.
    pub log_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            dog_sigma1: 1.0,
            dog_sigma2: 2.0,
            dob_p1: BilateralParams {
                sigma_d: 1.0,
                sigma_r: 0.3,
                radius: 3,
            },
            dob_p2: BilateralParams {
                sigma_d: 2.0,
                sigma_r: 0.3,
                radius: 6,
            },
            lce: LceParams::default(),
            ssr_c: 15.0,
            gic_gamma: 0.2,
            tt_gamma: 0.2,
            log_sigma: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("epsilon", self.epsilon)?;
        pos("dog_sigma1", self.dog_sigma1)?;
        pos("ssr_c", self.ssr_c)?;
        pos("gic_gamma", self.gic_gamma)?;
        pos("tt_gamma", self.tt_gamma)?;
        pos("log_sigma", self.log_sigma)?;
        if !(self.dog_sigma1 < self.dog_sigma2) || !self.dog_sigma2.is_finite() {
            return Err(Error::Config("dog_sigma1 must be below dog_sigma2".into()));
        }
        let wrap = |e: Error| Error::Config(e.to_string());
        self.dob_p1.validate().map_err(wrap)?;
        self.dob_p2.validate().map_err(wrap)?;
        if self.dob_p1 == self.dob_p2 {
            return Err(Error::Config("dob_p1 and dob_p2 must differ".into()));
        }
        self.lce.validate().map_err(wrap)
    }

    /// Parses a JSON object, layering its keys over the defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Normalization methods exposed by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodId {
    Fdfi,
    Tt,
    He,
    Gic,
    Log,
    Ssr,
    None,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Fdfi,
        MethodId::Tt,
        MethodId::He,
        MethodId::Gic,
        MethodId::Log,
        MethodId::Ssr,
        MethodId::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::Fdfi => "fdfi",
            MethodId::Tt => "tt",
            MethodId::He => "he",
            MethodId::Gic => "gic",
            MethodId::Log => "log",
            MethodId::Ssr => "ssr",
            MethodId::None => "none",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// DoG and DoB responses of the log image, blended by the SD rule unless
/// explicit weights are given.
pub fn fused_texture(
    log_img: &RealImage,
    cfg: &PipelineConfig,
    weights: Option<FusionWeights>,
) -> Result<RealImage> {
    let i_dog = dog_filter(log_img, cfg.dog_sigma1, cfg.dog_sigma2)?;
    let i_dob = dob_filter(log_img, &cfg.dob_p1, &cfg.dob_p2)?;
    let w = match weights {
        Some(w) => w,
        None => fusion_weights(&i_dog, &i_dob)?,
    };
    blend(&i_dog, &i_dob, w)
}

/// Contrast equalization, tanh compression and the final 8-bit stretch.
pub fn equalize_and_stretch(img: &RealImage, lce_params: &LceParams) -> Result<IntensityImage> {
    let equalized = lce(img, lce_params)?;
    let compressed = tanh_compress(&equalized, lce_params.tau)?;
    Ok(rescale_to_intensity(&compressed))
}

/// The full log / DoG+DoB fusion / LCE / tanh chain.
pub fn fdfi_ltein(img: &IntensityImage, cfg: &PipelineConfig) -> Result<IntensityImage> {
    fdfi_ltein_with_weights(img, cfg, None)
}

/// [`fdfi_ltein`] with the SD-rule weights optionally overridden.
pub fn fdfi_ltein_with_weights(
    img: &IntensityImage,
    cfg: &PipelineConfig,
    weights: Option<FusionWeights>,
) -> Result<IntensityImage> {
    cfg.validate()?;
    let log_img = log2_transform(img, cfg.epsilon)?;
    let fused = fused_texture(&log_img, cfg, weights)?;
    equalize_and_stretch(&fused, &cfg.lce)
}

/// Retinex reflectance `ln(I+1) - ln(G * (I+1))` with a unit-mass Gaussian
/// surround `exp(-(x^2+y^2)/c^2)`, i.e. standard deviation `c / sqrt(2)`.
pub fn ssr_reflectance(img: &IntensityImage, c: f64) -> Result<RealImage> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "surround scale must be positive, got {c}"
        )));
    }
    let shifted = to_real(img).map(|v| v + 1.0);
    let surround = convolve(&shifted, &gaussian_kernel(c / std::f64::consts::SQRT_2)?);
    shifted.zip_map(&surround, |i, l| i.ln() - l.ln())
}

pub fn ssr_normalize(img: &IntensityImage, cfg: &PipelineConfig) -> Result<IntensityImage> {
    Ok(rescale_to_intensity(&ssr_reflectance(img, cfg.ssr_c)?))
}

/// Gamma correction, DoG, holistic contrast equalization and tanh.
pub fn tt_normalize(img: &IntensityImage, cfg: &PipelineConfig) -> Result<IntensityImage> {
    cfg.validate()?;
    let corrected = gamma_transform(img, cfg.tt_gamma)?;
    let dog = dog_filter(&corrected, cfg.dog_sigma1, cfg.dog_sigma2)?;
    let holistic = LceParams { n: 0, ..cfg.lce };
    equalize_and_stretch(&dog, &holistic)
}

/// Gamma intensity correction rounded back to 8 bits.
pub fn gic_normalize(img: &IntensityImage, cfg: &PipelineConfig) -> Result<IntensityImage> {
    let g = gamma_transform(img, cfg.gic_gamma)?;
    IntensityImage::new(
        img.width(),
        img.height(),
        g.data().iter().map(|&v| to_u8(v)).collect(),
    )
}

pub fn log_normalize(img: &IntensityImage, cfg: &PipelineConfig) -> Result<IntensityImage> {
    Ok(rescale_to_intensity(&log_filter(&to_real(img), cfg.log_sigma)?))
}

/// Dispatches to the requested method.
pub fn normalize(
    method: MethodId,
    img: &IntensityImage,
    cfg: &PipelineConfig,
) -> Result<IntensityImage> {
    match method {
        MethodId::Fdfi => fdfi_ltein(img, cfg),
        MethodId::Tt => tt_normalize(img, cfg),
        MethodId::He => Ok(hist_equalize(img)),
        MethodId::Gic => gic_normalize(img, cfg),
        MethodId::Log => log_normalize(img, cfg),
        MethodId::Ssr => ssr_normalize(img, cfg),
        MethodId::None => Ok(img.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, lo: u8, hi: u8, seed: u64) -> IntensityImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        IntensityImage::from_fn(w, h, |_, _| rng.gen_range(lo..=hi)).unwrap()
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json_pretty()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn config_overrides_and_rejections() {
        let cfg = PipelineConfig::from_json(r#"{"epsilon": 2.5, "lce": {"n": 1, "alpha": 0.2, "tau": 5.0, "guard_eps": 1e-9}}"#).unwrap();
        assert_eq!(cfg.epsilon, 2.5);
        assert_eq!(cfg.lce.n, 1);
        assert_eq!(cfg.dog_sigma2, 2.0);

        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"epsilon": -1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"dog_sigma1": 3.0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"lce": {"n": 2, "alpha": 0.1, "tau": 10.0, "extra": 1}}"#).is_err());
    }

    #[test]
    fn nested_keys_default_individually() {
        let cfg = PipelineConfig::from_json(r#"{"lce": {"n": 2, "alpha": 0.1, "tau": 10.0}}"#).unwrap();
        assert_eq!(cfg.lce.guard_eps, 1e-9);
        let cfg = PipelineConfig::from_json(r#"{"lce": {"n": 1}}"#).unwrap();
        assert_eq!(cfg.lce.tau, 10.0);
        // Bilateral pairs have no shared default, so they must be complete.
        assert!(PipelineConfig::from_json(r#"{"dob_p1": {"sigma_d": 1.5}}"#).is_err());
    }

    #[test]
    fn method_ids_parse() {
        for m in MethodId::ALL {
            assert_eq!(m.as_str().parse::<MethodId>().unwrap(), m);
        }
        assert!(matches!("bogus".parse::<MethodId>(), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn every_method_keeps_dimensions_and_range() {
        let img = random_image(40, 36, 20, 220, 3);
        let cfg = PipelineConfig::default();
        for m in MethodId::ALL {
            let out = normalize(m, &img, &cfg).unwrap();
            assert_eq!((out.width(), out.height()), (40, 36), "{m}");
        }
    }

    #[test]
    fn dispatch_examples() {
        let img = random_image(20, 20, 0, 255, 4);
        let cfg = PipelineConfig::default();
        assert_eq!(normalize(MethodId::None, &img, &cfg).unwrap(), img);
        assert_eq!(normalize(MethodId::He, &img, &cfg).unwrap(), hist_equalize(&img));
        let gic = normalize(MethodId::Gic, &img, &cfg).unwrap();
        for (o, i) in gic.data().iter().zip(img.data()) {
            let expected = (255.0 * (f64::from(*i) / 255.0).powf(0.2) + 0.5).floor() as u8;
            assert_eq!(*o, expected);
        }
    }

    #[test]
    fn fdfi_is_deterministic() {
        let img = random_image(32, 32, 10, 250, 5);
        let cfg = PipelineConfig::default();
        assert_eq!(fdfi_ltein(&img, &cfg).unwrap(), fdfi_ltein(&img, &cfg).unwrap());
    }

    #[test]
    fn constant_inputs() {
        let flat = IntensityImage::filled(24, 24, 90).unwrap();
        let cfg = PipelineConfig::default();
        let ssr = ssr_normalize(&flat, &cfg).unwrap();
        assert!(ssr.data().iter().all(|&v| v == 128));
        let tt = tt_normalize(&flat, &cfg).unwrap();
        assert!(tt.data().iter().all(|&v| v == tt.data()[0]));
    }

    #[test]
    fn ssr_matches_direct_composition() {
        let img = random_image(16, 16, 0, 255, 6);
        let r = ssr_reflectance(&img, 3.0).unwrap();
        // Oracle: unnormalized surround evaluated pixel by pixel with clamped
        // addressing, normalized by its own total mass.
        let sigma = 3.0 / std::f64::consts::SQRT_2;
        let rad = (3.0 * sigma).ceil() as isize;
        let at = |x: isize, y: isize| f64::from(img.get(x.clamp(0, 15) as usize, y.clamp(0, 15) as usize)) + 1.0;
        for y in 0..16isize {
            for x in 0..16isize {
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        let f = (-((dx * dx + dy * dy) as f64) / 9.0).exp();
                        num += f * at(x + dx, y + dy);
                        den += f;
                    }
                }
                let expected = at(x, y).ln() - (num / den).ln();
                assert!((r.get(x as usize, y as usize) - expected).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn ssr_gain_changes_reflectance_little_on_bright_regions() {
        // Smooth bright image with values in [64, 127]; doubling stays in range.
        let img = IntensityImage::from_fn(32, 32, |x, y| (64 + (x * 2 + y) % 64) as u8).unwrap();
        let doubled = img.map(|v| v * 2);
        let a = ssr_reflectance(&img, 15.0).unwrap();
        let b = ssr_reflectance(&doubled, 15.0).unwrap();
        let worst = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.05, "max |dr| = {worst}");
    }

    #[test]
    fn tt_is_fdfi_without_dob_on_a_gamma_tone() {
        // With DoB weight 0 and a single block, the main chain on a log tone
        // equals the TT chain run on that same tone.
        let img = random_image(24, 24, 30, 200, 8);
        let mut cfg = PipelineConfig::default();
        cfg.lce.n = 0;
        let forced = fdfi_ltein_with_weights(&img, &cfg, Some(FusionWeights::new(1.0).unwrap())).unwrap();

        let log_img = log2_transform(&img, cfg.epsilon).unwrap();
        let dog = dog_filter(&log_img, cfg.dog_sigma1, cfg.dog_sigma2).unwrap();
        let tt_on_log = equalize_and_stretch(&dog, &LceParams { n: 0, ..cfg.lce }).unwrap();
        assert_eq!(forced, tt_on_log);
    }

    #[test]
    fn fdfi_rejects_images_too_small_for_blocks() {
        let img = random_image(3, 3, 0, 255, 1);
        assert!(fdfi_ltein(&img, &PipelineConfig::default()).is_err());
    }
}
