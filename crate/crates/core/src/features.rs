//! Local binary pattern features.
//!
//! Codes use the 3x3 ring. Neighbors are visited clockwise from the top-left
//! and the first one lands in the most significant bit:
//!
//! ```text
//! 7  6  5
//! 0  c  4
//! 1  2  3
//! ```
//!
//! (bit numbers shown). A neighbor `>=` the center sets its bit.
//!
//! Histograms have 59 bins: the 58 uniform codes (at most two circular
//! 0/1 transitions) in ascending code order, then one bin for everything
//! else. Each block histogram is L1-normalized.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::IntensityImage;
use crate::stages::split_even;

pub const HIST_BINS: usize = 59;
pub const NON_UNIFORM_BIN: usize = 58;

/// Clockwise ring offsets starting at the top-left neighbor.
const RING: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// LBP code of the interior pixel `(x, y)`.
pub fn lbp_code(img: &IntensityImage, x: usize, y: usize) -> Result<u8> {
    if x == 0 || y == 0 || x + 1 >= img.width() || y + 1 >= img.height() {
        return Err(Error::InvalidParameter(format!(
            "pixel ({x}, {y}) has no full 3x3 neighborhood"
        )));
    }
    Ok(code_unchecked(img, x, y))
}

#[inline]
fn code_unchecked(img: &IntensityImage, x: usize, y: usize) -> u8 {
    let c = img.get(x, y);
    RING.iter().fold(0u8, |code, &(dx, dy)| {
        let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        (code << 1) | u8::from(v >= c)
    })
}

/// Number of 0/1 changes walking once around the 8-bit circle.
pub fn circular_transitions(code: u8) -> u32 {
    (code ^ code.rotate_left(1)).count_ones()
}

fn bin_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [NON_UNIFORM_BIN as u8; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if circular_transitions(code) <= 2 {
                table[code as usize] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next as usize, NON_UNIFORM_BIN);
        table
    })
}

/// Histogram bin of an LBP code.
pub fn uniform_bin(code: u8) -> usize {
    bin_table()[code as usize] as usize
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// L1-normalized uniform-LBP histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram59 {
    pub bins: [f64; HIST_BINS],
}

/// Precomputed bin indices for every pixel that has a full 3x3 support.
/// Border pixels hold `None`.
struct BinMap {
    width: usize,
    bins: Vec<Option<u8>>,
}

impl BinMap {
    fn new(img: &IntensityImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut bins = vec![None; w * h];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                bins[y * w + x] = Some(uniform_bin(code_unchecked(img, x, y)) as u8);
            }
        }
        Self { width: w, bins }
    }

    fn histogram(&self, r: Rect) -> Result<Histogram59> {
        let mut counts = [0usize; HIST_BINS];
        let mut total = 0usize;
        for y in r.y..r.y + r.height {
            for b in self.bins[y * self.width + r.x..y * self.width + r.x + r.width]
                .iter()
                .flatten()
            {
                counts[*b as usize] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::InvalidParameter(format!(
                "region {r:?} contains no pixel with a full 3x3 neighborhood"
            )));
        }
        let mut bins = [0.0; HIST_BINS];
        for (b, c) in bins.iter_mut().zip(counts) {
            *b = c as f64 / total as f64;
        }
        Ok(Histogram59 { bins })
    }
}

fn check_rect(img: &IntensityImage, r: Rect) -> Result<()> {
    if r.width == 0 || r.height == 0 || r.x + r.width > img.width() || r.y + r.height > img.height()
    {
        return Err(Error::InvalidParameter(format!(
            "region {r:?} is empty or exceeds the {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Histogram over the centers inside `region`. Centers near the region edge
/// read their neighbors from the full image.
pub fn ulbp_histogram(img: &IntensityImage, region: Rect) -> Result<Histogram59> {
    check_rect(img, region)?;
    BinMap::new(img).histogram(region)
}

/// Where the blocks of a feature vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    /// Raw pixel intensities scaled to `[0, 1]`.
    Raw { width: usize, height: usize },
    /// `gx x gy` grid of histograms, row-major.
    Grid { gx: usize, gy: usize },
    /// Spatial pyramid, coarse to fine.
    Pyramid { layers: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: BlockLayout,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn grid_rects(img: &IntensityImage, gx: usize, gy: usize) -> Result<Vec<Rect>> {
    if gx == 0 || gy == 0 || img.width() / gx < 3 || img.height() / gy < 3 {
        return Err(Error::InvalidParameter(format!(
            "a {gx}x{gy} grid leaves cells smaller than 3x3 on a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let cols = split_even(img.width(), gx);
    let rows = split_even(img.height(), gy);
    Ok(rows
        .iter()
        .flat_map(|&(y, height)| {
            cols.iter().map(move |&(x, width)| Rect {
                x,
                y,
                width,
                height,
            })
        })
        .collect())
}

fn concat(map: &BinMap, rects: &[Rect], values: &mut Vec<f64>) -> Result<()> {
    for r in rects {
        values.extend_from_slice(&map.histogram(*r)?.bins);
    }
    Ok(())
}

/// Concatenated histograms over a `gx x gy` grid of cells, row-major.
pub fn lbph(img: &IntensityImage, gx: usize, gy: usize) -> Result<FeatureVector> {
    let rects = grid_rects(img, gx, gy)?;
    let map = BinMap::new(img);
    let mut values = Vec::with_capacity(rects.len() * HIST_BINS);
    concat(&map, &rects, &mut values)?;
    Ok(FeatureVector {
        values,
        layout: BlockLayout::Grid { gx, gy },
    })
}

/// Blocks in an `n`-layer pyramid: `(4^n - 1) / 3`.
pub fn block_count(layers: u32) -> Result<usize> {
    if !(1..=16).contains(&layers) {
        return Err(Error::InvalidParameter(format!(
            "pyramid layers must lie in 1..=16, got {layers}"
        )));
    }
    Ok((4usize.pow(layers) - 1) / 3)
}

/// Multi-scale histogram pyramid. Layer `k` (1-based) splits the image
/// into `2^(k-1) x 2^(k-1)` cells; layers are concatenated coarse to fine.
pub fn msulbph(img: &IntensityImage, layers: u32) -> Result<FeatureVector> {
    let blocks = block_count(layers)?;
    let map = BinMap::new(img);
    let mut values = Vec::with_capacity(blocks * HIST_BINS);
    for k in 0..layers {
        let side = 1usize << k;
        concat(&map, &grid_rects(img, side, side)?, &mut values)?;
    }
    debug_assert_eq!(values.len(), blocks * HIST_BINS);
    Ok(FeatureVector {
        values,
        layout: BlockLayout::Pyramid { layers },
    })
}

/// Pixel intensities scaled to `[0, 1]`, row-major.
pub fn raw_pixels(img: &IntensityImage) -> FeatureVector {
    FeatureVector {
        values: img.data().iter().map(|&v| f64::from(v) / 255.0).collect(),
        layout: BlockLayout::Raw {
            width: img.width(),
            height: img.height(),
        },
    }
}

/// Feature extractor selected by a descriptor string:
/// `raw`, `lbph:<gx>x<gy>` or `msulbph:<layers>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Raw,
    Lbph { gx: usize, gy: usize },
    Msulbph { layers: u32 },
}

impl FeatureKind {
    pub fn extract(&self, img: &IntensityImage) -> Result<FeatureVector> {
        match *self {
            FeatureKind::Raw => Ok(raw_pixels(img)),
            FeatureKind::Lbph { gx, gy } => lbph(img, gx, gy),
            FeatureKind::Msulbph { layers } => msulbph(img, layers),
        }
    }

    /// Checks the descriptor against an image size without computing anything.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        let fits = |cells: usize| width / cells >= 3 && height / cells >= 3;
        match *self {
            FeatureKind::Raw => Ok(()),
            FeatureKind::Lbph { gx, gy } => {
                if gx > 0 && gy > 0 && width / gx >= 3 && height / gy >= 3 {
                    Ok(())
                } else {
                    Err(Error::InvalidFeature(format!(
                        "{self}: cells smaller than 3x3 on {width}x{height}"
                    )))
                }
            }
            FeatureKind::Msulbph { layers } => {
                block_count(layers).map_err(|e| Error::InvalidFeature(e.to_string()))?;
                if fits(1 << (layers - 1)) {
                    Ok(())
                } else {
                    Err(Error::InvalidFeature(format!(
                        "{self}: finest cells smaller than 3x3 on {width}x{height}"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Raw => f.write_str("raw"),
            FeatureKind::Lbph { gx, gy } => write!(f, "lbph:{gx}x{gy}"),
            FeatureKind::Msulbph { layers } => write!(f, "msulbph:{layers}"),
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFeature(s.to_string());
        let parsed = match s.split_once(':') {
            None if s == "raw" => FeatureKind::Raw,
            Some(("lbph", grid)) => {
                let (gx, gy) = grid.split_once('x').ok_or_else(bad)?;
                let gx: usize = gx.parse().map_err(|_| bad())?;
                let gy: usize = gy.parse().map_err(|_| bad())?;
                if gx == 0 || gy == 0 {
                    return Err(bad());
                }
                FeatureKind::Lbph { gx, gy }
            }
            Some(("msulbph", layers)) => {
                let layers: u32 = layers.parse().map_err(|_| bad())?;
                block_count(layers).map_err(|_| bad())?;
                FeatureKind::Msulbph { layers }
            }
            _ => return Err(bad()),
        };
        Ok(parsed)
    }
}
