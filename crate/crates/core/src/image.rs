//! Raster types, PGM/PNG I/O, image statistics, range rescaling and resizing.
//!
//! Two raster types flow through the library:
//!
//! * [`IntensityImage`] is the external currency: 8-bit gray, at least 3x3.
//! * [`RealImage`] holds intermediate fields (log domain, filter responses,
//!   fused images). Every value is finite.
//!
//! Rounding is half-up everywhere (`floor(v + 0.5)`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Smallest side accepted for an [`IntensityImage`].
pub const MIN_SIDE: usize = 3;

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_side(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "data length does not match width x height",
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        check_side(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Applies a gray-level map to every pixel.
    pub fn map(&self, mut f: impl FnMut(u8) -> u8) -> IntensityImage {
        IntensityImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn check_side(width: usize, height: usize) -> Result<()> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "both sides must be at least 3 pixels",
        });
    }
    Ok(())
}

/// Row-major raster of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "data length must equal width x height and be nonzero",
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite pixel value {bad}"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Internal constructor for results of operations that cannot produce
    /// non-finite values from finite inputs.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel read with replicate (clamp-to-edge) addressing.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    pub fn same_dims(&self, other: &RealImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Pixelwise map. Panics in debug builds if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealImage {
        RealImage::from_parts(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Pixelwise combination of two equally sized images.
    pub fn zip_map(&self, other: &RealImage, f: impl Fn(f64, f64) -> f64) -> Result<RealImage> {
        self.same_dims(other)?;
        Ok(RealImage::from_parts(
            self.width,
            self.height,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Copies the `w x h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RealImage {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        RealImage::from_parts(w, h, data)
    }

    /// Writes `patch` into this image with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, patch: &RealImage, x0: usize, y0: usize) {
        for y in 0..patch.height {
            let dst = (y0 + y) * self.width + x0;
            let src = y * patch.width;
            self.data[dst..dst + patch.width].copy_from_slice(&patch.data[src..src + patch.width]);
        }
    }
}

/// On-disk formats accepted by [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    /// Guesses the format from a path extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" => Ok(ImageFormat::Pgm),
            "png" => Ok(ImageFormat::Png),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Reads a binary PGM (P5, maxval 255) or an 8-bit gray/RGB PNG.
///
/// The format is detected from the file's magic bytes, not its extension.
/// RGB pixels are converted with Rec.601 luma, rounded half-up.
pub fn load_image(path: impl AsRef<Path>) -> Result<IntensityImage> {
    let path = path.as_ref();
    let read_err = |source| Error::Read {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(read_err)?;

    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(Error::UnsupportedFormat(format!(
            "netpbm variant P{} (only binary P5 is read)",
            bytes[1] as char
        )))
    } else {
        Err(Error::UnsupportedFormat(format!(
            "{} is neither PGM nor PNG",
            path.display()
        )))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<IntensityImage> {
    let mut pos = 2;
    let mut header = [0u32; 3];
    for field in header.iter_mut() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedImage("truncated PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedImage("PGM header field out of range".into()))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte precedes the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedImage("missing separator before PGM raster".into()));
    }
    pos += 1;
    let (width, height) = (width as usize, height as usize);
    let len = width * height;
    let raster = bytes
        .get(pos..pos + len)
        .ok_or_else(|| Error::MalformedImage("PGM raster shorter than width x height".into()))?;
    IntensityImage::new(width, height, raster.to_vec())
}

fn decode_png(bytes: &[u8]) -> Result<IntensityImage> {
    let png_err = |e: png::DecodingError| Error::MalformedImage(format!("PNG: {e}"));
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedPng(format!(
            "bit depth {:?} (only 8-bit is accepted)",
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::UnsupportedPng(format!(
                "color type {other:?} (only gray and RGB are accepted)"
            )))
        }
    };
    let mut data = Vec::with_capacity(width * height);
    for row in buf.chunks(info.line_size).take(height) {
        let row = &row[..width * channels];
        if channels == 1 {
            data.extend_from_slice(row);
        } else {
            data.extend(row.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])));
        }
    }
    IntensityImage::new(width, height, data)
}

/// Rec.601 luma `0.299 R + 0.587 G + 0.114 B`, rounded half-up, in exact
/// integer arithmetic.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Writes a binary PGM (P5) or an 8-bit gray PNG.
pub fn save_image(img: &IntensityImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let write_err = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(write_err)?;
    let mut out = BufWriter::new(file);
    match format {
        ImageFormat::Pgm => {
            write!(out, "P5\n{} {}\n255\n", img.width, img.height).map_err(write_err)?;
            out.write_all(&img.data).map_err(write_err)?;
        }
        ImageFormat::Png => {
            let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let to_io = |e: png::EncodingError| match e {
                png::EncodingError::IoError(io) => io,
                other => std::io::Error::other(other.to_string()),
            };
            let mut writer = encoder.write_header().map_err(|e| write_err(to_io(e)))?;
            writer
                .write_image_data(&img.data)
                .map_err(|e| write_err(to_io(e)))?;
            writer.finish().map_err(|e| write_err(to_io(e)))?;
        }
    }
    out.flush().map_err(write_err)
}

pub fn to_real(img: &IntensityImage) -> RealImage {
    RealImage::from_parts(
        img.width,
        img.height,
        img.data.iter().map(|&v| f64::from(v)).collect(),
    )
}

/// Arithmetic mean over all pixels.
pub fn image_mean(img: &RealImage) -> f64 {
    img.data.iter().sum::<f64>() / img.data.len() as f64
}

/// Population standard deviation (divides by the pixel count).
///
/// Returns exactly 0 for constant images.
pub fn image_sd(img: &RealImage) -> f64 {
    let first = img.data[0];
    if img.data.iter().all(|&v| v == first) {
        return 0.0;
    }
    let mean = image_mean(img);
    let ss: f64 = img.data.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (ss / img.data.len() as f64).sqrt()
}

#[inline]
pub fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Rounds half-up and clamps into `[0, 255]`.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    round_half_up(v).clamp(0.0, 255.0) as u8
}

/// Linear min-max stretch to `[0, 255]`. Constant inputs map to 128.
pub fn rescale_to_intensity(img: &RealImage) -> IntensityImage {
    let (lo, hi) = img.min_max();
    let data = if hi > lo {
        let scale = 255.0 / (hi - lo);
        img.data.iter().map(|&v| to_u8((v - lo) * scale)).collect()
    } else {
        vec![128; img.data.len()]
    };
    debug_assert!(img.width >= MIN_SIDE && img.height >= MIN_SIDE);
    IntensityImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &IntensityImage, width: usize, height: usize) -> Result<IntensityImage> {
    check_side(width, height)?;
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let data = resize_plane(&img.data, img.width, img.height, width, height);
    Ok(IntensityImage {
        width,
        height,
        data,
    })
}

/// Source coordinate, lower index, upper index and fractional weight for
/// each destination index along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn resize_plane(src: &[u8], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<u8> {
    let xs = axis_taps(sw, dw);
    let ys = axis_taps(sh, dh);
    let px = |x: usize, y: usize| f64::from(src[y * sw + x]);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
            let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
            out.push(to_u8(top * (1.0 - fy) + bottom * fy));
        }
    }
    out
}
