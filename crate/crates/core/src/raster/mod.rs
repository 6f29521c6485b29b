//! Raster containers shared by every stage: RGB images, luminance images,
//! flow fields, scalar fields and boolean masks.
//!
//! All containers are row-major and validated on construction. Sampling uses
//! clamp-to-edge everywhere.

mod io;
mod pyramid;

use std::path::PathBuf;

pub use io::{
    decode_flo, decode_image, encode_flo, encode_png, encode_ppm, load_image, read_flo, save_image, write_flo,
    FLO_MAGIC,
};
pub use pyramid::{build_pyramid, gaussian_blur, MIN_PYRAMID_SIDE};

pub type Rgb = [u8; 3];

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("bad .flo magic number {0}")]
    BadMagic(f32),
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite value in flow field")]
    NonFinite,
    #[error("invalid dimensions {0}x{1}")]
    InvalidDimensions(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_len(width: usize, height: usize, len: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::InvalidDimensions(width, height));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(RasterError::CorruptData(format!(
            "{len} elements for a {width}x{height} grid"
        )));
    }
    Ok(())
}

/// Round half up and clamp into the 8-bit range.
#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[inline]
fn clamp_index(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Bilinear support of a sample position: two column indices, two row
/// indices and the fractional weights, clamped to the grid.
#[inline]
fn bilinear_support(width: usize, height: usize, x: f32, y: f32) -> (usize, usize, usize, usize, f32, f32) {
    let x = if x.is_finite() { x.clamp(0.0, (width - 1) as f32) } else { 0.0 };
    let y = if y.is_finite() { y.clamp(0.0, (height - 1) as f32) } else { 0.0 };
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    (x0, x1, y0, y1, fx, fy)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        check_len(width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Bilinear sample with clamp-to-edge. Exact at integer coordinates.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let (x0, x1, y0, y1, fx, fy) = bilinear_support(self.width, self.height, x, y);
        let p00 = self.get(x0, y0);
        let p10 = self.get(x1, y0);
        let p01 = self.get(x0, y1);
        let p11 = self.get(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = lerp(p00[c] as f32, p10[c] as f32, fx);
            let bottom = lerp(p01[c] as f32, p11[c] as f32, fx);
            out[c] = lerp(top, bottom, fy);
        }
        out
    }

    /// Luminance with fixed 0.299/0.587/0.114 weights, scaled to [0, 1].
    pub fn to_gray(&self) -> GrayImage {
        let values = self.pixels.iter().map(|&p| luma(p)).collect();
        GrayImage { width: self.width, height: self.height, values }
    }
}

/// Luminance of one pixel in [0, 1].
#[inline]
pub fn luma(p: Rgb) -> f32 {
    ((0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0) as f32
}

/// Floating-point luminance image, nominally in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, RasterError> {
        check_len(width, height, values.len())?;
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, values: vec![v; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Clamped integer access.
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> f32 {
        self.values[clamp_index(y, self.height) * self.width + clamp_index(x, self.width)]
    }

    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let (x0, x1, y0, y1, fx, fy) = bilinear_support(self.width, self.height, x, y);
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        lerp(top, bottom, fy)
    }

    /// Multiplies every value by `s`.
    pub fn scaled(&self, s: f32) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }
}

/// Dense per-pixel displacement field in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<[f32; 2]>) -> Result<Self, RasterError> {
        check_len(width, height, vectors.len())?;
        if vectors.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(RasterError::NonFinite);
        }
        Ok(Self { width, height, vectors })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, [0.0, 0.0])
    }

    pub fn uniform(width: usize, height: usize, v: [f32; 2]) -> Self {
        assert!(width > 0 && height > 0, "flow dimensions must be positive");
        assert!(v[0].is_finite() && v[1].is_finite(), "flow must be finite");
        Self { width, height, vectors: vec![v; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vectors.push(f(x, y));
            }
        }
        Self::new(width, height, vectors).expect("flow closure must yield finite vectors")
    }

    /// Builds a field from vectors that the caller guarantees are finite.
    pub(crate) fn from_raw(width: usize, height: usize, vectors: Vec<[f32; 2]>) -> Self {
        debug_assert_eq!(vectors.len(), width * height);
        debug_assert!(vectors.iter().all(|v| v[0].is_finite() && v[1].is_finite()));
        Self { width, height, vectors }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.vectors[y * self.width + x]
    }

    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 2] {
        let (x0, x1, y0, y1, fx, fy) = bilinear_support(self.width, self.height, x, y);
        std::array::from_fn(|c| {
            let top = lerp(self.get(x0, y0)[c], self.get(x1, y0)[c], fx);
            let bottom = lerp(self.get(x0, y1)[c], self.get(x1, y1)[c], fx);
            lerp(top, bottom, fy)
        })
    }

    /// Every vector multiplied by `s`.
    pub fn scaled(&self, s: f32) -> FlowField {
        let vectors = self.vectors.iter().map(|v| [v[0] * s, v[1] * s]).collect();
        FlowField::new(self.width, self.height, vectors).expect("scaled flow must stay finite")
    }

    /// Per-pixel Euclidean norm.
    pub fn magnitude(&self) -> ScalarField {
        let values = self
            .vectors
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .collect();
        ScalarField { width: self.width, height: self.height, values }
    }

    /// Component-wise mean over all pixels.
    pub fn mean(&self) -> [f64; 2] {
        let n = self.vectors.len() as f64;
        let (su, sv) = self
            .vectors
            .iter()
            .fold((0.0f64, 0.0f64), |(a, b), v| (a + v[0] as f64, b + v[1] as f64));
        [su / n, sv / n]
    }
}

/// Per-pixel flow magnitude.
pub fn flow_magnitude(flow: &FlowField) -> ScalarField {
    flow.magnitude()
}

/// Non-negative per-pixel scalar, used as the inverse-depth proxy.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, RasterError> {
        check_len(width, height, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(RasterError::CorruptData("scalar field values must be finite and >= 0".into()));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self::new(width, height, vec![v; width * height]).expect("valid scalar fill")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values).expect("scalar closure must yield finite non-negative values")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Per-pixel boolean grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, RasterError> {
        check_len(width, height, bits.len())?;
        Ok(Self { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, v: bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self { width, height, bits: vec![v; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn all(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }
}

pub(crate) fn ensure_dims(expected: (usize, usize), got: (usize, usize)) -> Result<(), RasterError> {
    if expected != got {
        return Err(RasterError::DimensionMismatch { expected, got });
    }
    Ok(())
}
