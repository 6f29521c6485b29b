//! Parallax-aware close-up.
//!
//! The view is split into a foreground and a background layer by thresholding
//! the flow-magnitude depth proxy. Both layers are magnified about a chosen
//! center, the foreground by the requested zoom and the background by a
//! smaller factor proportional to its relative magnitude, then composited.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::raster::{ensure_dims, to_u8, FlowField, Image, Mask, RasterError, Rgb, ScalarField};
use crate::synthesis::{fill_nearest, fuse_views, nearest_valid, synthesize_view, warp_pair, SynthesisError};

/// Foreground bits: `true` marks the near layer.
pub type LayerMask = Mask;

const CLOSING_RADIUS: usize = 2;
const OTSU_BINS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum CloseupError {
    #[error("magnitude field is constant; no threshold separates it")]
    DegenerateField,
    #[error("invalid close-up parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Magnitude threshold for the foreground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tau {
    Auto,
    Value(f32),
}

impl FromStr for Tau {
    type Err = CloseupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Tau::Auto);
        }
        match s.parse::<f32>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(Tau::Value(v)),
            _ => Err(CloseupError::InvalidParameter(format!("tau must be 'auto' or a number >= 0, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseupParams {
    /// Foreground magnification, at least 1.
    pub zoom: f64,
    /// Zoom center as fractions of width and height.
    pub cx: f64,
    pub cy: f64,
    pub tau: Tau,
    /// Width of the alpha ramp at the foreground edge, in pixels.
    pub feather: f64,
}

impl Default for CloseupParams {
    fn default() -> Self {
        Self { zoom: 1.5, cx: 0.5, cy: 0.5, tau: Tau::Auto, feather: 2.0 }
    }
}

impl CloseupParams {
    pub fn validate(&self) -> Result<(), CloseupError> {
        let bad = |m: String| Err(CloseupError::InvalidParameter(m));
        if !(self.zoom.is_finite() && self.zoom >= 1.0) {
            return bad(format!("zoom must be >= 1, got {}", self.zoom));
        }
        if !((0.0..=1.0).contains(&self.cx) && (0.0..=1.0).contains(&self.cy)) {
            return bad(format!("center ({}, {}) is outside the unit square", self.cx, self.cy));
        }
        if !(self.feather.is_finite() && self.feather >= 0.0) {
            return bad(format!("feather must be >= 0, got {}", self.feather));
        }
        if let Tau::Value(t) = self.tau {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("tau must be >= 0, got {t}"));
            }
        }
        Ok(())
    }

    fn center_px(&self, width: usize, height: usize) -> [f64; 2] {
        [self.cx * (width - 1) as f64, self.cy * (height - 1) as f64]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloseupResult {
    pub image: Image,
    /// Segmentation degenerated and the result is a uniform zoom.
    pub fallback: bool,
}

/// Magnification of the background layer: `1 + (zoom - 1) * f_bg / f_fg`.
pub fn background_zoom(zoom: f64, f_fg: f64, f_bg: f64) -> f64 {
    1.0 + (zoom - 1.0) * (f_bg / f_fg)
}

// separable max (dilate) or min (erode) over a (2r+1)^2 window, clipped at
// the border
fn morph(bits: &[bool], w: usize, h: usize, r: usize, dilate: bool) -> Vec<bool> {
    let pass = |src: &[bool], horizontal: bool| {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(len - 1);
                let mut window = (lo..=hi).map(|k| if horizontal { src[y * w + k] } else { src[k * w + x] });
                out[y * w + x] = if dilate { window.any(|b| b) } else { window.all(|b| b) };
            }
        }
        out
    };
    pass(&pass(bits, true), false)
}

/// Marks every background pixel that is 4-connected to the border.
fn border_reachable(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !bits[i] {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut next = [None; 4];
        if x > 0 {
            next[0] = Some(i - 1);
        }
        if x + 1 < w {
            next[1] = Some(i + 1);
        }
        if y > 0 {
            next[2] = Some(i - w);
        }
        if y + 1 < h {
            next[3] = Some(i + w);
        }
        for j in next.into_iter().flatten() {
            if !bits[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Foreground = magnitude >= `tau`, closed with a 5x5 square and with every
/// enclosed background hole filled.
pub fn segment_foreground(magnitude: &ScalarField, tau: f32) -> Result<LayerMask, CloseupError> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(CloseupError::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    let (w, h) = magnitude.dims();
    let bits: Vec<bool> = magnitude.values().iter().map(|&m| m >= tau).collect();
    let closed = morph(&morph(&bits, w, h, CLOSING_RADIUS, true), w, h, CLOSING_RADIUS, false);
    let outside = border_reachable(&closed, w, h);
    Ok(Mask::new(w, h, outside.iter().map(|o| !o).collect())?)
}

/// Otsu threshold over a 64-bin histogram. Ties between equally good
/// splits resolve to the middle of the tied range.
pub fn auto_tau(magnitude: &ScalarField) -> Result<f32, CloseupError> {
    let values = magnitude.values();
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if hi <= lo {
        return Err(CloseupError::DegenerateField);
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0.0f64; OTSU_BINS];
    for &v in values {
        let b = (((v as f64 - lo) / width) as usize).min(OTSU_BINS - 1);
        hist[b] += 1.0;
    }
    let scores = otsu_scores(&hist);
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..scores.len()).filter(|&k| scores[k] >= best * (1.0 - 1e-12)).collect();
    let k = (tied[0] + tied[tied.len() - 1]) / 2;
    Ok((lo + (k + 1) as f64 * width) as f32)
}

/// Between-class variance for every split "bins 0..=k vs the rest".
fn otsu_scores(hist: &[f64]) -> Vec<f64> {
    let total: f64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, c)| i as f64 * c).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut scores = Vec::with_capacity(hist.len() - 1);
    for (k, &c) in hist[..hist.len() - 1].iter().enumerate() {
        w0 += c;
        s0 += k as f64 * c;
        let w1 = total - w0;
        scores.push(if w0 == 0.0 || w1 == 0.0 {
            0.0
        } else {
            let d = s0 / w0 - (sum_all - s0) / w1;
            w0 * w1 * d * d
        });
    }
    scores
}

/// Inverse map of a magnification by `zoom` about `center`.
#[inline]
fn source_point(x: usize, y: usize, center: [f64; 2], zoom: f64) -> (f32, f32) {
    (
        (center[0] + (x as f64 - center[0]) / zoom) as f32,
        (center[1] + (y as f64 - center[1]) / zoom) as f32,
    )
}

fn nearest_index(px: f32, py: f32, w: usize, h: usize) -> usize {
    let x = (px + 0.5).floor().clamp(0.0, (w - 1) as f32) as usize;
    let y = (py + 0.5).floor().clamp(0.0, (h - 1) as f32) as usize;
    y * w + x
}

fn render_rows(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb + Send + Sync) -> Image {
    let mut pixels = vec![[0u8; 3]; width * height];
    par::for_each_row(&mut pixels, width, |y, row| {
        for (x, p) in row.iter_mut().enumerate() {
            *p = f(x, y);
        }
    });
    Image::new(width, height, pixels).expect("row buffer matches the grid")
}

/// Bilinear magnification of the whole view about `center` (in pixels).
pub fn uniform_zoom(view: &Image, zoom: f64, center: [f64; 2]) -> Image {
    if zoom == 1.0 {
        return view.clone();
    }
    render_rows(view.width(), view.height(), |x, y| {
        let (sx, sy) = source_point(x, y, center, zoom);
        view.sample_bilinear(sx, sy).map(to_u8)
    })
}

/// `mask` magnified by `zoom` about `center`, nearest-neighbour.
pub fn scale_mask(mask: &Mask, zoom: f64, center: [f64; 2]) -> Mask {
    let (w, h) = mask.dims();
    Mask::from_fn(w, h, |x, y| {
        let (sx, sy) = source_point(x, y, center, zoom);
        mask.bits()[nearest_index(sx, sy, w, h)]
    })
}

/// Chessboard distance from each `true` pixel to the nearest `false` one
/// (0 on `false` pixels). Without any `false` pixel distances saturate.
fn chessboard_distance(mask: &Mask) -> Vec<u32> {
    let (w, h) = mask.dims();
    let inf = (w + h) as u32;
    let mut d: Vec<u32> = mask.bits().iter().map(|&b| if b { inf } else { 0 }).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut best = d[i];
            if x > 0 {
                best = best.min(d[i - 1] + 1);
            }
            if y > 0 {
                best = best.min(d[i - w] + 1);
                if x > 0 {
                    best = best.min(d[i - w - 1] + 1);
                }
                if x + 1 < w {
                    best = best.min(d[i - w + 1] + 1);
                }
            }
            d[i] = best;
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            let mut best = d[i];
            if x + 1 < w {
                best = best.min(d[i + 1] + 1);
            }
            if y + 1 < h {
                best = best.min(d[i + w] + 1);
                if x + 1 < w {
                    best = best.min(d[i + w + 1] + 1);
                }
                if x > 0 {
                    best = best.min(d[i + w - 1] + 1);
                }
            }
            d[i] = best;
        }
    }
    d
}

/// Compositing weights of the magnified foreground layer.
fn foreground_alpha(scaled: &Mask, feather: f64) -> Vec<f32> {
    if feather == 0.0 {
        return scaled.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    }
    chessboard_distance(scaled).iter().map(|&d| (d as f64 / feather).min(1.0) as f32).collect()
}

fn check_layers(zoom: f64, f_fg: f64, f_bg: f64) -> Result<(), CloseupError> {
    if !(f_fg.is_finite() && f_fg > 0.0) {
        return Err(CloseupError::InvalidParameter(format!("foreground magnitude must be > 0, got {f_fg}")));
    }
    if !(f_bg.is_finite() && (0.0..=f_fg).contains(&f_bg)) {
        return Err(CloseupError::InvalidParameter(format!("background magnitude must lie in [0, {f_fg}], got {f_bg}")));
    }
    if !(zoom.is_finite() && zoom >= 1.0) {
        return Err(CloseupError::InvalidParameter(format!("zoom must be >= 1, got {zoom}")));
    }
    Ok(())
}

/// Two-layer magnification: the whole view scaled by the background zoom,
/// with the masked foreground scaled by `params.zoom` composited on top.
pub fn layered_zoom(
    view: &Image,
    mask: &LayerMask,
    f_fg: f64,
    f_bg: f64,
    params: &CloseupParams,
) -> Result<Image, CloseupError> {
    params.validate()?;
    check_layers(params.zoom, f_fg, f_bg)?;
    ensure_dims(view.dims(), mask.dims())?;
    if params.zoom == 1.0 {
        return Ok(view.clone());
    }
    let (w, h) = view.dims();
    let center = params.center_px(w, h);
    let z_fg = params.zoom;
    let z_bg = background_zoom(z_fg, f_fg, f_bg);
    let alpha = foreground_alpha(&scale_mask(mask, z_fg, center), params.feather);
    Ok(render_rows(w, h, |x, y| {
        let (bx, by) = source_point(x, y, center, z_bg);
        let bg = view.sample_bilinear(bx, by);
        let t = alpha[y * w + x];
        if t == 0.0 {
            return bg.map(to_u8);
        }
        let (fx, fy) = source_point(x, y, center, z_fg);
        let fg = view.sample_bilinear(fx, fy);
        [0, 1, 2].map(|k| to_u8(t * fg[k] + (1.0 - t) * bg[k]))
    }))
}

/// Validity of a layered zoom's output: each pixel inherits the validity of
/// the source pixel its dominant layer samples.
fn layered_zoom_valid(valid: &Mask, mask: &LayerMask, z_fg: f64, z_bg: f64, params: &CloseupParams) -> Mask {
    let (w, h) = valid.dims();
    let center = params.center_px(w, h);
    let alpha = foreground_alpha(&scale_mask(mask, z_fg, center), params.feather);
    Mask::from_fn(w, h, |x, y| {
        let z = if alpha[y * w + x] >= 0.5 { z_fg } else { z_bg };
        let (sx, sy) = source_point(x, y, center, z);
        valid.bits()[nearest_index(sx, sy, w, h)]
    })
}

fn median(mut v: Vec<f32>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f32::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] as f64 } else { 0.5 * (v[n / 2 - 1] as f64 + v[n / 2] as f64) })
}

/// Layer decomposition of one view: mask plus representative foreground and
/// background magnitudes. `None` when segmentation degenerates.
pub fn segment_layers(magnitude: &ScalarField, tau: Tau) -> Result<Option<(LayerMask, f64, f64)>, CloseupError> {
    let tau = match tau {
        Tau::Value(t) => t,
        Tau::Auto => match auto_tau(magnitude) {
            Ok(t) => t,
            Err(CloseupError::DegenerateField) => return Ok(None),
            Err(e) => return Err(e),
        },
    };
    let mask = segment_foreground(magnitude, tau)?;
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    for (&m, &v) in mask.bits().iter().zip(magnitude.values()) {
        if m {
            fg.push(v);
        } else {
            bg.push(v);
        }
    }
    match (median(fg), median(bg)) {
        (Some(f_fg), Some(f_bg)) if f_fg > 0.0 => Ok(Some((mask, f_fg, f_bg.min(f_fg)))),
        _ => Ok(None),
    }
}

/// Close-up of the viewpoint at `a`: both forward warps are segmented and
/// layer-zoomed independently, then fused like the plain view. When either
/// segmentation degenerates (e.g. zero flow) the synthesized view is zoomed
/// uniformly instead and `fallback` is set.
pub fn closeup_fused(
    img1: &Image,
    img2: &Image,
    f12: &FlowField,
    f21: &FlowField,
    a: f64,
    params: &CloseupParams,
) -> Result<CloseupResult, CloseupError> {
    params.validate()?;
    if params.zoom == 1.0 {
        let image = synthesize_view(img1, img2, f12, f21, a)?.image;
        return Ok(CloseupResult { image, fallback: false });
    }
    let (s4, s5) = warp_pair(img1, img2, f12, f21, a)?;
    let mut zoomed = Vec::with_capacity(2);
    for splat in [&s4, &s5] {
        let image = fill_nearest(&splat.image, &splat.valid)?;
        let magnitude = match nearest_valid(&splat.valid) {
            Some(src) => {
                let m = splat.magnitude.values();
                ScalarField::new(image.width(), image.height(), src.iter().map(|&s| m[s]).collect())?
            }
            None => splat.magnitude.clone(),
        };
        match segment_layers(&magnitude, params.tau)? {
            Some((mask, f_fg, f_bg)) => {
                let out = layered_zoom(&image, &mask, f_fg, f_bg, params)?;
                let z_bg = background_zoom(params.zoom, f_fg, f_bg);
                let valid = layered_zoom_valid(&splat.valid, &mask, params.zoom, z_bg, params);
                zoomed.push((out, valid));
            }
            None => {
                let view = synthesize_view(img1, img2, f12, f21, a)?.image;
                let center = params.center_px(view.width(), view.height());
                return Ok(CloseupResult { image: uniform_zoom(&view, params.zoom, center), fallback: true });
            }
        }
    }
    let (c4, v4) = &zoomed[0];
    let (c5, v5) = &zoomed[1];
    let (image, _) = fuse_views(c4, v4, c5, v5, a)?;
    Ok(CloseupResult { image, fallback: false })
}
