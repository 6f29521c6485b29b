//! Intermediate viewpoint rendering.
//!
//! Both sources are forward-warped along proportionally scaled flow toward
//! the virtual viewpoint at fraction `a`, and the two warps are fused with
//! proximity weights. Flow magnitude doubles as inverse depth: where several
//! source pixels land on one target, the nearer surface wins.

use std::collections::VecDeque;

use crate::par;
use crate::raster::{ensure_dims, luma, to_u8, FlowField, Image, Mask, RasterError, Rgb, ScalarField};

// contributions within this many pixels of flow magnitude of the nearest
// one belong to the same surface and are blended
const SURFACE_TOLERANCE: f32 = 0.5;
const MIN_SPLAT_WEIGHT: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// One forward-warped source.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub image: Image,
    pub valid: Mask,
    /// Depth proxy of the surface that won each target.
    pub magnitude: ScalarField,
}

/// The rendered virtual view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewResult {
    pub image: Image,
    /// `false` where neither warp reached the pixel and it was hole-filled.
    pub valid: Mask,
    /// Fused inverse-depth proxy in source-flow pixels.
    pub magnitude: ScalarField,
    pub a: f64,
}

fn check_fraction(a: f64) -> Result<(), SynthesisError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(SynthesisError::InvalidParameter(format!("a = {a} is outside [0, 1]")));
    }
    Ok(())
}

/// Multiplies every vector by `s`.
pub fn scale_flow(flow: &FlowField, s: f32) -> FlowField {
    flow.scaled(s)
}

/// Forward warp using the flow's own magnitude as the depth proxy.
pub fn forward_warp(image: &Image, flow: &FlowField) -> Result<Splat, SynthesisError> {
    forward_warp_with_depth(image, flow, &flow.magnitude())
}

/// Splats every source pixel `p` into the four integer neighbours of
/// `p + flow(p)` with bilinear weights. Per target only the contributions of
/// the nearest surface (largest `depth`) are kept.
pub fn forward_warp_with_depth(image: &Image, flow: &FlowField, depth: &ScalarField) -> Result<Splat, SynthesisError> {
    ensure_dims(image.dims(), flow.dims())?;
    ensure_dims(image.dims(), depth.dims())?;
    let (w, h) = image.dims();

    let targets = |x: usize, y: usize| {
        let [u, v] = flow.get(x, y);
        let tx = x as f64 + u as f64;
        let ty = y as f64 + v as f64;
        let (x0, y0) = (tx.floor(), ty.floor());
        let (fx, fy) = (tx - x0, ty - y0);
        let mut out = [(0usize, 0.0f64); 4];
        let mut n = 0;
        for (dx, dy, wt) in [
            (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
            (1.0, 0.0, fx * (1.0 - fy)),
            (0.0, 1.0, (1.0 - fx) * fy),
            (1.0, 1.0, fx * fy),
        ] {
            let (qx, qy) = (x0 + dx, y0 + dy);
            if wt > MIN_SPLAT_WEIGHT && qx >= 0.0 && qy >= 0.0 && qx < w as f64 && qy < h as f64 {
                out[n] = (qy as usize * w + qx as usize, wt);
                n += 1;
            }
        }
        (out, n)
    };

    let mut nearest = vec![f32::NEG_INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            let (ts, n) = targets(x, y);
            for &(q, _) in &ts[..n] {
                nearest[q] = nearest[q].max(d);
            }
        }
    }

    let mut acc = vec![[0.0f64; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            let c = image.get(x, y);
            let (ts, n) = targets(x, y);
            for &(q, wt) in &ts[..n] {
                if d >= nearest[q] - SURFACE_TOLERANCE {
                    let a = &mut acc[q];
                    a[0] += wt * c[0] as f64;
                    a[1] += wt * c[1] as f64;
                    a[2] += wt * c[2] as f64;
                    a[3] += wt * d as f64;
                    a[4] += wt;
                }
            }
        }
    }

    let mut pixels = vec![[0u8; 3]; w * h];
    let mut valid = vec![false; w * h];
    let mut magnitude = vec![0.0f32; w * h];
    for (i, a) in acc.iter().enumerate() {
        if a[4] > 0.0 {
            pixels[i] = [0, 1, 2].map(|k| to_u8((a[k] / a[4]) as f32));
            magnitude[i] = (a[3] / a[4]) as f32;
            valid[i] = true;
        }
    }
    Ok(Splat {
        image: Image::new(w, h, pixels)?,
        valid: Mask::new(w, h, valid)?,
        magnitude: ScalarField::new(w, h, magnitude)?,
    })
}

/// For every pixel, the index of the nearest `valid` pixel under 4-connected
/// distance (multi-source breadth-first search in row-major seed order).
/// `None` when nothing is valid.
pub fn nearest_valid(valid: &Mask) -> Option<Vec<usize>> {
    let (w, h) = valid.dims();
    let mut src = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for (i, &v) in valid.bits().iter().enumerate() {
        if v {
            src[i] = i;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return None;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if src[j] == usize::MAX {
                src[j] = src[i];
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    Some(src)
}

/// Copies the nearest valid pixel into every invalid one.
pub fn fill_nearest(image: &Image, valid: &Mask) -> Result<Image, SynthesisError> {
    ensure_dims(image.dims(), valid.dims())?;
    let Some(src) = nearest_valid(valid) else {
        return Ok(image.clone());
    };
    let px = image.pixels();
    Ok(Image::new(image.width(), image.height(), src.iter().map(|&s| px[s]).collect())?)
}

fn blend(c1: Rgb, c2: Rgb, a: f64) -> Rgb {
    [0, 1, 2].map(|k| to_u8(((1.0 - a) * c1[k] as f64 + a * c2[k] as f64) as f32))
}

/// Per-pixel source selection of a fusion, before hole filling.
enum Pick {
    Both,
    First,
    Second,
    Neither,
}

fn pick(m1: &Mask, m2: &Mask, i: usize) -> Pick {
    match (m1.bits()[i], m2.bits()[i]) {
        (true, true) => Pick::Both,
        (true, false) => Pick::First,
        (false, true) => Pick::Second,
        (false, false) => Pick::Neither,
    }
}

/// Weighted fusion of two warped views: `(1 - a)` on the first, `a` on the
/// second where both are valid, the valid one where only one is, and the
/// nearest valid output pixel elsewhere (left `false` in the mask).
pub fn fuse_views(
    view1: &Image,
    valid1: &Mask,
    view2: &Image,
    valid2: &Mask,
    a: f64,
) -> Result<(Image, Mask), SynthesisError> {
    check_fraction(a)?;
    for d in [valid1.dims(), view2.dims(), valid2.dims()] {
        ensure_dims(view1.dims(), d)?;
    }
    let (w, h) = view1.dims();
    let (p1, p2) = (view1.pixels(), view2.pixels());
    let mut pixels = vec![[0u8; 3]; w * h];
    let mut valid = vec![true; w * h];
    for i in 0..w * h {
        match pick(valid1, valid2, i) {
            Pick::Both => pixels[i] = blend(p1[i], p2[i], a),
            Pick::First => pixels[i] = p1[i],
            Pick::Second => pixels[i] = p2[i],
            Pick::Neither => valid[i] = false,
        }
    }
    let valid = Mask::new(w, h, valid)?;
    let image = fill_nearest(&Image::new(w, h, pixels)?, &valid)?;
    Ok((image, valid))
}

fn fuse_magnitude(s1: &Splat, s2: &Splat, valid: &Mask, a: f64) -> Result<ScalarField, SynthesisError> {
    let (w, h) = valid.dims();
    let (m1, m2) = (s1.magnitude.values(), s2.magnitude.values());
    let mut out: Vec<f32> = (0..w * h)
        .map(|i| match pick(&s1.valid, &s2.valid, i) {
            Pick::Both => ((1.0 - a) * m1[i] as f64 + a * m2[i] as f64) as f32,
            Pick::First => m1[i],
            Pick::Second => m2[i],
            Pick::Neither => 0.0,
        })
        .collect();
    if let Some(src) = nearest_valid(valid) {
        out = src.iter().map(|&s| out[s]).collect();
    }
    Ok(ScalarField::new(w, h, out)?)
}

/// Forward warps of both sources toward the viewpoint at `a`. The depth
/// proxy of each warp is its full source flow magnitude.
pub(crate) fn warp_pair(
    img1: &Image,
    img2: &Image,
    f12: &FlowField,
    f21: &FlowField,
    a: f64,
) -> Result<(Splat, Splat), SynthesisError> {
    check_fraction(a)?;
    for d in [img2.dims(), f12.dims(), f21.dims()] {
        ensure_dims(img1.dims(), d)?;
    }
    let f13 = scale_flow(f12, a as f32);
    let f24 = scale_flow(f21, (1.0 - a) as f32);
    let (s4, s5) = par::join(
        || forward_warp_with_depth(img1, &f13, &f12.magnitude()),
        || forward_warp_with_depth(img2, &f24, &f21.magnitude()),
    );
    Ok((s4?, s5?))
}

/// Renders the viewpoint at fraction `a` between image 1 (`a = 0`) and
/// image 2 (`a = 1`).
pub fn synthesize_view(
    img1: &Image,
    img2: &Image,
    f12: &FlowField,
    f21: &FlowField,
    a: f64,
) -> Result<ViewResult, SynthesisError> {
    let (s4, s5) = warp_pair(img1, img2, f12, f21, a)?;
    let (image, valid) = fuse_views(&s4.image, &s4.valid, &s5.image, &s5.valid, a)?;
    let magnitude = fuse_magnitude(&s4, &s5, &valid, a)?;
    Ok(ViewResult { image, valid, magnitude, a })
}

/// Verification overlay: the luminances of three views in the red, green
/// and blue channels.
pub fn overlay_rgb(v1: &Image, v2: &Image, v3: &Image) -> Result<Image, SynthesisError> {
    ensure_dims(v1.dims(), v2.dims())?;
    ensure_dims(v1.dims(), v3.dims())?;
    let l = |p: Rgb| to_u8(luma(p) * 255.0);
    let (p1, p2, p3) = (v1.pixels(), v2.pixels(), v3.pixels());
    let pixels = (0..p1.len()).map(|i| [l(p1[i]), l(p2[i]), l(p3[i])]).collect();
    Ok(Image::new(v1.width(), v1.height(), pixels)?)
}
