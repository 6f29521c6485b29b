//! Dense optical flow: Horn-Schunck relaxation inside a coarse-to-fine
//! warping scheme.
//!
//! Luminance is handled on the 8-bit scale internally (values in [0, 255]),
//! so `alpha` is expressed in intensity units per pixel.

mod visualize;
mod warp;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::raster::{build_pyramid, ensure_dims, FlowField, GrayImage, Image, RasterError};

pub use visualize::{flow_to_color, flow_wheel_color};
pub use warp::{warp_backward, warp_backward_image};

const INTENSITY_SCALE: f32 = 255.0;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("invalid flow parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Smoothness weight.
    pub alpha: f32,
    /// Relaxation sweeps per linearization.
    pub iterations: usize,
    /// Pyramid depth.
    pub levels: usize,
    /// Re-warps per pyramid level.
    pub warp_updates: usize,
    /// Sweeps stop once the mean per-pixel update norm drops below this.
    pub convergence_eps: f32,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { alpha: 15.0, iterations: 200, levels: 4, warp_updates: 3, convergence_eps: 1e-3 }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |what: &str| Err(FlowError::InvalidParameter(what.to_string()));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.iterations == 0 || self.levels == 0 || self.warp_updates == 0 {
            return bad("iterations, levels and warp_updates must be at least 1");
        }
        if !(self.convergence_eps.is_finite() && self.convergence_eps > 0.0) {
            return bad("convergence_eps must be positive");
        }
        Ok(())
    }
}

/// Diagnostics of one relaxation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelReport {
    pub sweeps: usize,
    /// Mean update norm of the last sweep, in pixels.
    pub final_update: f64,
}

/// Central differences with one-sided differences on the border.
fn gradients(img: &GrayImage) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = img.dims();
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    let diff = |lo: f32, hi: f32, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f32 };
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            gx[y * w + x] = diff(img.get(xl, y), img.get(xr, y), xr - xl);
            gy[y * w + x] = diff(img.get(x, yu), img.get(x, yd), yd - yu);
        }
    }
    (gx, gy)
}

/// One linearization of the Horn-Schunck energy around `init`, solved by
/// Jacobi relaxation. Returns the refined flow and a convergence report.
pub fn horn_schunck_level_report(
    a: &GrayImage,
    b: &GrayImage,
    init: &FlowField,
    params: &FlowParams,
) -> Result<(FlowField, LevelReport), FlowError> {
    ensure_dims(a.dims(), b.dims())?;
    ensure_dims(a.dims(), init.dims())?;
    params.validate()?;
    let (w, h) = a.dims();
    let n = w * h;

    let a = a.scaled(INTENSITY_SCALE);
    let warped = warp_backward(&b.scaled(INTENSITY_SCALE), init)?;
    let (ax, ay) = gradients(&a);
    let (bx, by) = gradients(&warped);

    let mut ix = vec![0.0f32; n];
    let mut iy = vec![0.0f32; n];
    // constant part of the linearized brightness constancy residual:
    // Ix*u + Iy*v + c = 0 with c = It - Ix*u0 - Iy*v0
    let mut c = vec![0.0f32; n];
    let mut denom = vec![0.0f32; n];
    let alpha2 = params.alpha * params.alpha;
    for i in 0..n {
        ix[i] = 0.5 * (ax[i] + bx[i]);
        iy[i] = 0.5 * (ay[i] + by[i]);
        let it = warped.values()[i] - a.values()[i];
        let [u0, v0] = init.vectors()[i];
        c[i] = it - ix[i] * u0 - iy[i] * v0;
        denom[i] = alpha2 + ix[i] * ix[i] + iy[i] * iy[i];
    }

    let mut cur: Vec<[f32; 2]> = init.vectors().to_vec();
    let mut next = cur.clone();
    let mut report = LevelReport { sweeps: 0, final_update: 0.0 };
    for sweep in 1..=params.iterations {
        let prev = &cur;
        let row_sums = par::map_rows(&mut next, w, |y, row| {
            let up = y.saturating_sub(1) * w;
            let down = (y + 1).min(h - 1) * w;
            let here = y * w;
            let mut sum = 0.0f64;
            for (x, out) in row.iter_mut().enumerate() {
                let left = here + x.saturating_sub(1);
                let right = here + (x + 1).min(w - 1);
                let mut avg = [0.0f32; 2];
                for k in 0..2 {
                    avg[k] = 0.25 * (prev[left][k] + prev[right][k] + prev[up + x][k] + prev[down + x][k]);
                }
                let i = here + x;
                let t = (ix[i] * avg[0] + iy[i] * avg[1] + c[i]) / denom[i];
                let nu = avg[0] - ix[i] * t;
                let nv = avg[1] - iy[i] * t;
                let du = nu - prev[i][0];
                let dv = nv - prev[i][1];
                sum += ((du * du + dv * dv) as f64).sqrt();
                *out = [nu, nv];
            }
            sum
        });
        std::mem::swap(&mut cur, &mut next);
        let mean_update = row_sums.iter().sum::<f64>() / n as f64;
        report = LevelReport { sweeps: sweep, final_update: mean_update };
        if mean_update < params.convergence_eps as f64 {
            break;
        }
    }
    Ok((FlowField::from_raw(w, h, cur), report))
}

/// Horn-Schunck refinement of `init` at a single scale.
pub fn horn_schunck_level(
    a: &GrayImage,
    b: &GrayImage,
    init: &FlowField,
    params: &FlowParams,
) -> Result<FlowField, FlowError> {
    Ok(horn_schunck_level_report(a, b, init, params)?.0)
}

/// Doubles a flow field from one pyramid level to the next finer one of
/// size `width` x `height`. Coarse pixel `i` sits on fine pixel `2i`.
pub fn upsample_flow(flow: &FlowField, width: usize, height: usize) -> FlowField {
    let mut vectors = vec![[0.0f32; 2]; width * height];
    par::for_each_row(&mut vectors, width, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let v = flow.sample_bilinear(x as f32 * 0.5, y as f32 * 0.5);
            *out = [v[0] * 2.0, v[1] * 2.0];
        }
    });
    FlowField::from_raw(width, height, vectors)
}

/// Coarse-to-fine flow from `a` to `b`: `warp_backward(b, flow) ~ a`.
pub fn pyramidal_flow(a: &GrayImage, b: &GrayImage, params: &FlowParams) -> Result<FlowField, FlowError> {
    Ok(pyramidal_flow_report(a, b, params)?.0)
}

/// As [`pyramidal_flow`], also returning one report per relaxation run,
/// coarsest first.
pub fn pyramidal_flow_report(
    a: &GrayImage,
    b: &GrayImage,
    params: &FlowParams,
) -> Result<(FlowField, Vec<LevelReport>), FlowError> {
    ensure_dims(a.dims(), b.dims())?;
    params.validate()?;
    let pa = build_pyramid(a, params.levels);
    let pb = build_pyramid(b, params.levels);
    let mut reports = Vec::new();
    let mut flow: Option<FlowField> = None;
    for (la, lb) in pa.iter().zip(&pb).rev() {
        let (w, h) = la.dims();
        let mut current = match flow.take() {
            None => FlowField::zeros(w, h),
            Some(coarse) => upsample_flow(&coarse, w, h),
        };
        for _ in 0..params.warp_updates {
            let (next, report) = horn_schunck_level_report(la, lb, &current, params)?;
            reports.push(report);
            current = next;
        }
        flow = Some(current);
    }
    Ok((flow.expect("at least one level"), reports))
}

/// Forward (1 -> 2) and backward (2 -> 1) flow of an image pair.
pub fn bidirectional_flow(img1: &Image, img2: &Image, params: &FlowParams) -> Result<(FlowField, FlowField), FlowError> {
    ensure_dims(img1.dims(), img2.dims())?;
    let (g1, g2) = (img1.to_gray(), img2.to_gray());
    let (fwd, back) = par::join(|| pyramidal_flow(&g1, &g2, params), || pyramidal_flow(&g2, &g1, params));
    Ok((fwd?, back?))
}

#[cfg(test)]
mod tests;
