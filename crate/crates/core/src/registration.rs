//! Projective registration of the image pair.
//!
//! Image 2 is brought into image 1's frame with a homography estimated from
//! point correspondences (normalized DLT, optionally inside RANSAC). The
//! correspondences come either from a JSON file or from a coarse grid of
//! normalized cross-correlation patch matches.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par;
use crate::raster::{to_u8, GrayImage, Image, Mask};

const SINGULAR_EPS: f64 = 1e-12;
// ratio of the two smallest singular values of the DLT system that still
// counts as a well-posed (rank 8) problem
const CONDITION_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum RegistrationError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("homography is singular")]
    SingularMatrix,
    #[error("point maps to infinity")]
    PointAtInfinity,
    #[error("correspondence file: {0}")]
    BadCorrespondences(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 3x3 projective transform, row-major, acting on column vectors (x, y, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn from_rows(m: [[f64; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]] }
    }

    pub fn scale(s: f64) -> Self {
        Self { m: [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]] }
    }

    fn to_matrix(self) -> Matrix3<f64> {
        let m = self.m;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], //
            m[1][0], m[1][1], m[1][2], //
            m[2][0], m[2][1], m[2][2],
        )
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        Self { m: out }
    }

    pub fn determinant(&self) -> f64 {
        self.to_matrix().determinant()
    }

    /// Matrix product `self * rhs` (apply `rhs` first).
    pub fn compose(&self, rhs: &Homography) -> Homography {
        Homography::from_matrix(&(self.to_matrix() * rhs.to_matrix()))
    }

    /// Scales the matrix so that m[2][2] == 1. Left unchanged when m[2][2]
    /// is zero.
    pub fn normalized(&self) -> Homography {
        let s = self.m[2][2];
        if s.abs() <= SINGULAR_EPS {
            return *self;
        }
        Homography { m: self.m.map(|row| row.map(|v| v / s)) }
    }

    pub fn inverse(&self) -> Result<Homography, RegistrationError> {
        if self.determinant().abs() <= SINGULAR_EPS {
            return Err(RegistrationError::SingularMatrix);
        }
        self.to_matrix()
            .try_inverse()
            .map(|m| Homography::from_matrix(&m).normalized())
            .ok_or(RegistrationError::SingularMatrix)
    }

    /// Projective application with the homogeneous divide.
    pub fn apply(&self, p: [f64; 2]) -> Result<[f64; 2], RegistrationError> {
        let m = &self.m;
        let x = m[0][0] * p[0] + m[0][1] * p[1] + m[0][2];
        let y = m[1][0] * p[0] + m[1][1] * p[1] + m[1][2];
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        if w.abs() <= SINGULAR_EPS {
            return Err(RegistrationError::PointAtInfinity);
        }
        Ok([x / w, y / w])
    }

    /// Largest absolute entry-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn apply_homography(h: &Homography, p: [f64; 2]) -> Result<[f64; 2], RegistrationError> {
    h.apply(p)
}

/// A point in image 2 (`src`) and the matching point in image 1 (`dst`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

impl Correspondence {
    pub fn new(src: [f64; 2], dst: [f64; 2]) -> Self {
        Self { src, dst }
    }
}

pub fn parse_correspondences(json: &str) -> Result<Vec<Correspondence>, RegistrationError> {
    let pairs: Vec<Correspondence> =
        serde_json::from_str(json).map_err(|e| RegistrationError::BadCorrespondences(e.to_string()))?;
    if pairs
        .iter()
        .any(|c| c.src.iter().chain(c.dst.iter()).any(|v| !v.is_finite()))
    {
        return Err(RegistrationError::BadCorrespondences("non-finite coordinate".into()));
    }
    Ok(pairs)
}

pub fn load_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence>, RegistrationError> {
    parse_correspondences(&std::fs::read_to_string(path)?)
}

/// Similarity transform moving the centroid to the origin with mean distance
/// sqrt(2).
fn normalizing_transform(pts: impl Iterator<Item = [f64; 2]> + Clone) -> Result<Matrix3<f64>, RegistrationError> {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = pts.map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if mean_dist <= SINGULAR_EPS {
        return Err(RegistrationError::DegenerateConfiguration);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Normalized DLT: maps every `src` onto its `dst`.
pub fn estimate_homography(pairs: &[Correspondence]) -> Result<Homography, RegistrationError> {
    let n = pairs.len();
    if n < 4 {
        return Err(RegistrationError::TooFewPoints(n));
    }
    let t_src = normalizing_transform(pairs.iter().map(|c| c.src))?;
    let t_dst = normalizing_transform(pairs.iter().map(|c| c.dst))?;

    // at least 9 rows so the SVD exposes the full right null space
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in pairs.iter().enumerate() {
        let [x, y] = transform(&t_src, c.src);
        let [u, v] = transform(&t_dst, c.dst);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(RegistrationError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if largest <= 0.0 || second_smallest / largest < CONDITION_EPS {
        return Err(RegistrationError::DegenerateConfiguration);
    }
    let null = v_t.row(order[8]);
    let h_norm = Matrix3::from_row_slice(&null.iter().copied().collect::<Vec<_>>());

    let t_dst_inv = t_dst.try_inverse().ok_or(RegistrationError::DegenerateConfiguration)?;
    let h = Homography::from_matrix(&(t_dst_inv * h_norm * t_src));
    if h.m[2][2].abs() <= SINGULAR_EPS {
        return Err(RegistrationError::DegenerateConfiguration);
    }
    let h = h.normalized();
    if h.determinant().abs() <= SINGULAR_EPS {
        return Err(RegistrationError::DegenerateConfiguration);
    }
    Ok(h)
}

/// H' = H1 * H2^-1: carries points from the plane of `h2` to that of `h1`.
pub fn compose_rectifying(h1: &Homography, h2: &Homography) -> Result<Homography, RegistrationError> {
    let inv = h2.inverse()?;
    let h = h1.compose(&inv);
    if h.determinant().abs() <= SINGULAR_EPS {
        return Err(RegistrationError::SingularMatrix);
    }
    Ok(h.normalized())
}

/// Reprojection error of one correspondence, infinite if `src` maps to
/// infinity.
pub fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    match h.apply(c.src) {
        Ok(p) => ((p[0] - c.dst[0]).powi(2) + (p[1] - c.dst[1]).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// Inverse-mapping warp. Output pixels whose preimage falls outside the
/// source are black and flagged invalid in the returned mask.
pub fn warp_perspective_masked(
    image: &Image,
    h: &Homography,
    out_w: usize,
    out_h: usize,
) -> Result<(Image, Mask), RegistrationError> {
    let inv = h.inverse()?;
    let (w, h_src) = image.dims();
    let (max_x, max_y) = ((w - 1) as f64 + 1e-6, (h_src - 1) as f64 + 1e-6);
    let mut buf = vec![([0u8; 3], false); out_w * out_h];
    par::for_each_row(&mut buf, out_w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            if let Ok(p) = inv.apply([x as f64, y as f64]) {
                if p[0] >= -1e-6 && p[1] >= -1e-6 && p[0] <= max_x && p[1] <= max_y {
                    let c = image.sample_bilinear(p[0] as f32, p[1] as f32);
                    *out = ([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])], true);
                }
            }
        }
    });
    let (pixels, bits): (Vec<_>, Vec<_>) = buf.into_iter().unzip();
    Ok((
        Image::new(out_w, out_h, pixels).expect("output dims"),
        Mask::new(out_w, out_h, bits).expect("output dims"),
    ))
}

pub fn warp_perspective(image: &Image, h: &Homography, out_w: usize, out_h: usize) -> Result<Image, RegistrationError> {
    Ok(warp_perspective_masked(image, h, out_w, out_h)?.0)
}

#[derive(Clone, Debug)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { iterations: 1000, inlier_threshold: 2.0, seed: 42 }
    }
}

/// RANSAC around [`estimate_homography`]. Returns the model refitted on the
/// best consensus set and the inlier flags.
pub fn ransac_homography(
    pairs: &[Correspondence],
    params: &RansacParams,
) -> Result<(Homography, Vec<bool>), RegistrationError> {
    if pairs.len() < 4 {
        return Err(RegistrationError::TooFewPoints(pairs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, pairs.len(), 4);
        let subset: Vec<Correspondence> = idx.iter().map(|i| pairs[i]).collect();
        let Ok(h) = estimate_homography(&subset) else { continue };
        let errors: Vec<f64> = pairs.iter().map(|c| reprojection_error(&h, c)).collect();
        let inliers: Vec<bool> = errors.iter().map(|e| *e < params.inlier_threshold).collect();
        let count = inliers.iter().filter(|b| **b).count();
        let cost: f64 = errors.iter().filter(|e| **e < params.inlier_threshold).sum();
        let better = match &best {
            None => true,
            Some((c, e, _)) => count > *c || (count == *c && cost < *e),
        };
        if better {
            best = Some((count, cost, inliers));
        }
        if count == pairs.len() {
            break;
        }
    }
    let (count, _, inliers) = best.ok_or(RegistrationError::DegenerateConfiguration)?;
    if count < 4 {
        return Err(RegistrationError::DegenerateConfiguration);
    }
    let consensus: Vec<Correspondence> = pairs.iter().zip(&inliers).filter(|(_, k)| **k).map(|(c, _)| *c).collect();
    let h = estimate_homography(&consensus)?;
    Ok((h, inliers))
}

#[derive(Clone, Debug)]
pub struct MatchParams {
    /// Grid cells per side.
    pub grid: usize,
    /// Patch half-size in pixels.
    pub patch_radius: usize,
    /// Maximum displacement searched in each direction.
    pub search_radius: usize,
    pub min_score: f32,
    /// Patches flatter than this standard deviation are skipped.
    pub min_std: f32,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { grid: 10, patch_radius: 7, search_radius: 24, min_score: 0.8, min_std: 0.02 }
    }
}

struct Patch {
    values: Vec<f32>,
    norm: f32,
}

fn patch(img: &GrayImage, cx: usize, cy: usize, r: usize) -> Patch {
    let mut values = Vec::with_capacity((2 * r + 1).pow(2));
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            values.push(img.get(x, y));
        }
    }
    let mean = values.iter().sum::<f32>() / values.len() as f32;
    values.iter_mut().for_each(|v| *v -= mean);
    let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
    Patch { values, norm }
}

fn ncc(a: &Patch, b: &Patch) -> f32 {
    if a.norm <= 0.0 || b.norm <= 0.0 {
        return -1.0;
    }
    a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f32>() / (a.norm * b.norm)
}

// vertex offset of the parabola through three samples
fn parabolic_offset(left: f32, mid: f32, right: f32) -> f32 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-9 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// Grid of NCC patch matches from image 2 (`src`) into image 1 (`dst`).
pub fn match_grid(img1: &Image, img2: &Image, params: &MatchParams) -> Vec<Correspondence> {
    let (g1, g2) = (img1.to_gray(), img2.to_gray());
    let r = params.patch_radius;
    let (w2, h2) = g2.dims();
    let (w1, h1) = g1.dims();
    if w2 <= 2 * r + 2 || h2 <= 2 * r + 2 || w1 <= 2 * r + 2 || h1 <= 2 * r + 2 {
        return Vec::new();
    }
    let cells = params.grid.max(2);
    let centers: Vec<(usize, usize)> = (0..cells)
        .flat_map(|j| (0..cells).map(move |i| (i, j)))
        .map(|(i, j)| {
            let cx = r + 1 + (i * (w2 - 2 * r - 3)) / (cells - 1);
            let cy = r + 1 + (j * (h2 - 2 * r - 3)) / (cells - 1);
            (cx, cy)
        })
        .collect();

    let s = params.search_radius as isize;
    let score_at = |ref_patch: &Patch, x: isize, y: isize| -> Option<f32> {
        if x < r as isize || y < r as isize || x + r as isize >= w1 as isize || y + r as isize >= h1 as isize {
            return None;
        }
        Some(ncc(ref_patch, &patch(&g1, x as usize, y as usize, r)))
    };

    let mut out = Vec::new();
    for (cx, cy) in centers {
        let p2 = patch(&g2, cx, cy, r);
        let n = p2.values.len() as f32;
        if p2.norm / n.sqrt() < params.min_std {
            continue;
        }
        let mut best: Option<(f32, isize, isize)> = None;
        for dy in -s..=s {
            for dx in -s..=s {
                let (x, y) = (cx as isize + dx, cy as isize + dy);
                if let Some(score) = score_at(&p2, x, y) {
                    if best.is_none_or(|(b, _, _)| score > b) {
                        best = Some((score, x, y));
                    }
                }
            }
        }
        let Some((score, bx, by)) = best else { continue };
        if score < params.min_score {
            continue;
        }
        let around = |x, y| score_at(&p2, x, y).unwrap_or(score);
        // NCC is bounded by 1, so an exact match needs no refinement
        let (ox, oy) = if score >= 1.0 - 1e-6 {
            (0.0, 0.0)
        } else {
            (
                parabolic_offset(around(bx - 1, by), score, around(bx + 1, by)),
                parabolic_offset(around(bx, by - 1), score, around(bx, by + 1)),
            )
        };
        out.push(Correspondence::new(
            [cx as f64, cy as f64],
            [bx as f64 + ox as f64, by as f64 + oy as f64],
        ));
    }
    out
}

/// Estimates the homography carrying image 2 into image 1's frame from
/// automatic patch matches.
pub fn register_auto(img1: &Image, img2: &Image) -> Result<Homography, RegistrationError> {
    let pairs = match_grid(img1, img2, &MatchParams::default());
    Ok(ransac_homography(&pairs, &RansacParams::default())?.0)
}
