use super::GrayImage;
use crate::par;

/// Smallest side length a pyramid level may have.
pub const MIN_PYRAMID_SIDE: usize = 8;

const SIGMA: f64 = 1.0;
const RADIUS: isize = 3;

fn kernel() -> [f32; (2 * RADIUS + 1) as usize] {
    let mut k = [0.0f64; (2 * RADIUS + 1) as usize];
    for (i, w) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *w = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|w| (w / sum) as f32)
}

// Accumulates weighted differences against the centre sample so that a
// constant signal comes back bit-for-bit.
fn blur_pass(src: &GrayImage, horizontal: bool) -> GrayImage {
    let k = kernel();
    let (w, h) = src.dims();
    let mut out = vec![0.0f32; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let c = src.get(x, y);
            let mut acc = 0.0f32;
            for (i, kw) in k.iter().enumerate() {
                let d = i as isize - RADIUS;
                let v = if horizontal {
                    src.at(x as isize + d, y as isize)
                } else {
                    src.at(x as isize, y as isize + d)
                };
                acc += kw * (v - c);
            }
            *o = c + acc;
        }
    });
    GrayImage::new(w, h, out).expect("same dimensions")
}

/// Separable Gaussian blur (sigma 1, clamp-to-edge).
pub fn gaussian_blur(img: &GrayImage) -> GrayImage {
    blur_pass(&blur_pass(img, true), false)
}

fn downsample(img: &GrayImage) -> GrayImage {
    let blurred = gaussian_blur(img);
    let (w, h) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    GrayImage::from_fn(nw, nh, |x, y| blurred.get(2 * x, 2 * y))
}

/// Gaussian pyramid: level 0 is the input, each further level is blurred and
/// decimated by two (dimensions rounded up). The level count is reduced so
/// the coarsest level keeps both sides at least [`MIN_PYRAMID_SIDE`].
pub fn build_pyramid(img: &GrayImage, levels: usize) -> Vec<GrayImage> {
    let mut out = vec![img.clone()];
    while out.len() < levels.max(1) {
        let last = out.last().expect("non-empty");
        let (w, h) = last.dims();
        if w.div_ceil(2) < MIN_PYRAMID_SIDE || h.div_ceil(2) < MIN_PYRAMID_SIDE {
            break;
        }
        out.push(downsample(last));
    }
    out
}
