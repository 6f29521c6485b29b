//! Synthetic scenes with known motion, used by tests, benches and the demo
//! CLI inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{FlowField, Image, Mask, Rgb};

#[derive(Clone, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

/// Band-limited random color texture defined on the continuous plane, so it
/// can be rendered at sub-pixel offsets.
#[derive(Clone, Debug)]
pub struct Texture {
    waves: Vec<Wave>,
    base: [f64; 3],
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..14)
            .map(|_| {
                let wavelength: f64 = rng.random_range(7.0..28.0);
                let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                let a: f64 = rng.random_range(5.0..11.0);
                Wave {
                    kx: k * angle.cos(),
                    ky: k * angle.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [a * rng.random_range(0.6..1.0), a * rng.random_range(0.6..1.0), a * rng.random_range(0.6..1.0)],
                }
            })
            .collect();
        Self { waves, base: [128.0, 124.0, 120.0] }
    }

    pub fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let mut out = self.base;
        for w in &self.waves {
            let s = (w.kx * x + w.ky * y + w.phase).sin();
            for (o, a) in out.iter_mut().zip(w.amp) {
                *o += a * s;
            }
        }
        out
    }

    pub fn pixel(&self, x: f64, y: f64) -> Rgb {
        self.eval(x, y).map(|v| v.round().clamp(0.0, 255.0) as u8)
    }

    /// Renders the texture with its content displaced by `offset`.
    pub fn render(&self, width: usize, height: usize, offset: [f64; 2]) -> Image {
        Image::from_fn(width, height, |x, y| self.pixel(x as f64 - offset[0], y as f64 - offset[1]))
    }
}

pub fn texture(width: usize, height: usize, seed: u64) -> Image {
    Texture::new(seed).render(width, height, [0.0, 0.0])
}

/// Image pair whose content moves by `d` from the first to the second
/// image, so the true forward flow is `d` everywhere.
pub fn shifted_pair(width: usize, height: usize, d: [f64; 2], seed: u64) -> (Image, Image) {
    let t = Texture::new(seed);
    (t.render(width, height, [0.0, 0.0]), t.render(width, height, d))
}

/// A flat colored square translating over a static textured background.
#[derive(Clone, Debug)]
pub struct MovingSquare {
    pub width: usize,
    pub height: usize,
    /// Top-left corner in image 1.
    pub origin: [usize; 2],
    pub side: usize,
    /// Integer displacement from image 1 to image 2.
    pub displacement: [isize; 2],
    pub color: Rgb,
    pub seed: u64,
}

impl Default for MovingSquare {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            origin: [24, 20],
            side: 20,
            displacement: [12, 0],
            color: [255, 255, 255],
            seed: 11,
        }
    }
}

impl MovingSquare {
    fn inside(&self, x: usize, y: usize, shifted: bool) -> bool {
        let (dx, dy) = if shifted { (self.displacement[0], self.displacement[1]) } else { (0, 0) };
        let x0 = self.origin[0] as isize + dx;
        let y0 = self.origin[1] as isize + dy;
        let (x, y) = (x as isize, y as isize);
        x >= x0 && x < x0 + self.side as isize && y >= y0 && y < y0 + self.side as isize
    }

    fn render(&self, shifted: bool) -> Image {
        // background kept dark so the square is easy to find by thresholding
        let t = Texture::new(self.seed);
        Image::from_fn(self.width, self.height, |x, y| {
            if self.inside(x, y, shifted) {
                self.color
            } else {
                t.pixel(x as f64, y as f64).map(|v| v / 3)
            }
        })
    }

    pub fn images(&self) -> (Image, Image) {
        (self.render(false), self.render(true))
    }

    /// Ground-truth forward and backward flows.
    pub fn flows(&self) -> (FlowField, FlowField) {
        let d = [self.displacement[0] as f32, self.displacement[1] as f32];
        let fwd = FlowField::from_fn(self.width, self.height, |x, y| if self.inside(x, y, false) { d } else { [0.0, 0.0] });
        let back = FlowField::from_fn(self.width, self.height, |x, y| {
            if self.inside(x, y, true) {
                [-d[0], -d[1]]
            } else {
                [0.0, 0.0]
            }
        });
        (fwd, back)
    }

    /// Centroid of the square in image 1.
    pub fn centroid(&self) -> [f64; 2] {
        let half = (self.side as f64 - 1.0) / 2.0;
        [self.origin[0] as f64 + half, self.origin[1] as f64 + half]
    }
}

/// Still image with a foreground slab and two point landmarks: a red one on
/// the slab and a blue one on the black background, both on the horizontal
/// line through the image center.
#[derive(Clone, Debug)]
pub struct TwoLayerScene {
    pub width: usize,
    pub height: usize,
    /// Distance of each landmark from the center, in pixels.
    pub fg_radius: usize,
    pub bg_radius: usize,
}

impl Default for TwoLayerScene {
    fn default() -> Self {
        Self { width: 161, height: 121, fg_radius: 20, bg_radius: 40 }
    }
}

impl TwoLayerScene {
    pub const SLAB: Rgb = [60, 60, 60];
    pub const FG_MARK: Rgb = [255, 60, 60];
    pub const BG_MARK: Rgb = [0, 0, 255];

    pub fn center(&self) -> [usize; 2] {
        [(self.width - 1) / 2, (self.height - 1) / 2]
    }

    /// Foreground: the slab right of the center.
    pub fn mask(&self) -> Mask {
        let [cx, cy] = self.center();
        Mask::from_fn(self.width, self.height, |x, y| {
            x >= cx && x <= cx + self.fg_radius + 8 && y + 6 >= cy && y <= cy + 6
        })
    }

    pub fn image(&self) -> Image {
        let [cx, cy] = self.center();
        let mask = self.mask();
        let near = |x: usize, y: usize, lx: usize| x.abs_diff(lx) <= 1 && y.abs_diff(cy) <= 1;
        Image::from_fn(self.width, self.height, |x, y| {
            if near(x, y, cx + self.fg_radius) {
                Self::FG_MARK
            } else if near(x, y, cx - self.bg_radius) {
                Self::BG_MARK
            } else if mask.get(x, y) {
                Self::SLAB
            } else {
                [0, 0, 0]
            }
        })
    }

    /// Magnitude-style depth proxy: `fg` on the slab, `bg` elsewhere.
    pub fn magnitudes(&self, fg: f32, bg: f32) -> Vec<f32> {
        self.mask().bits().iter().map(|&m| if m { fg } else { bg }).collect()
    }
}

/// Intensity-weighted centroid of `weight(pixel)` over the image.
pub fn weighted_centroid(img: &Image, weight: impl Fn(Rgb) -> f64) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let w = weight(img.get(x, y)).max(0.0);
            sx += w * x as f64;
            sy += w * y as f64;
            sw += w;
        }
    }
    (sw > 0.0).then(|| [sx / sw, sy / sw])
}

/// Centroid of the pixels whose every channel is within `tol` of `color`.
pub fn color_centroid(img: &Image, color: Rgb, tol: u8) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.get(x, y);
            if (0..3).all(|c| p[c].abs_diff(color[c]) <= tol) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

/// Crop bounds `(x0, x1, y0, y1)` of the central `fraction` of a grid.
pub fn central_crop(width: usize, height: usize, fraction: f64) -> (usize, usize, usize, usize) {
    let mx = ((width as f64) * (1.0 - fraction) / 2.0).round() as usize;
    let my = ((height as f64) * (1.0 - fraction) / 2.0).round() as usize;
    (mx, width - mx, my, height - my)
}
