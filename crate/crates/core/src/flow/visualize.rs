//! Middlebury color-wheel rendering of flow fields.

use crate::raster::{FlowField, Image, Rgb};

// hue segment lengths: red-yellow, yellow-green, green-cyan, cyan-blue,
// blue-magenta, magenta-red
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn wheel() -> Vec<[f32; 3]> {
    let mut colors = Vec::with_capacity(SEGMENTS.iter().sum());
    let ramps: [([f32; 3], usize, f32); 6] = [
        ([255.0, 0.0, 0.0], 1, 1.0),
        ([255.0, 255.0, 0.0], 0, -1.0),
        ([0.0, 255.0, 0.0], 2, 1.0),
        ([0.0, 255.0, 255.0], 1, -1.0),
        ([0.0, 0.0, 255.0], 0, 1.0),
        ([255.0, 0.0, 255.0], 2, -1.0),
    ];
    for (&len, (start, channel, dir)) in SEGMENTS.iter().zip(ramps) {
        for i in 0..len {
            let mut c = start;
            let t = 255.0 * i as f32 / len as f32;
            c[channel] = if dir > 0.0 { t } else { 255.0 - t };
            colors.push(c);
        }
    }
    colors
}

/// Color of a flow vector already normalized so that |(u, v)| <= 1 maps
/// inside the wheel.
pub fn flow_wheel_color(u: f32, v: f32) -> Rgb {
    let wheel = wheel();
    let ncols = wheel.len() as f32;
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f32::consts::PI;
    let fk = (a + 1.0) / 2.0 * (ncols - 1.0);
    let k0 = fk.floor() as usize % wheel.len();
    let k1 = (k0 + 1) % wheel.len();
    let f = fk - fk.floor();
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        out[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Renders a flow field, normalized by its largest vector norm.
pub fn flow_to_color(flow: &FlowField) -> Image {
    let max_rad = flow
        .vectors()
        .iter()
        .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
        .fold(0.0f32, f32::max)
        .max(1e-6);
    Image::from_fn(flow.width(), flow.height(), |x, y| {
        let [u, v] = flow.get(x, y);
        flow_wheel_color(u / max_rad, v / max_rad)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_has_55_hues() {
        assert_eq!(wheel().len(), 55);
    }

    #[test]
    fn zero_flow_is_white() {
        let img = flow_to_color(&FlowField::zeros(3, 3));
        assert!(img.pixels().iter().all(|p| *p == [255, 255, 255]));
    }

    #[test]
    fn opposite_directions_differ() {
        assert_ne!(flow_wheel_color(1.0, 0.0), flow_wheel_color(-1.0, 0.0));
        assert_ne!(flow_wheel_color(0.0, 1.0), flow_wheel_color(0.0, -1.0));
    }
}
