//! Histogram-anchored color correction.
//!
//! Each channel of the source image is remapped by a three-piece curve: a
//! power segment below the 5% anchor, a linear segment between the 5% and
//! 95% anchors and a mirrored power segment above. The curve passes through
//! (0, 0), (s1, r1), (s2, r2) and (255, 255) where s* are the source
//! percentiles and r* the reference percentiles, and the power exponents are
//! chosen so the slope is continuous at both joints.

use serde::{Deserialize, Serialize};

use crate::raster::Image;

pub const LOW_PERCENTILE: f64 = 0.05;
pub const HIGH_PERCENTILE: f64 = 0.95;

#[derive(Debug, thiserror::Error)]
pub enum ColorError {
    #[error("channel {channel}: 5% and 95% percentiles coincide at {value}")]
    DegenerateHistogram { channel: usize, value: u8 },
    #[error("invalid curve parameters: {0}")]
    InvalidCurve(String),
    #[error("curve file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Smallest intensity `v` whose cumulative count reaches `p * pixel_count`.
pub fn percentile(image: &Image, channel: usize, p: f64) -> u8 {
    let mut hist = [0usize; 256];
    for px in image.pixels() {
        hist[px[channel] as usize] += 1;
    }
    let target = p * image.pixels().len() as f64;
    let mut cum = 0usize;
    for (v, count) in hist.iter().enumerate() {
        cum += count;
        if cum as f64 >= target {
            return v as u8;
        }
    }
    255
}

/// Anchor parameters of one channel, as stored in the JSON curve dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub s1: u8,
    pub s2: u8,
    pub r1: u8,
    pub r2: u8,
    pub gamma_low: f64,
    pub gamma_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCurve {
    params: CurveParams,
    table: [u8; 256],
}

impl ChannelCurve {
    /// Builds the curve through the anchors `(s1, r1)` and `(s2, r2)`.
    pub fn from_anchors(s1: u8, s2: u8, r1: u8, r2: u8) -> Result<Self, ColorError> {
        if s1 >= s2 {
            return Err(ColorError::InvalidCurve(format!("s1 ({s1}) must be below s2 ({s2})")));
        }
        if r1 > r2 {
            return Err(ColorError::InvalidCurve(format!("r1 ({r1}) must not exceed r2 ({r2})")));
        }
        let m = (r2 as f64 - r1 as f64) / (s2 as f64 - s1 as f64);
        let gamma_low = if r1 > 0 && s1 > 0 { m * s1 as f64 / r1 as f64 } else { 1.0 };
        let gamma_high = if r2 < 255 && s2 < 255 { m * (255.0 - s2 as f64) / (255.0 - r2 as f64) } else { 1.0 };
        let mut curve = Self {
            params: CurveParams { s1, s2, r1, r2, gamma_low, gamma_high },
            table: [0; 256],
        };
        let mut running = 0u8;
        for x in 0..256 {
            let v = (curve.eval_continuous(x as f64) + 0.5).floor().clamp(0.0, 255.0) as u8;
            running = running.max(v);
            curve.table[x] = running;
        }
        curve.table[0] = 0;
        curve.table[255] = 255;
        Ok(curve)
    }

    pub fn identity() -> Self {
        let mut table = [0u8; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        Self {
            params: CurveParams { s1: 0, s2: 255, r1: 0, r2: 255, gamma_low: 1.0, gamma_high: 1.0 },
            table,
        }
    }

    pub fn params(&self) -> &CurveParams {
        &self.params
    }

    pub fn table(&self) -> &[u8; 256] {
        &self.table
    }

    fn slope(&self) -> f64 {
        let p = &self.params;
        (p.r2 as f64 - p.r1 as f64) / (p.s2 as f64 - p.s1 as f64)
    }

    /// The unrounded curve.
    pub fn eval_continuous(&self, x: f64) -> f64 {
        let p = &self.params;
        let (s1, s2, r1, r2) = (p.s1 as f64, p.s2 as f64, p.r1 as f64, p.r2 as f64);
        let m = self.slope();
        if x < s1 {
            if p.r1 == 0 {
                // linear segment extended down, floored at black
                (r1 + m * (x - s1)).max(0.0)
            } else {
                r1 * (x / s1).powf(p.gamma_low)
            }
        } else if x <= s2 {
            r1 + m * (x - s1)
        } else if p.r2 == 255 {
            (r2 + m * (x - s2)).min(255.0)
        } else {
            255.0 - (255.0 - r2) * ((255.0 - x) / (255.0 - s2)).powf(p.gamma_high)
        }
    }

    /// Analytic derivative of the lower power segment.
    pub fn lower_derivative(&self, x: f64) -> f64 {
        let p = &self.params;
        if p.r1 == 0 || p.s1 == 0 {
            return self.slope();
        }
        let s1 = p.s1 as f64;
        p.r1 as f64 * p.gamma_low / s1 * (x / s1).powf(p.gamma_low - 1.0)
    }

    /// Analytic derivative of the upper power segment.
    pub fn upper_derivative(&self, x: f64) -> f64 {
        let p = &self.params;
        if p.r2 == 255 || p.s2 == 255 {
            return self.slope();
        }
        let s2 = p.s2 as f64;
        (255.0 - p.r2 as f64) * p.gamma_high / (255.0 - s2) * ((255.0 - x) / (255.0 - s2)).powf(p.gamma_high - 1.0)
    }

    pub fn middle_slope(&self) -> f64 {
        self.slope()
    }

    #[inline]
    pub fn eval(&self, x: u8) -> u8 {
        self.table[x as usize]
    }
}

/// Per-channel (R, G, B) transfer curve.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferCurve {
    channels: [ChannelCurve; 3],
}

#[derive(Serialize, Deserialize)]
struct CurveDump {
    r: CurveParams,
    g: CurveParams,
    b: CurveParams,
}

impl TransferCurve {
    pub fn new(channels: [ChannelCurve; 3]) -> Self {
        Self { channels }
    }

    pub fn identity() -> Self {
        Self { channels: [ChannelCurve::identity(), ChannelCurve::identity(), ChannelCurve::identity()] }
    }

    pub fn channel(&self, c: usize) -> &ChannelCurve {
        &self.channels[c]
    }

    pub fn to_json(&self) -> String {
        let [r, g, b] = self.channels.each_ref().map(|c| c.params);
        serde_json::to_string_pretty(&CurveDump { r, g, b }).expect("plain data serializes")
    }

    /// Rebuilds a curve from its JSON dump. Lookup tables are recomputed
    /// from the anchors, so the result is identical to the fitted curve.
    pub fn from_json(json: &str) -> Result<Self, ColorError> {
        let dump: CurveDump = serde_json::from_str(json)?;
        let build = |p: CurveParams| {
            if (p.s1, p.s2, p.r1, p.r2) == (0, 255, 0, 255) {
                Ok(ChannelCurve::identity())
            } else {
                ChannelCurve::from_anchors(p.s1, p.s2, p.r1, p.r2)
            }
        };
        Ok(Self { channels: [build(dump.r)?, build(dump.g)?, build(dump.b)?] })
    }
}

/// Fits the curve that maps `src` colors onto `reference` colors.
pub fn fit_transfer(src: &Image, reference: &Image) -> Result<TransferCurve, ColorError> {
    let fit = |c: usize| -> Result<ChannelCurve, ColorError> {
        let s1 = percentile(src, c, LOW_PERCENTILE);
        let s2 = percentile(src, c, HIGH_PERCENTILE);
        if s1 == s2 {
            return Err(ColorError::DegenerateHistogram { channel: c, value: s1 });
        }
        let r1 = percentile(reference, c, LOW_PERCENTILE);
        let r2 = percentile(reference, c, HIGH_PERCENTILE);
        ChannelCurve::from_anchors(s1, s2, r1, r2)
    };
    Ok(TransferCurve { channels: [fit(0)?, fit(1)?, fit(2)?] })
}

pub fn curve_eval(curve: &TransferCurve, channel: usize, x: u8) -> u8 {
    curve.channels[channel].eval(x)
}

pub fn apply_transfer(image: &Image, curve: &TransferCurve) -> Image {
    let pixels = image
        .pixels()
        .iter()
        .map(|p| [curve.channels[0].eval(p[0]), curve.channels[1].eval(p[1]), curve.channels[2].eval(p[2])])
        .collect();
    Image::new(image.width(), image.height(), pixels).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp() -> Image {
        Image::from_fn(256, 1, |x, _| [x as u8; 3])
    }

    /// Sort-based percentile, independent of the histogram path.
    fn percentile_by_sort(values: &[u8], p: f64) -> u8 {
        let mut v = values.to_vec();
        v.sort_unstable();
        let n = v.len() as f64;
        // smallest value whose rank count reaches p*n
        let k = (p * n).ceil().max(1.0) as usize;
        v[k - 1]
    }

    #[test]
    fn percentile_of_constant_image() {
        let img = Image::filled(5, 4, [100, 100, 100]);
        for p in [0.01, 0.05, 0.5, 0.95, 0.999] {
            assert_eq!(percentile(&img, 1, p), 100);
        }
    }

    #[test]
    fn percentile_of_ramp_matches_sort_oracle() {
        let img = ramp();
        let values: Vec<u8> = img.pixels().iter().map(|p| p[0]).collect();
        assert_eq!(percentile_by_sort(&values, 0.05), 12);
        // cumulative count at 242 is 243 < 0.95 * 256 = 243.2, so the
        // smallest qualifying intensity is 243
        assert_eq!(percentile_by_sort(&values, 0.95), 243);
        assert_eq!(percentile(&img, 0, 0.05), 12);
        assert_eq!(percentile(&img, 0, 0.95), 243);
    }

    #[test]
    fn self_fit_is_identity_within_one_level() {
        let img = crate::synth::texture(64, 64, 5);
        let curve = fit_transfer(&img, &img).unwrap();
        for c in 0..3 {
            for x in 0..=255u8 {
                assert!(curve_eval(&curve, c, x).abs_diff(x) <= 1);
            }
        }
    }

    #[test]
    fn halved_source_doubles_on_linear_segment() {
        let reference = Image::from_fn(200, 1, |x, _| [(x + 20) as u8; 3]);
        let src = Image::from_fn(200, 1, |x, _| [((x + 20) / 2) as u8; 3]);
        let curve = fit_transfer(&src, &reference).unwrap();
        let p = *curve.channel(0).params();
        let m = (p.r2 as f64 - p.r1 as f64) / (p.s2 as f64 - p.s1 as f64);
        // percentiles of the halved ramp sit at half the reference ones
        assert!((m - 2.0).abs() < 0.05, "slope {m}");
        for x in p.s1..=p.s2 {
            let direct = p.r1 as f64 + m * (x as f64 - p.s1 as f64);
            assert!((curve_eval(&curve, 0, x) as f64 - direct).abs() <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn constant_source_is_degenerate() {
        let src = Image::filled(8, 8, [40, 50, 60]);
        let err = fit_transfer(&src, &ramp()).unwrap_err();
        assert!(matches!(err, ColorError::DegenerateHistogram { channel: 0, value: 40 }));
    }

    #[test]
    fn curve_eval_anchors_and_midpoint() {
        let c = ChannelCurve::from_anchors(20, 220, 35, 200).unwrap();
        assert_eq!(c.eval(20), 35);
        assert_eq!(c.eval(220), 200);
        assert_eq!(c.eval(0), 0);
        assert_eq!(c.eval(255), 255);
        let mid = c.eval(120) as i32;
        assert!((mid - (35 + 200) / 2).abs() <= 1);
    }

    #[test]
    fn apply_identity_and_black() {
        let img = crate::synth::texture(16, 16, 2);
        assert_eq!(apply_transfer(&img, &TransferCurve::identity()), img);
        let curve = TransferCurve::new([
            ChannelCurve::from_anchors(30, 200, 10, 240).unwrap(),
            ChannelCurve::from_anchors(5, 90, 60, 61).unwrap(),
            ChannelCurve::from_anchors(1, 254, 0, 255).unwrap(),
        ]);
        let black = Image::filled(4, 4, [0, 0, 0]);
        assert_eq!(apply_transfer(&black, &curve), black);
    }

    #[test]
    fn gamma_distortion_is_undone() {
        let reference = crate::synth::texture(128, 128, 9);
        let distort = |v: u8| (255.0 * (v as f64 / 255.0).powf(1.4)).round() as u8;
        let distorted = Image::new(
            128,
            128,
            reference.pixels().iter().map(|p| p.map(distort)).collect(),
        )
        .unwrap();
        let curve = fit_transfer(&distorted, &reference).unwrap();
        let fixed = apply_transfer(&distorted, &curve);
        let (mut sum, mut n) = (0.0, 0usize);
        for (a, b) in fixed.pixels().iter().zip(reference.pixels()) {
            for c in 0..3 {
                sum += (a[c] as f64 - b[c] as f64).abs();
                n += 1;
            }
        }
        assert!(sum / n as f64 <= 3.0, "mae {}", sum / n as f64);
    }

    #[test]
    fn degenerate_guards_keep_endpoints() {
        let c = ChannelCurve::from_anchors(40, 200, 0, 255).unwrap();
        assert_eq!(c.eval(0), 0);
        assert_eq!(c.eval(10), 0);
        assert_eq!(c.eval(255), 255);
        let c = ChannelCurve::from_anchors(0, 255, 30, 200).unwrap();
        assert_eq!(c.eval(0), 0);
        assert_eq!(c.eval(255), 255);
    }

    #[test]
    fn json_round_trip_rebuilds_tables() {
        let img = crate::synth::texture(32, 32, 1);
        let reference = crate::synth::texture(32, 32, 2);
        let curve = fit_transfer(&img, &reference).unwrap();
        assert_eq!(TransferCurve::from_json(&curve.to_json()).unwrap(), curve);
        assert!(curve.to_json().contains("gamma_low"));
    }

    proptest! {
        #[test]
        fn fitted_curves_are_monotone_anchored_and_c1(
            s1 in 0u8..250, ds in 1u8..120, r1 in 0u8..250, dr in 0u8..120,
        ) {
            let s2 = s1.saturating_add(ds);
            let r2 = r1.saturating_add(dr);
            prop_assume!(s1 < s2);
            let c = ChannelCurve::from_anchors(s1, s2, r1, r2).unwrap();
            let t = c.table();
            prop_assert_eq!(t[0], 0);
            prop_assert_eq!(t[255], 255);
            prop_assert!(t.windows(2).all(|w| w[0] <= w[1]));
            if s1 > 0 { prop_assert_eq!(t[s1 as usize], r1); }
            if s2 < 255 { prop_assert_eq!(t[s2 as usize], r2); }
            // C0 at the joints, on the unrounded curve
            let eps = 1e-7;
            if s1 > 0 {
                prop_assert!((c.eval_continuous(s1 as f64 - eps) - c.eval_continuous(s1 as f64)).abs() < 1.0);
            }
            if s2 < 255 {
                prop_assert!((c.eval_continuous(s2 as f64 + eps) - c.eval_continuous(s2 as f64)).abs() < 1.0);
            }
            // C1: closed-form slopes agree at both joints
            if r1 > 0 && s1 > 0 {
                prop_assert!((c.lower_derivative(s1 as f64) - c.middle_slope()).abs() < 1e-9);
            }
            if r2 < 255 && s2 < 255 {
                prop_assert!((c.upper_derivative(s2 as f64) - c.middle_slope()).abs() < 1e-9);
            }
        }
    }
}
