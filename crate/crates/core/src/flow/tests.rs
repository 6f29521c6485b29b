use super::*;
use crate::synth::{central_crop, shifted_pair, Texture};

fn gray_pair(size: usize, d: [f64; 2], seed: u64) -> (GrayImage, GrayImage) {
    let (a, b) = shifted_pair(size, size, d, seed);
    (a.to_gray(), b.to_gray())
}

/// Endpoint errors against a uniform ground truth over the central 80%.
fn endpoint_errors(flow: &FlowField, truth: [f32; 2]) -> Vec<f64> {
    let (x0, x1, y0, y1) = central_crop(flow.width(), flow.height(), 0.8);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let [u, v] = flow.get(x, y);
            out.push((((u - truth[0]).powi(2) + (v - truth[1]).powi(2)) as f64).sqrt());
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * q).round() as usize]
}

fn crop_mean(flow: &FlowField) -> [f64; 2] {
    let (x0, x1, y0, y1) = central_crop(flow.width(), flow.height(), 0.8);
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let [u, v] = flow.get(x, y);
            su += u as f64;
            sv += v as f64;
            n += 1.0;
        }
    }
    [su / n, sv / n]
}

#[test]
fn identical_images_give_exact_zero() {
    let a = Texture::new(4).render(48, 40, [0.0, 0.0]).to_gray();
    let f = horn_schunck_level(&a, &a, &FlowField::zeros(48, 40), &FlowParams::default()).unwrap();
    assert!(f.vectors().iter().all(|v| *v == [0.0, 0.0]));
    let f = pyramidal_flow(&a, &a, &FlowParams::default()).unwrap();
    assert!(f.vectors().iter().all(|v| *v == [0.0, 0.0]));
}

#[test]
fn single_level_one_pixel_shift() {
    let (a, b) = gray_pair(64, [1.0, 0.0], 21);
    let f = horn_schunck_level(&a, &b, &FlowField::zeros(64, 64), &FlowParams::default()).unwrap();
    let [mu, mv] = crop_mean(&f);
    assert!((0.8..=1.2).contains(&mu), "mean u {mu}");
    assert!((-0.2..=0.2).contains(&mv), "mean v {mv}");
}

#[test]
fn huge_alpha_gives_uniform_field() {
    let (a, b) = gray_pair(64, [1.0, 0.0], 21);
    let params = FlowParams { alpha: 1e6, ..FlowParams::default() };
    let f = horn_schunck_level(&a, &b, &FlowField::zeros(64, 64), &params).unwrap();
    let m = f.mean();
    for v in f.vectors() {
        let dev = ((v[0] as f64 - m[0]).powi(2) + (v[1] as f64 - m[1]).powi(2)).sqrt();
        assert!(dev < 0.05);
    }
}

#[test]
fn dimension_mismatch() {
    let a = GrayImage::filled(8, 8, 0.0);
    let b = GrayImage::filled(9, 8, 0.0);
    assert!(matches!(
        horn_schunck_level(&a, &b, &FlowField::zeros(8, 8), &FlowParams::default()),
        Err(FlowError::Raster(RasterError::DimensionMismatch { .. }))
    ));
    assert!(pyramidal_flow(&a, &b, &FlowParams::default()).is_err());
    let img = Image::filled(8, 8, [0; 3]);
    let img2 = Image::filled(8, 9, [0; 3]);
    assert!(bidirectional_flow(&img, &img2, &FlowParams::default()).is_err());
}

#[test]
fn invalid_params_rejected() {
    let a = GrayImage::filled(8, 8, 0.0);
    let p = FlowParams { alpha: 0.0, ..FlowParams::default() };
    assert!(matches!(pyramidal_flow(&a, &a, &p), Err(FlowError::InvalidParameter(_))));
    let p = FlowParams { levels: 0, ..FlowParams::default() };
    assert!(pyramidal_flow(&a, &a, &p).is_err());
}

#[test]
fn pyramidal_three_pixel_shift() {
    let (a, b) = gray_pair(128, [3.0, 0.0], 5);
    let f = pyramidal_flow(&a, &b, &FlowParams::default()).unwrap();
    let epe = endpoint_errors(&f, [3.0, 0.0]);
    assert!(mean(&epe) <= 0.3, "mean epe {}", mean(&epe));
}

#[test]
fn pyramidal_diagonal_shift() {
    let (a, b) = gray_pair(128, [3.0, 1.5], 5);
    let f = pyramidal_flow(&a, &b, &FlowParams::default()).unwrap();
    let epe = endpoint_errors(&f, [3.0, 1.5]);
    assert!(quantile(&epe, 0.9) <= 0.5, "p90 epe {}", quantile(&epe, 0.9));
}

#[test]
fn relaxation_reports_are_finite_and_bounded() {
    let (a, b) = gray_pair(64, [2.0, 1.0], 8);
    let params = FlowParams::default();
    let (_, reports) = pyramidal_flow_report(&a, &b, &params).unwrap();
    assert!(!reports.is_empty());
    for r in reports {
        assert!(r.sweeps >= 1 && r.sweeps <= params.iterations);
        assert!(r.final_update.is_finite());
    }
}

#[test]
fn bidirectional_flows_are_symmetric() {
    let (a, b) = shifted_pair(128, 128, [3.0, 1.5], 5);
    let (fwd, back) = bidirectional_flow(&a, &b, &FlowParams::default()).unwrap();
    let mf = crop_mean(&fwd);
    let mb = crop_mean(&back);
    assert!((mf[0] + mb[0]).abs() <= 0.3 && (mf[1] + mb[1]).abs() <= 0.3, "{mf:?} {mb:?}");

    // forward-backward consistency on the central crop
    let (x0, x1, y0, y1) = central_crop(128, 128, 0.8);
    let (mut ok, mut n) = (0, 0);
    for y in y0..y1 {
        for x in x0..x1 {
            let f = fwd.get(x, y);
            let r = back.sample_bilinear(x as f32 + f[0], y as f32 + f[1]);
            if ((f[0] + r[0]).powi(2) + (f[1] + r[1]).powi(2)).sqrt() <= 0.5 {
                ok += 1;
            }
            n += 1;
        }
    }
    assert!(ok as f64 >= 0.9 * n as f64, "{ok}/{n}");
}

#[test]
fn identical_color_images_give_zero_both_ways() {
    let img = Texture::new(3).render(40, 40, [0.0, 0.0]);
    let (f, b) = bidirectional_flow(&img, &img, &FlowParams::default()).unwrap();
    assert!(f.vectors().iter().chain(b.vectors()).all(|v| *v == [0.0, 0.0]));
}

#[test]
fn warp_backward_cases() {
    let ramp = GrayImage::from_fn(6, 2, |x, _| x as f32);
    assert_eq!(warp_backward(&ramp, &FlowField::zeros(6, 2)).unwrap(), ramp);
    let shifted = warp_backward(&ramp, &FlowField::uniform(6, 2, [1.0, 0.0])).unwrap();
    for y in 0..2 {
        for x in 0..6 {
            assert_eq!(shifted.get(x, y), (x + 1).min(5) as f32);
        }
    }
    assert!(warp_backward(&ramp, &FlowField::zeros(5, 2)).is_err());
}

#[test]
fn warping_second_image_back_matches_first() {
    let (a, b) = gray_pair(128, [3.0, 1.5], 5);
    let f = pyramidal_flow(&a, &b, &FlowParams::default()).unwrap();
    let back = warp_backward(&b, &f).unwrap();
    let (x0, x1, y0, y1) = central_crop(128, 128, 0.8);
    let (mut sum, mut n) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            sum += (back.get(x, y) - a.get(x, y)).abs() as f64;
            n += 1.0;
        }
    }
    assert!(sum / n <= 0.02, "mae {}", sum / n);
}

#[test]
fn shift_equivariance() {
    let t = Texture::new(17);
    let render = |off: [f64; 2]| t.render(96, 96, off).to_gray();
    let d = [2.0, -1.0];
    let f1 = pyramidal_flow(&render([0.0, 0.0]), &render(d), &FlowParams::default()).unwrap();
    let off = [4.0, 3.0];
    let f2 = pyramidal_flow(&render(off), &render([off[0] + d[0], off[1] + d[1]]), &FlowParams::default()).unwrap();
    // content moved by `off`, so the interior flow moves along with it
    let (x0, x1, y0, y1) = central_crop(96, 96, 0.6);
    for y in y0..y1 {
        for x in x0..x1 {
            let a = f1.get(x, y);
            let b = f2.get(x + 4, y + 3);
            assert!((a[0] - b[0]).abs() < 0.1 && (a[1] - b[1]).abs() < 0.1, "{a:?} {b:?}");
        }
    }
}

#[test]
fn luminance_scaling_barely_moves_flow() {
    let (a, b) = gray_pair(96, [2.0, 1.0], 12);
    let f1 = pyramidal_flow(&a, &b, &FlowParams::default()).unwrap();
    let f2 = pyramidal_flow(&a.scaled(0.8), &b.scaled(0.8), &FlowParams::default()).unwrap();
    let (x0, x1, y0, y1) = central_crop(96, 96, 0.8);
    for y in y0..y1 {
        for x in x0..x1 {
            let p = f1.get(x, y);
            let q = f2.get(x, y);
            assert!((p[0] - q[0]).abs() < 0.1 && (p[1] - q[1]).abs() < 0.1);
        }
    }
}

#[test]
fn upsampling_doubles_vectors() {
    let coarse = FlowField::uniform(8, 8, [1.5, -0.5]);
    let fine = upsample_flow(&coarse, 16, 15);
    assert_eq!(fine.dims(), (16, 15));
    assert!(fine.vectors().iter().all(|v| *v == [3.0, -1.0]));
}
