#![allow(dead_code)]

use std::path::{Path, PathBuf};

use vvs_core::raster::{save_image, write_flo};
use vvs_core::{FlowField, Image};

pub fn write_png(dir: &Path, name: &str, img: &Image) -> PathBuf {
    let p = dir.join(name);
    save_image(img, &p).unwrap();
    p
}

pub fn write_flow(dir: &Path, name: &str, flow: &FlowField) -> PathBuf {
    let p = dir.join(name);
    write_flo(flow, &p).unwrap();
    p
}

pub fn arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Mean endpoint error against a uniform displacement over the central 80%.
pub fn mean_epe(flow: &FlowField, truth: [f32; 2]) -> f64 {
    let (x0, x1, y0, y1) = vvs_core::synth::central_crop(flow.width(), flow.height(), 0.8);
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            let [u, v] = flow.get(x, y);
            sum += (((u - truth[0]).powi(2) + (v - truth[1]).powi(2)) as f64).sqrt();
            n += 1.0;
        }
    }
    sum / n
}
