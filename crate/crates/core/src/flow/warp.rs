use crate::par;
use crate::raster::{ensure_dims, to_u8, FlowField, GrayImage, Image, RasterError};

/// `out(p) = img(p + flow(p))`, bilinear with clamp-to-edge.
pub fn warp_backward(img: &GrayImage, flow: &FlowField) -> Result<GrayImage, RasterError> {
    ensure_dims(img.dims(), flow.dims())?;
    let (w, h) = img.dims();
    let mut out = vec![0.0f32; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let [u, v] = flow.get(x, y);
            *o = img.sample_bilinear(x as f32 + u, y as f32 + v);
        }
    });
    GrayImage::new(w, h, out)
}

/// RGB variant of [`warp_backward`], rounded back to 8 bits.
pub fn warp_backward_image(img: &Image, flow: &FlowField) -> Result<Image, RasterError> {
    ensure_dims(img.dims(), flow.dims())?;
    let (w, h) = img.dims();
    let mut out = vec![[0u8; 3]; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let [u, v] = flow.get(x, y);
            let c = img.sample_bilinear(x as f32 + u, y as f32 + v);
            *o = c.map(to_u8);
        }
    });
    Image::new(w, h, out)
}
