//! Image and flow file formats: binary PPM (P6), 8-bit PNG and Middlebury
//! `.flo`.

use std::fs;
use std::io::{self, Cursor};
use std::path::Path;

use super::{FlowField, Image, RasterError};

/// Middlebury `.flo` tag, the bytes "PIEH" read as a little-endian f32.
pub const FLO_MAGIC: f32 = 202021.25;

fn read_file(path: &Path) -> Result<Vec<u8>, RasterError> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => RasterError::FileNotFound(path.to_path_buf()),
        _ => RasterError::Io(e),
    })
}

/// Loads a binary PPM (P6, maxval 255) or PNG file. The format is detected
/// from the content, not the extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, RasterError> {
    let bytes = read_file(path.as_ref())?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, RasterError> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else {
        Err(RasterError::UnsupportedFormat("expected a P6 PPM or PNG file".into()))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize, RasterError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(RasterError::CorruptData("malformed PPM header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| RasterError::CorruptData("PPM header number out of range".into()))
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Image, RasterError> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(RasterError::UnsupportedFormat(format!("PPM maxval {maxval}, only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the payload
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(RasterError::CorruptData("missing PPM payload".into())),
    }
    if width == 0 || height == 0 {
        return Err(RasterError::CorruptData(format!("PPM dimensions {width}x{height}")));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| RasterError::CorruptData("PPM dimensions overflow".into()))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(RasterError::CorruptData(format!(
            "PPM payload has {} bytes, expected {need}",
            payload.len()
        )));
    }
    let pixels = payload[..need].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Image::new(width, height, pixels)
}

fn decode_png(bytes: &[u8]) -> Result<Image, RasterError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| RasterError::CorruptData(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0).collect();
    Image::new(w as usize, h as usize, pixels)
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len() * 3);
    out.extend_from_slice(header.as_bytes());
    for p in image.pixels() {
        out.extend_from_slice(p);
    }
    out
}

/// PNG encoding with fixed compression and filter settings, so identical
/// images always produce identical bytes.
pub fn encode_png(image: &Image) -> Vec<u8> {
    use image::codecs::png::{CompressionType, FilterType, PngEncoder};
    use image::ImageEncoder;

    let raw: Vec<u8> = image.pixels().iter().flatten().copied().collect();
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(&raw, image.width() as u32, image.height() as u32, image::ExtendedColorType::Rgb8)
        .expect("encoding into memory cannot fail");
    out.into_inner()
}

/// Saves as PNG when the extension is `.png`, otherwise as binary PPM.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(image) } else { encode_ppm(image) };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.vectors().len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in flow.vectors() {
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, RasterError> {
    if bytes.len() < 12 {
        return Err(RasterError::CorruptData(".flo header truncated".into()));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4-byte slice") };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(RasterError::BadMagic(magic));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(RasterError::CorruptData(format!(".flo dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let need = width * height * 8;
    let payload = &bytes[12..];
    if payload.len() < need {
        return Err(RasterError::CorruptData(format!(
            ".flo payload has {} bytes, expected {need}",
            payload.len()
        )));
    }
    let vectors = payload[..need]
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect();
    FlowField::new(width, height, vectors).map_err(|e| match e {
        RasterError::NonFinite => RasterError::CorruptData(".flo contains non-finite vectors".into()),
        other => other,
    })
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<(), RasterError> {
    fs::write(path, encode_flo(flow))?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField, RasterError> {
    decode_flo(&read_file(path.as_ref())?)
}
