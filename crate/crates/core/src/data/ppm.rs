//! Binary PPM (P6, maxval 255) images.

use std::fs;
use std::path::Path;

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;
use crate::vision::image::Image;

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((img.get(c, y, x) * 255.0).round() as u8);
            }
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CvlError::Format("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or(""));
    }
    if fields[0] != "P6" {
        return Err(CvlError::Format(format!("expected P6 magic, got {:?}", fields[0])));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| CvlError::Format(format!("bad PPM header field {s:?}")))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(CvlError::Format(format!("unsupported PPM {w}x{h} maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    if raster.len() != 3 * w * h {
        return Err(CvlError::Format(format!(
            "PPM raster has {} bytes, expected {}",
            raster.len(),
            3 * w * h
        )));
    }
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = f64::from(px[c]) / 255.0;
        }
    }
    Image::new(Tensor::new(&[3, h, w], data)?)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| CvlError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&fs::read(path).map_err(|e| CvlError::io(path, e))?)
}
