use std::fmt;

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 64;

/// RGB image stored channel-first (`3 x H x W`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Tensor,
}

impl Image {
    pub fn new(pixels: Tensor) -> Result<Self> {
        match pixels.shape() {
            [3, h, w] if *h > 0 && *w > 0 => {}
            s => return Err(CvlError::shape(format!("image must be 3 x H x W, got {s:?}"))),
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CvlError::Format(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { pixels })
    }

    pub fn filled(h: usize, w: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in rgb {
            data.extend(std::iter::repeat_n(c.clamp(0.0, 1.0), h * w));
        }
        Image {
            pixels: Tensor::new(&[3, h, w], data).expect("positive dims"),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (h, w) = (self.height(), self.width());
        self.pixels.data_mut()[(c * h + y) * w + x] = v.clamp(0.0, 1.0);
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            x0: 0,
            y0: 0,
            x1: self.width(),
            y1: self.height(),
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }

    pub fn is_valid_for(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let iy = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        let inter = (ix * iy) as f64;
        let union = (self.area() + other.area()) as f64 - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Crops `bbox` and resamples it bilinearly back to the image's size.
///
/// Sampling aligns corners: output pixel `o` reads source coordinate
/// `x0 + o * (box_w - 1) / (W - 1)`, so a full-frame box is the identity
/// and the crop's corner pixels are preserved exactly.
pub fn crop_and_resize(img: &Image, bbox: &BoundingBox) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if !bbox.is_valid_for(w, h) {
        return Err(CvlError::shape(format!("box {bbox} outside {w}x{h} image")));
    }
    let xs = sample_axis(bbox.x0, bbox.width(), w);
    let ys = sample_axis(bbox.y0, bbox.height(), h);
    let mut out = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for &(y_lo, y_hi, fy) in &ys {
            for &(x_lo, x_hi, fx) in &xs {
                let top = img.get(c, y_lo, x_lo) * (1.0 - fx) + img.get(c, y_lo, x_hi) * fx;
                let bot = img.get(c, y_hi, x_lo) * (1.0 - fx) + img.get(c, y_hi, x_hi) * fx;
                out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Image::new(Tensor::new(&[3, h, w], out)?)
}

fn sample_axis(start: usize, extent: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let last = start + extent - 1;
    (0..out)
        .map(|o| {
            if extent == 1 || out == 1 {
                return (start, start, 0.0);
            }
            // exact rational position avoids drift on identity crops
            let num = o * (extent - 1);
            let den = out - 1;
            let lo = start + num / den;
            let frac = (num % den) as f64 / den as f64;
            (lo, (lo + 1).min(last), frac)
        })
        .collect()
}
