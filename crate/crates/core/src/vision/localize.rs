//! Gradient saliency and threshold-box localization.

use std::collections::VecDeque;

use crate::error::{CvlError, Result};
use crate::numeric::ops::argmax;
use crate::numeric::param::GradBuffer;
use crate::tensor::Tensor;
use crate::vision::encoder::{vision_backward, vision_forward_cached, VisionBackward, VisionParams};
use crate::vision::image::{BoundingBox, Image};

pub const DEFAULT_THRESHOLD_FRAC: f64 = 0.25;
pub const DEFAULT_MARGIN_FRAC: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizeConfig {
    pub threshold_frac: f64,
    pub margin_frac: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            threshold_frac: DEFAULT_THRESHOLD_FRAC,
            margin_frac: DEFAULT_MARGIN_FRAC,
        }
    }
}

/// A box plus whether it is the full-image fallback for an empty map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Localization {
    pub bbox: BoundingBox,
    pub fallback: bool,
}

/// `|d max_logit / d pixel|`, maxed over the colour channels. Shape `H x W`.
pub fn saliency_map(img: &Image, p: &VisionParams) -> Result<Tensor> {
    let cache = vision_forward_cached(img, p)?;
    let top = argmax(&cache.logits);
    let mut grad_logits = vec![0.0; cache.logits.len()];
    grad_logits[top] = 1.0;
    let mut scratch = GradBuffer::zeros_like(p);
    let g = vision_backward(
        &cache,
        p,
        Some(&grad_logits),
        None,
        VisionBackward {
            conv_params: false,
            input: true,
        },
        &mut scratch,
    )?
    .expect("input gradient requested");
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let d = g.data();
    let map = (0..plane)
        .map(|i| d[i].abs().max(d[plane + i].abs()).max(d[2 * plane + i].abs()))
        .collect();
    Tensor::new(&[h, w], map)
}

/// Binarizes at `threshold_frac * max`, keeps the largest 4-connected
/// component (first in row-major order on ties), and pads its tight box by
/// `round(margin_frac * side)` pixels, clamped to the image.
pub fn extract_box(saliency: &Tensor, cfg: &LocalizeConfig) -> Result<Localization> {
    let (h, w) = match saliency.shape() {
        [h, w] => (*h, *w),
        s => return Err(CvlError::shape(format!("saliency must be H x W, got {s:?}"))),
    };
    let full = BoundingBox::new(0, 0, w, h);
    let max = saliency.data().iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Ok(Localization {
            bbox: full,
            fallback: true,
        });
    }
    let cut = cfg.threshold_frac * max;
    let on: Vec<bool> = saliency.data().iter().map(|&v| v > 0.0 && v >= cut).collect();

    let mut seen = vec![false; h * w];
    let mut best: Option<(usize, BoundingBox)> = None;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            size += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            let mut visit = |j: usize| {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, BoundingBox::new(x0, y0, x1, y1)));
        }
    }
    let (_, tight) = best.expect("max > 0 implies an active pixel");
    let mx = (cfg.margin_frac * w as f64).round() as usize;
    let my = (cfg.margin_frac * h as f64).round() as usize;
    Ok(Localization {
        bbox: BoundingBox::new(
            tight.x0.saturating_sub(mx),
            tight.y0.saturating_sub(my),
            (tight.x1 + mx).min(w),
            (tight.y1 + my).min(h),
        ),
        fallback: false,
    })
}

/// Saliency followed by box extraction.
pub fn localize(img: &Image, p: &VisionParams, cfg: &LocalizeConfig) -> Result<Localization> {
    extract_box(&saliency_map(img, p)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map_with(points: &[(usize, usize)], h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(&[h, w]);
        for &(x, y) in points {
            t.data_mut()[y * w + x] = 1.0;
        }
        t
    }

    #[test]
    fn single_pixel_box() {
        let l = extract_box(&map_with(&[(10, 10)], 64, 64), &LocalizeConfig::default()).unwrap();
        assert!(!l.fallback);
        assert_eq!(l.bbox, BoundingBox::new(7, 7, 14, 14));
        assert!(l.bbox.contains(10, 10));
        let corner = extract_box(&map_with(&[(0, 63)], 64, 64), &LocalizeConfig::default()).unwrap();
        assert_eq!(corner.bbox, BoundingBox::new(0, 60, 4, 64));
    }

    #[test]
    fn uniform_map_is_full_frame() {
        let l = extract_box(&Tensor::full(&[64, 64], 0.3), &LocalizeConfig::default()).unwrap();
        assert_eq!(l.bbox, BoundingBox::new(0, 0, 64, 64));
        assert!(!l.fallback);
    }

    #[test]
    fn zero_map_falls_back() {
        let l = extract_box(&Tensor::zeros(&[64, 64]), &LocalizeConfig::default()).unwrap();
        assert!(l.fallback);
        assert_eq!(l.bbox, BoundingBox::new(0, 0, 64, 64));
    }

    #[test]
    fn picks_larger_component() {
        let mut pts = Vec::new();
        for y in 40..43 {
            for x in 40..43 {
                pts.push((x, y));
            }
        }
        pts.extend([(5, 5), (6, 5), (5, 6), (6, 6)]);
        let cfg = LocalizeConfig {
            margin_frac: 0.0,
            ..Default::default()
        };
        let l = extract_box(&map_with(&pts, 64, 64), &cfg).unwrap();
        assert_eq!(l.bbox, BoundingBox::new(40, 40, 43, 43));
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let cfg = LocalizeConfig {
            margin_frac: 0.0,
            ..Default::default()
        };
        let l = extract_box(&map_with(&[(2, 2), (3, 3)], 8, 8), &cfg).unwrap();
        assert_eq!(l.bbox, BoundingBox::new(2, 2, 3, 3));
    }

    #[test]
    fn zero_classifier_gives_zero_saliency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = VisionParams::init(4, &mut rng);
        p.cls_w.value.fill(0.0);
        let img = Image::filled(64, 64, [0.3, 0.6, 0.9]);
        let s = saliency_map(&img, &p).unwrap();
        assert_eq!(s.shape(), &[64, 64]);
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = VisionParams::init(4, &mut rng);
        let t = Tensor::randn(&[3, 64, 64], 0.2, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
        let s = saliency_map(&Image::new(t).unwrap(), &p).unwrap();
        assert!(s.data().iter().all(|&v| v >= 0.0));
        assert!(s.data().iter().any(|&v| v > 0.0));
    }
}
