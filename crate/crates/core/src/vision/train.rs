//! Vision-stream training: cross-entropy with RMSprop, first on the
//! original images, then on originals plus their saliency crops.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CvlError, Result};
use crate::numeric::ops::{argmax, softmax_cross_entropy};
use crate::numeric::optim::{rmsprop_step, RmspropState};
use crate::numeric::param::{GradBuffer, ParameterSet};
use crate::vision::encoder::{vision_backward, vision_forward_cached, VisionBackward, VisionParams};
use crate::vision::image::{crop_and_resize, BoundingBox, Image};
use crate::vision::localize::{localize, LocalizeConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct VisionTrainConfig {
    pub learning_rate: f64,
    pub minibatch: usize,
    /// Epochs on original images only.
    pub epochs: usize,
    /// Further epochs on originals plus saliency crops.
    pub crop_epochs: usize,
    /// Each crop-epoch box edge moves by up to this fraction of the box side.
    pub crop_jitter: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`;
    /// the rate falls linearly across all epochs.
    pub final_lr_frac: f64,
    pub seed: u64,
    pub localize: LocalizeConfig,
}

impl Default for VisionTrainConfig {
    fn default() -> Self {
        VisionTrainConfig {
            learning_rate: 1e-3,
            minibatch: 20,
            epochs: 12,
            crop_epochs: 6,
            crop_jitter: 0.15,
            final_lr_frac: 1.0,
            seed: 0,
            localize: LocalizeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn train_vision(
    images: &[Image],
    labels: &[usize],
    num_classes: usize,
    cfg: &VisionTrainConfig,
) -> Result<(VisionParams, Vec<VisionEpoch>)> {
    if images.len() != labels.len() {
        return Err(CvlError::LengthMismatch(format!(
            "{} images against {} labels",
            images.len(),
            labels.len()
        )));
    }
    if images.is_empty() || cfg.minibatch == 0 {
        return Err(CvlError::Config("vision training needs images and a positive minibatch".into()));
    }
    if !(cfg.final_lr_frac > 0.0 && cfg.final_lr_frac <= 1.0) {
        return Err(CvlError::Config(format!("final_lr_frac must lie in (0, 1], got {}", cfg.final_lr_frac)));
    }
    if !(0.0..0.5).contains(&cfg.crop_jitter) {
        return Err(CvlError::Config(format!("crop_jitter must lie in [0, 0.5), got {}", cfg.crop_jitter)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(CvlError::Index {
            index: bad,
            len: num_classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = VisionParams::init(num_classes, &mut rng);
    let mut state = RmspropState::new(cfg.learning_rate);
    let mut log = Vec::new();

    let total = cfg.epochs + cfg.crop_epochs;
    let schedule = |epoch: usize| {
        let t = if total > 1 { epoch as f64 / (total - 1) as f64 } else { 0.0 };
        cfg.learning_rate * (1.0 - t * (1.0 - cfg.final_lr_frac))
    };
    let originals: Vec<&Image> = images.iter().collect();
    for _ in 0..cfg.epochs {
        state.learning_rate = schedule(log.len());
        let ep = run_epoch(&mut params, &mut state, &originals, labels, cfg.minibatch, &mut rng)?;
        log.push(VisionEpoch {
            epoch: log.len() + 1,
            ..ep
        });
    }
    if cfg.crop_epochs > 0 {
        let boxes = images
            .iter()
            .map(|img| Ok(localize(img, &params, &cfg.localize)?.bbox))
            .collect::<Result<Vec<_>>>()?;
        let both_labels: Vec<usize> = labels.iter().chain(labels).copied().collect();
        for _ in 0..cfg.crop_epochs {
            let crops = images
                .iter()
                .zip(&boxes)
                .map(|(img, b)| crop_and_resize(img, &jitter_box(b, cfg.crop_jitter, img.width(), img.height(), &mut rng)))
                .collect::<Result<Vec<_>>>()?;
            let both: Vec<&Image> = images.iter().chain(&crops).collect();
            state.learning_rate = schedule(log.len());
            let ep = run_epoch(&mut params, &mut state, &both, &both_labels, cfg.minibatch, &mut rng)?;
            log.push(VisionEpoch {
                epoch: log.len() + 1,
                ..ep
            });
        }
    }
    Ok((params, log))
}

/// Moves each edge of `b` independently by up to `frac` of its side,
/// keeping the box inside the image and at least one pixel wide.
fn jitter_box(b: &BoundingBox, frac: f64, width: usize, height: usize, rng: &mut ChaCha8Rng) -> BoundingBox {
    if frac <= 0.0 {
        return *b;
    }
    let mut edge = |v: usize, side: usize, limit: usize| -> usize {
        let reach = frac * side as f64;
        let moved = v as f64 + rng.random_range(-reach..=reach);
        (moved.round().max(0.0) as usize).min(limit)
    };
    let (x0, x1) = (edge(b.x0, b.width(), width), edge(b.x1, b.width(), width));
    let (y0, y1) = (edge(b.y0, b.height(), height), edge(b.y1, b.height(), height));
    let fix = |lo: usize, hi: usize, limit: usize| if lo < hi { (lo, hi) } else if lo < limit { (lo, lo + 1) } else { (limit - 1, limit) };
    let (x0, x1) = fix(x0, x1, width);
    let (y0, y1) = fix(y0, y1, height);
    BoundingBox::new(x0, y0, x1, y1)
}

fn run_epoch(
    params: &mut VisionParams,
    state: &mut RmspropState,
    images: &[&Image],
    labels: &[usize],
    minibatch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<VisionEpoch> {
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(rng);
    let (mut total, mut correct) = (0.0, 0usize);
    for batch in order.chunks(minibatch) {
        let mut grads = GradBuffer::zeros_like(params);
        for &i in batch {
            let cache = vision_forward_cached(images[i], params)?;
            let (loss, gl) = softmax_cross_entropy(&cache.logits, labels[i])?;
            total += loss;
            correct += usize::from(argmax(&cache.logits) == labels[i]);
            vision_backward(
                &cache,
                params,
                Some(&gl),
                None,
                VisionBackward {
                    conv_params: true,
                    input: false,
                },
                &mut grads,
            )?;
        }
        grads.scale(1.0 / batch.len() as f64);
        grads.store_into(params);
        rmsprop_step(params, state);
    }
    params.zero_grads();
    let n = images.len() as f64;
    Ok(VisionEpoch {
        epoch: 0,
        loss: total / n,
        accuracy: correct as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_colour_set() -> (Vec<Image>, Vec<usize>) {
        let mut imgs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            let s = 0.05 * i as f64;
            imgs.push(Image::filled(24, 24, [0.8 - s, 0.1, 0.1]));
            labels.push(0);
            imgs.push(Image::filled(24, 24, [0.1, 0.1, 0.8 - s]));
            labels.push(1);
        }
        (imgs, labels)
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let (imgs, labels) = two_colour_set();
        let cfg = VisionTrainConfig {
            epochs: 0,
            crop_epochs: 0,
            seed: 5,
            ..Default::default()
        };
        let (p, log) = train_vision(&imgs, &labels, 2, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fresh = VisionParams::init(2, &mut rng);
        assert!(log.is_empty());
        assert_eq!(p.conv_w[0].value, fresh.conv_w[0].value);
    }

    #[test]
    fn separates_two_colours() {
        let (imgs, labels) = two_colour_set();
        let cfg = VisionTrainConfig {
            epochs: 15,
            crop_epochs: 2,
            minibatch: 4,
            seed: 1,
            ..Default::default()
        };
        let (_, log) = train_vision(&imgs, &labels, 2, &cfg).unwrap();
        assert_eq!(log.len(), 17);
        assert!(log.last().unwrap().loss < log[0].loss);
        assert_eq!(log.last().unwrap().accuracy, 1.0);
    }

    #[test]
    fn rejects_bad_labels() {
        let (imgs, mut labels) = two_colour_set();
        labels[0] = 7;
        assert!(train_vision(&imgs, &labels, 2, &VisionTrainConfig::default()).is_err());
    }
}
