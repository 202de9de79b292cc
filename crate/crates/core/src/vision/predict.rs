use crate::error::Result;
use crate::vision::encoder::{vision_forward_cached, VisionParams};
use crate::vision::image::{crop_and_resize, Image};
use crate::vision::localize::{localize, LocalizeConfig, Localization};
use crate::vision::scores::ClassScores;

/// Projected feature `theta(v)` and the classifier's softmax.
pub fn image_forward(img: &Image, p: &VisionParams) -> Result<(Vec<f64>, ClassScores)> {
    let c = vision_forward_cached(img, p)?;
    Ok((c.feature, ClassScores::from_logits(&c.logits)))
}

/// Full vision-stream output for one image.
#[derive(Clone, Debug)]
pub struct VisionPrediction {
    pub original: ClassScores,
    pub crop: ClassScores,
    pub combined: ClassScores,
    pub localization: Localization,
}

/// Averages the softmax of the original image and of its saliency crop.
pub fn vision_predict_detailed(img: &Image, p: &VisionParams, cfg: &LocalizeConfig) -> Result<VisionPrediction> {
    let localization = localize(img, p, cfg)?;
    let (_, original) = image_forward(img, p)?;
    let (_, crop) = image_forward(&crop_and_resize(img, &localization.bbox)?, p)?;
    let combined = ClassScores::average(&original, &crop)?;
    Ok(VisionPrediction {
        original,
        crop,
        combined,
        localization,
    })
}

pub fn vision_predict(img: &Image, p: &VisionParams) -> Result<ClassScores> {
    Ok(vision_predict_detailed(img, p, &LocalizeConfig::default())?.combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_are_uniform() {
        let p = VisionParams::zeros(5);
        let (_, s) = image_forward(&Image::filled(64, 64, [0.5; 3]), &p).unwrap();
        assert!(s.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn prediction_is_on_simplex_and_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = VisionParams::init(6, &mut rng);
        for _ in 0..3 {
            let t = Tensor::randn(&[3, 64, 64], 0.2, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0));
            let img = Image::new(t).unwrap();
            let d = vision_predict_detailed(&img, &p, &LocalizeConfig::default()).unwrap();
            let sum: f64 = d.combined.as_slice().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            let sums: Vec<f64> = (0..6)
                .map(|k| d.original.as_slice()[k] + d.crop.as_slice()[k])
                .collect();
            let mut best = 0;
            for k in 1..6 {
                if sums[k] > sums[best] {
                    best = k;
                }
            }
            assert_eq!(d.combined.predict(), best);
        }
    }
}
