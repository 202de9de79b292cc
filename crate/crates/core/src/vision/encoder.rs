//! The image encoder: three 3x3 conv blocks, global average pooling, an
//! affine projection to the shared embedding space, and a linear
//! classifier on top of the projection.

use rand::Rng;

use crate::error::Result;
use crate::numeric::conv2d::{conv2d, conv2d_backward, conv2d_input_grad};
use crate::numeric::linalg::{linear, linear_backward};
use crate::numeric::ops::{global_avg_pool, global_avg_pool_backward, relu, relu_backward};
use crate::numeric::param::{GradBuffer, Parameter, ParameterSet};
use crate::numeric::pool::{maxpool2d, maxpool_backward};
use crate::tensor::Tensor;
use crate::text::EMBED_DIM;
use crate::vision::image::Image;

pub const CHANNELS: [usize; 3] = [16, 32, 64];
const KERNEL: usize = 3;
const POOL: usize = 2;

const PROJ_W: usize = 6;
const PROJ_B: usize = 7;
const CLS_W: usize = 8;
const CLS_B: usize = 9;

#[derive(Clone, Debug)]
pub struct VisionParams {
    pub conv_w: [Parameter; 3],
    pub conv_b: [Parameter; 3],
    pub proj_w: Parameter,
    pub proj_b: Parameter,
    pub cls_w: Parameter,
    pub cls_b: Parameter,
}

impl VisionParams {
    pub fn init(num_classes: usize, rng: &mut impl Rng) -> Self {
        let mut c_in = 3;
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for (i, &c_out) in CHANNELS.iter().enumerate() {
            let std = (2.0 / (c_in * KERNEL * KERNEL) as f64).sqrt();
            conv_w.push(Parameter::new(
                format!("vision.conv{}.weight", i + 1),
                Tensor::randn(&[c_out, c_in, KERNEL, KERNEL], std, rng),
            ));
            conv_b.push(Parameter::new(
                format!("vision.conv{}.bias", i + 1),
                Tensor::zeros(&[c_out]),
            ));
            c_in = c_out;
        }
        let feat = CHANNELS[2];
        VisionParams {
            conv_w: conv_w.try_into().expect("three layers"),
            conv_b: conv_b.try_into().expect("three layers"),
            proj_w: Parameter::new(
                "vision.proj.weight",
                Tensor::randn(&[EMBED_DIM, feat], (1.0 / feat as f64).sqrt(), rng),
            ),
            proj_b: Parameter::new("vision.proj.bias", Tensor::zeros(&[EMBED_DIM])),
            cls_w: Parameter::new(
                "vision.cls.weight",
                Tensor::randn(&[num_classes, EMBED_DIM], (1.0 / EMBED_DIM as f64).sqrt(), rng),
            ),
            cls_b: Parameter::new("vision.cls.bias", Tensor::zeros(&[num_classes])),
        }
    }

    pub fn zeros(num_classes: usize) -> Self {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut p = Self::init(num_classes, &mut rng);
        for q in p.parameters_mut() {
            q.value.fill(0.0);
        }
        p
    }

    pub fn num_classes(&self) -> usize {
        self.cls_b.value.numel()
    }

    pub fn feature_dim(&self) -> usize {
        self.proj_b.value.numel()
    }

    /// Rebuilds parameters from named tensors (checkpoint entries).
    pub fn from_tensors(mut get: impl FnMut(&str) -> Result<Tensor>) -> Result<Self> {
        let cls_b = get("vision.cls.bias")?;
        let mut p = Self::zeros(cls_b.numel());
        for param in p.parameters_mut() {
            let t = get(&param.name)?;
            t.expect_shape(param.value.shape(), &param.name)?;
            param.value = t;
        }
        Ok(p)
    }

    /// Replaces the classifier with a freshly initialised one for `num_classes`.
    pub fn reset_classifier(&mut self, num_classes: usize, rng: &mut impl Rng) {
        let d = self.feature_dim();
        self.cls_w = Parameter::new(
            "vision.cls.weight",
            Tensor::randn(&[num_classes, d], (1.0 / d as f64).sqrt(), rng),
        );
        self.cls_b = Parameter::new("vision.cls.bias", Tensor::zeros(&[num_classes]));
    }
}

impl ParameterSet for VisionParams {
    fn parameters(&self) -> Vec<&Parameter> {
        let [w1, w2, w3] = &self.conv_w;
        let [b1, b2, b3] = &self.conv_b;
        vec![w1, b1, w2, b2, w3, b3, &self.proj_w, &self.proj_b, &self.cls_w, &self.cls_b]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let [w1, w2, w3] = &mut self.conv_w;
        let [b1, b2, b3] = &mut self.conv_b;
        vec![
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.cls_w,
            &mut self.cls_b,
        ]
    }
}

/// Forward intermediates for backpropagation.
pub struct VisionCache {
    inputs: [Tensor; 3],
    pre_act: [Tensor; 3],
    pool_argmax: [Vec<usize>; 2],
    pub pooled: Vec<f64>,
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Global-average-pooled conv features (the input of the projection head).
pub fn conv_features(img: &Image, p: &VisionParams) -> Result<Vec<f64>> {
    let mut x = img.pixels().clone();
    for i in 0..3 {
        let a = relu(&conv2d(&x, &p.conv_w[i].value, &p.conv_b[i].value)?);
        x = if i < 2 { maxpool2d(&a, POOL, POOL)?.output } else { a };
    }
    global_avg_pool(&x)
}

/// `theta(v)`: the projection of pooled conv features.
pub fn project(pooled: &[f64], p: &VisionParams) -> Result<Vec<f64>> {
    linear(pooled, &p.proj_w.value, &p.proj_b.value)
}

pub fn classify_logits(feature: &[f64], p: &VisionParams) -> Result<Vec<f64>> {
    linear(feature, &p.cls_w.value, &p.cls_b.value)
}

pub fn vision_forward_cached(img: &Image, p: &VisionParams) -> Result<VisionCache> {
    let mut x = img.pixels().clone();
    let mut inputs = Vec::with_capacity(3);
    let mut pre_act = Vec::with_capacity(3);
    let mut pool_argmax = Vec::with_capacity(2);
    for i in 0..3 {
        let a = conv2d(&x, &p.conv_w[i].value, &p.conv_b[i].value)?;
        let r = relu(&a);
        inputs.push(x);
        x = if i < 2 {
            let pooled = maxpool2d(&r, POOL, POOL)?;
            pool_argmax.push(pooled.argmax);
            pooled.output
        } else {
            r
        };
        pre_act.push(a);
    }
    let pooled = global_avg_pool(&x)?;
    let feature = project(&pooled, p)?;
    let logits = classify_logits(&feature, p)?;
    Ok(VisionCache {
        inputs: inputs.try_into().expect("three layers"),
        pre_act: pre_act.try_into().expect("three layers"),
        pool_argmax: pool_argmax.try_into().expect("two pools"),
        pooled,
        feature,
        logits,
    })
}

/// Which gradients [`vision_backward`] should produce beyond the head.
#[derive(Clone, Copy, Debug, Default)]
pub struct VisionBackward {
    pub conv_params: bool,
    pub input: bool,
}

/// Backpropagates `grad_logits` and/or `grad_feature`. Head gradients are
/// always accumulated into `grads`; conv gradients only when requested.
/// Returns the input gradient when requested.
pub fn vision_backward(
    cache: &VisionCache,
    p: &VisionParams,
    grad_logits: Option<&[f64]>,
    grad_feature: Option<&[f64]>,
    want: VisionBackward,
    grads: &mut GradBuffer,
) -> Result<Option<Tensor>> {
    let g = &mut grads.0;
    let mut g_feat = grad_feature
        .map(|v| v.to_vec())
        .unwrap_or_else(|| vec![0.0; cache.feature.len()]);
    if let Some(gl) = grad_logits {
        let (left, right) = g.split_at_mut(CLS_B);
        let gf = linear_backward(&cache.feature, &p.cls_w.value, gl, &mut left[CLS_W], &mut right[0]);
        g_feat.iter_mut().zip(&gf).for_each(|(a, b)| *a += b);
    }
    let g_pooled = {
        let (left, right) = g.split_at_mut(PROJ_B);
        linear_backward(&cache.pooled, &p.proj_w.value, &g_feat, &mut left[PROJ_W], &mut right[0])
    };
    if !want.conv_params && !want.input {
        return Ok(None);
    }

    let mut grad = global_avg_pool_backward(&g_pooled, cache.pre_act[2].shape());
    for i in (0..3).rev() {
        if i < 2 {
            grad = maxpool_backward(&grad, &cache.pool_argmax[i], cache.pre_act[i].shape());
        }
        let g_pre = relu_backward(&cache.pre_act[i], &grad);
        let need_input = i > 0 || want.input;
        if want.conv_params {
            let cg = conv2d_backward(&cache.inputs[i], &p.conv_w[i].value, &p.conv_b[i].value, &g_pre, need_input)?;
            g[2 * i].add_assign(&cg.weights);
            g[2 * i + 1].add_assign(&cg.bias);
            match cg.input {
                Some(gi) => grad = gi,
                None => return Ok(None),
            }
        } else {
            grad = conv2d_input_grad(&cache.inputs[i], &p.conv_w[i].value, &p.conv_b[i].value, &g_pre)?;
        }
    }
    Ok(Some(grad))
}

/// Backpropagates through the projection only, from pooled features.
/// Accumulates into the projection slots of `grads`.
pub fn project_backward(pooled: &[f64], p: &VisionParams, grad_feature: &[f64], grads: &mut GradBuffer) {
    let (left, right) = grads.0.split_at_mut(PROJ_B);
    linear_backward(pooled, &p.proj_w.value, grad_feature, &mut left[PROJ_W], &mut right[0]);
}



#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{grad_check, Coords};
    use crate::numeric::ops::softmax_cross_entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_image(seed: u64, size: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(Tensor::randn(&[3, size, size], 0.25, &mut rng).map(|v| (v + 0.5).clamp(0.0, 1.0))).unwrap()
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = VisionParams::zeros(5);
        let c = vision_forward_cached(&small_image(1, 64), &p).unwrap();
        assert_eq!(c.logits, vec![0.0; 5]);
        assert_eq!(c.feature.len(), 64);
    }

    #[test]
    fn pooled_features_match_cached_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = VisionParams::init(4, &mut rng);
        let img = small_image(3, 64);
        let c = vision_forward_cached(&img, &p).unwrap();
        assert_eq!(conv_features(&img, &p).unwrap(), c.pooled);
    }

    #[test]
    fn cross_entropy_gradients_on_small_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = VisionParams::init(3, &mut rng);
        let img = small_image(5, 18);
        let c = vision_forward_cached(&img, &p).unwrap();
        let (_, gl) = softmax_cross_entropy(&c.logits, 1).unwrap();
        let mut grads = GradBuffer::zeros_like(&p);
        vision_backward(
            &c,
            &p,
            Some(&gl),
            None,
            VisionBackward {
                conv_params: true,
                input: false,
            },
            &mut grads,
        )
        .unwrap();
        grads.store_into(&mut p);
        let loss = |q: &VisionParams| {
            let c = vision_forward_cached(&img, q).unwrap();
            softmax_cross_entropy(&c.logits, 1).unwrap().0
        };
        let r = grad_check(&mut p, loss, 1e-5, Coords::Sample { per_tensor: 40, seed: 3 });
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
