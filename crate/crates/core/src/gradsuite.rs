//! Finite-difference checks of every layer and of both training losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::joint::loss::{dssje_minibatch_loss, DEFAULT_MARGIN};
use crate::joint::train::JointModel;
use crate::numeric::conv1d::{temporal_conv_onehot, temporal_conv_onehot_backward};
use crate::numeric::conv2d::conv2d_backward;
use crate::numeric::gradcheck::{grad_check, Coords, GradCheckReport, DEFAULT_STEP};
use crate::numeric::linalg::{linear, linear_backward};
use crate::numeric::ops::{
    global_avg_pool, global_avg_pool_backward, mean_over_time_backward, relu_backward,
};
use crate::numeric::param::{GradBuffer, ParamList, Parameter};
use crate::numeric::pool::maxpool_backward;
use crate::numeric::{
    conv2d, matmul, matmul_backward, maxpool2d, mean_over_time, relu, rnn_backward, rnn_forward,
    softmax_cross_entropy, temporal_conv, temporal_conv_backward, temporal_maxpool,
};
use crate::tensor::Tensor;
use crate::text::{
    build_alphabet, encode_chars, text_backward, text_forward_cached, EncodedText, TextEncoderConfig,
    TextEncoderParams,
};
use crate::vision::encoder::{vision_backward, vision_forward_cached, VisionBackward, VisionParams};
use crate::vision::image::Image;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const SUITE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }

    /// `name seed=.. max_rel_error=.. checked=.. kinks=.. PASS|FAIL`
    pub fn to_line(&self) -> String {
        format!(
            "{} seed={} max_rel_error={:.3e} checked={} kinks={} {}",
            self.name,
            self.seed,
            self.report.max_rel_error,
            self.report.checked,
            self.report.kinks,
            if self.passes() { "PASS" } else { "FAIL" }
        )
    }
}

type Eval = dyn Fn(&[&Tensor]) -> Result<(f64, Vec<Tensor>)>;

struct Layer {
    name: &'static str,
    build: fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<Eval>),
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

/// `sum(w * out)` and the matching upstream gradient `w`.
fn weighted(out: &Tensor, w: &Tensor) -> f64 {
    out.dot(w).expect("same shape")
}

fn layers() -> Vec<Layer> {
    vec![
        Layer {
            name: "matmul",
            build: |rng| {
                let w = randn(&[3, 5], rng);
                (
                    vec![randn(&[3, 4], rng), randn(&[4, 5], rng)],
                    Box::new(move |p| {
                        let out = matmul(p[0], p[1])?;
                        let (ga, gb) = matmul_backward(p[0], p[1], &w)?;
                        Ok((weighted(&out, &w), vec![ga, gb]))
                    }),
                )
            },
        },
        Layer {
            name: "linear",
            build: |rng| {
                let u = randn(&[4], rng);
                (
                    vec![randn(&[6], rng), randn(&[4, 6], rng), randn(&[4], rng)],
                    Box::new(move |p| {
                        let y = linear(p[0].data(), p[1], p[2])?;
                        let mut gw = Tensor::zeros(p[1].shape());
                        let mut gb = Tensor::zeros(p[2].shape());
                        let gx = linear_backward(p[0].data(), p[1], u.data(), &mut gw, &mut gb);
                        Ok((weighted(&Tensor::from_vec(y), &u), vec![Tensor::from_vec(gx), gw, gb]))
                    }),
                )
            },
        },
        Layer {
            name: "temporal_conv",
            build: |rng| {
                let w = randn(&[4, 8], rng);
                (
                    vec![randn(&[3, 12], rng), randn(&[4, 3, 5], rng), randn(&[4], rng)],
                    Box::new(move |p| {
                        let out = temporal_conv(p[0], p[1], p[2])?;
                        let g = temporal_conv_backward(p[0], p[1], p[2], &w, true)?;
                        Ok((weighted(&out, &w), vec![g.input.expect("requested"), g.weights, g.bias]))
                    }),
                )
            },
        },
        Layer {
            name: "temporal_conv_onehot",
            build: |rng| {
                let indices: Vec<usize> = (0..15).map(|_| rng.random_range(0..6)).collect();
                let w = randn(&[4, 11], rng);
                (
                    vec![randn(&[4, 6, 5], rng), randn(&[4], rng)],
                    Box::new(move |p| {
                        let out = temporal_conv_onehot(&indices, 6, p[0], p[1])?;
                        let mut gw = Tensor::zeros(p[0].shape());
                        let mut gb = Tensor::zeros(p[1].shape());
                        temporal_conv_onehot_backward(&indices, 6, p[0], &w, &mut gw, &mut gb)?;
                        Ok((weighted(&out, &w), vec![gw, gb]))
                    }),
                )
            },
        },
        Layer {
            name: "temporal_maxpool",
            build: |rng| {
                let w = randn(&[3, 4], rng);
                (
                    vec![randn(&[3, 12], rng)],
                    Box::new(move |p| {
                        let out = temporal_maxpool(p[0], 3, 3)?;
                        let g = maxpool_backward(&w, &out.argmax, p[0].shape());
                        Ok((weighted(&out.output, &w), vec![g]))
                    }),
                )
            },
        },
        Layer {
            name: "conv2d",
            build: |rng| {
                let w = randn(&[3, 5, 5], rng);
                (
                    vec![randn(&[2, 7, 7], rng), randn(&[3, 2, 3, 3], rng), randn(&[3], rng)],
                    Box::new(move |p| {
                        let out = conv2d(p[0], p[1], p[2])?;
                        let g = conv2d_backward(p[0], p[1], p[2], &w, true)?;
                        Ok((weighted(&out, &w), vec![g.input.expect("requested"), g.weights, g.bias]))
                    }),
                )
            },
        },
        Layer {
            name: "maxpool2d",
            build: |rng| {
                let w = randn(&[2, 4, 4], rng);
                (
                    vec![randn(&[2, 8, 8], rng)],
                    Box::new(move |p| {
                        let out = maxpool2d(p[0], 2, 2)?;
                        let g = maxpool_backward(&w, &out.argmax, p[0].shape());
                        Ok((weighted(&out.output, &w), vec![g]))
                    }),
                )
            },
        },
        Layer {
            name: "relu",
            build: |rng| {
                let w = randn(&[3, 7], rng);
                (
                    vec![randn(&[3, 7], rng)],
                    Box::new(move |p| Ok((weighted(&relu(p[0]), &w), vec![relu_backward(p[0], &w)]))),
                )
            },
        },
        Layer {
            name: "rnn",
            build: |rng| {
                let w = randn(&[5, 4], rng);
                (
                    vec![
                        randn(&[5, 3], rng),
                        Tensor::randn(&[4, 3], 0.5, rng),
                        Tensor::randn(&[4, 4], 0.5, rng),
                        randn(&[4], rng),
                    ],
                    Box::new(move |p| {
                        let hs = rnn_forward(p[0], p[1], p[2], p[3])?;
                        let g = rnn_backward(p[0], &hs, p[1], p[2], &w)?;
                        Ok((weighted(&hs, &w), vec![g.inputs, g.w_x, g.w_h, g.bias]))
                    }),
                )
            },
        },
        Layer {
            name: "mean_over_time",
            build: |rng| {
                let u = randn(&[4], rng);
                (
                    vec![randn(&[5, 4], rng)],
                    Box::new(move |p| {
                        let m = mean_over_time(p[0])?;
                        Ok((weighted(&Tensor::from_vec(m), &u), vec![mean_over_time_backward(u.data(), 5)]))
                    }),
                )
            },
        },
        Layer {
            name: "global_avg_pool",
            build: |rng| {
                let u = randn(&[3], rng);
                (
                    vec![randn(&[3, 4, 5], rng)],
                    Box::new(move |p| {
                        let m = global_avg_pool(p[0])?;
                        let g = global_avg_pool_backward(u.data(), p[0].shape());
                        Ok((weighted(&Tensor::from_vec(m), &u), vec![g]))
                    }),
                )
            },
        },
        Layer {
            name: "softmax_cross_entropy",
            build: |rng| {
                let label = rng.random_range(0..6);
                (
                    vec![Tensor::randn(&[6], 2.0, rng)],
                    Box::new(move |p| {
                        let (l, g) = softmax_cross_entropy(p[0].data(), label)?;
                        Ok((l, vec![Tensor::from_vec(g)]))
                    }),
                )
            },
        },
    ]
}

fn check_layer(layer: &Layer, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (values, eval) = (layer.build)(&mut rng);
    let mut params = ParamList(
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| Parameter::new(format!("{}.{i}", layer.name), v))
            .collect(),
    );
    let (_, grads) = {
        let refs: Vec<&Tensor> = params.0.iter().map(|p| &p.value).collect();
        eval(&refs)?
    };
    GradBuffer(grads).store_into(&mut params);
    Ok(grad_check(
        &mut params,
        |m| {
            let refs: Vec<&Tensor> = m.0.iter().map(|p| &p.value).collect();
            eval(&refs).map(|(l, _)| l).unwrap_or(f64::NAN)
        },
        DEFAULT_STEP,
        Coords::All,
    ))
}

fn random_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let px = Tensor::new(
        &[3, size, size],
        (0..3 * size * size).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("positive dims");
    Image::new(px).expect("three channels")
}

fn random_text(rng: &mut ChaCha8Rng) -> Result<EncodedText> {
    const WORDS: [&str; 10] = ["a", "red", "bird", "with", "long", "striped", "wings", "and", "blue", "head"];
    let n = rng.random_range(8..16);
    let s: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    encode_chars(&s.join(" "), &build_alphabet())
}

/// Softmax cross-entropy of the vision classifier, through the whole stack.
fn check_vision_loss(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = VisionParams::init(5, &mut rng);
    let img = random_image(32, &mut rng);
    let label = rng.random_range(0..5);
    let cache = vision_forward_cached(&img, &p)?;
    let (_, g) = softmax_cross_entropy(&cache.logits, label)?;
    let mut buf = GradBuffer::zeros_like(&p);
    vision_backward(
        &cache,
        &p,
        Some(&g),
        None,
        VisionBackward {
            conv_params: true,
            input: false,
        },
        &mut buf,
    )?;
    buf.store_into(&mut p);
    Ok(grad_check(
        &mut p,
        |m| {
            vision_forward_cached(&img, m)
                .and_then(|c| softmax_cross_entropy(&c.logits, label))
                .map(|(l, _)| l)
                .unwrap_or(f64::NAN)
        },
        DEFAULT_STEP,
        Coords::Sample {
            per_tensor: 12,
            seed,
        },
    ))
}

fn joint_loss(model: &JointModel, imgs: &[Image], texts: &[EncodedText], labels: &[usize]) -> Result<f64> {
    let f = imgs.iter().map(|i| model.image_feature(i)).collect::<Result<Vec<_>>>()?;
    let t = texts.iter().map(|t| model.embed_text(t)).collect::<Result<Vec<_>>>()?;
    Ok(dssje_minibatch_loss(&f, &t, labels, DEFAULT_MARGIN)?.loss)
}

/// The joint max-margin loss through both encoders, conv stack included.
fn check_joint_loss(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vision = VisionParams::init(3, &mut rng);
    let text = TextEncoderParams::init(TextEncoderConfig::default(), &mut rng);
    let mut model = JointModel::new(vision, text)?;
    let labels = [0usize, 1, 0, 2];
    let imgs: Vec<Image> = labels.iter().map(|_| random_image(24, &mut rng)).collect();
    let texts = labels.iter().map(|_| random_text(&mut rng)).collect::<Result<Vec<_>>>()?;

    let vc = imgs.iter().map(|i| vision_forward_cached(i, &model.vision)).collect::<Result<Vec<_>>>()?;
    let tc = texts.iter().map(|t| text_forward_cached(t, &model.text)).collect::<Result<Vec<_>>>()?;
    let f: Vec<Vec<f64>> = vc.iter().map(|c| c.feature.clone()).collect();
    let t: Vec<Vec<f64>> = tc.iter().map(|c| c.embedding.clone()).collect();
    let out = dssje_minibatch_loss(&f, &t, &labels, DEFAULT_MARGIN)?;
    let mut vg = GradBuffer::zeros_like(&model.vision);
    for (c, g) in vc.iter().zip(&out.grad_features) {
        vision_backward(
            c,
            &model.vision,
            None,
            Some(g),
            VisionBackward {
                conv_params: true,
                input: false,
            },
            &mut vg,
        )?;
    }
    let mut tg = GradBuffer::zeros_like(&model.text);
    for (c, g) in tc.iter().zip(&out.grad_texts) {
        text_backward(c, &model.text, g, &mut tg)?;
    }
    vg.0.extend(tg.0);
    vg.store_into(&mut model);
    Ok(grad_check(
        &mut model,
        |m| joint_loss(m, &imgs, &texts, &labels).unwrap_or(f64::NAN),
        DEFAULT_STEP,
        Coords::Sample {
            per_tensor: 6,
            seed,
        },
    ))
}

/// Weighted sum of the embedding of the narrow text encoder, every coordinate.
fn check_text_encoder(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = TextEncoderParams::init(TextEncoderConfig::tiny(), &mut rng);
    let text = random_text(&mut rng)?;
    let u: Vec<f64> = (0..p.config.embed_dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let cache = text_forward_cached(&text, &p)?;
    let mut buf = GradBuffer::zeros_like(&p);
    text_backward(&cache, &p, &u, &mut buf)?;
    buf.store_into(&mut p);
    Ok(grad_check(
        &mut p,
        |m| {
            text_forward_cached(&text, m)
                .map(|c| crate::tensor::dot(&c.embedding, &u))
                .unwrap_or(f64::NAN)
        },
        DEFAULT_STEP,
        Coords::All,
    ))
}

/// Names of every check, in the order [`run_gradient_suite`] reports them.
pub fn suite_names() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = layers().iter().map(|l| l.name).collect();
    v.extend(["text_encoder", "vision_cross_entropy", "joint_max_margin"]);
    v
}

/// Runs every check once per seed.
pub fn run_gradient_suite(seeds: &[u64]) -> Result<Vec<GradCheckCase>> {
    let mut out = Vec::new();
    for layer in layers() {
        for &seed in seeds {
            out.push(GradCheckCase {
                name: layer.name,
                seed,
                report: check_layer(&layer, seed)?,
            });
        }
    }
    type Full = fn(u64) -> Result<GradCheckReport>;
    let full: [(&'static str, Full); 3] = [
        ("text_encoder", check_text_encoder),
        ("vision_cross_entropy", check_vision_loss),
        ("joint_max_margin", check_joint_loss),
    ];
    for (name, f) in full {
        for &seed in seeds {
            out.push(GradCheckCase {
                name,
                seed,
                report: f(seed)?,
            });
        }
    }
    Ok(out)
}
