//! Character-level CNN-RNN text encoder.
//!
//! ```text
//! one-hot (A x 201)
//!   -> conv(w=7) -> relu -> maxpool(3,3)
//!   -> conv(w=5) -> relu -> maxpool(3,3)
//!   -> tanh recurrent cell over the remaining steps
//!   -> mean of hidden states            (pre-projection embedding)
//!   -> affine projection to d           (text embedding)
//! ```
//!
//! Padding positions flow through the network unmasked and the mean runs
//! over every recurrent step.

use rand::Rng;

use crate::error::{CvlError, Result};
use crate::numeric::conv1d::{
    temporal_conv_backward, temporal_conv_onehot, temporal_conv_onehot_backward,
};
use crate::numeric::linalg::{linear, linear_backward};
use crate::numeric::ops::{mean_over_time_backward, mean_rows, relu, relu_backward};
use crate::numeric::param::{GradBuffer, Parameter, ParameterSet};
use crate::numeric::pool::{maxpool_backward, temporal_maxpool};
use crate::numeric::rnn::{rnn_backward, rnn_forward};
use crate::numeric::temporal_conv;
use crate::tensor::Tensor;
use crate::text::alphabet::{EncodedText, ALPHABET_SIZE};

/// Embedding dimension shared by both encoders.
pub const EMBED_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextEncoderConfig {
    pub alphabet_size: usize,
    pub conv1_filters: usize,
    pub conv1_width: usize,
    pub conv2_filters: usize,
    pub conv2_width: usize,
    pub pool_width: usize,
    pub pool_stride: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            alphabet_size: ALPHABET_SIZE,
            conv1_filters: 128,
            conv1_width: 7,
            conv2_filters: 128,
            conv2_width: 5,
            pool_width: 3,
            pool_stride: 3,
            hidden: 128,
            embed_dim: EMBED_DIM,
        }
    }
}

impl TextEncoderConfig {
    /// A narrow variant for exhaustive gradient checks.
    pub fn tiny() -> Self {
        TextEncoderConfig {
            conv1_filters: 4,
            conv2_filters: 5,
            hidden: 6,
            embed_dim: 3,
            ..Self::default()
        }
    }
}

/// Output of [`text_forward`].
#[derive(Clone, Debug)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const RNN_WX: usize = 4;
const RNN_WH: usize = 5;
const RNN_B: usize = 6;
const PROJ_W: usize = 7;
const PROJ_B: usize = 8;

#[derive(Clone, Debug)]
pub struct TextEncoderParams {
    pub config: TextEncoderConfig,
    pub conv1_w: Parameter,
    pub conv1_b: Parameter,
    pub conv2_w: Parameter,
    pub conv2_b: Parameter,
    pub rnn_wx: Parameter,
    pub rnn_wh: Parameter,
    pub rnn_b: Parameter,
    pub proj_w: Parameter,
    pub proj_b: Parameter,
}

impl TextEncoderParams {
    pub fn init(config: TextEncoderConfig, rng: &mut impl Rng) -> Self {
        let c = config;
        let p = |name: &str, t: Tensor| Parameter::new(format!("text.{name}"), t);
        TextEncoderParams {
            conv1_w: p(
                "conv1.weight",
                // one-hot input: only `width` inputs are active per output
                Tensor::randn(&[c.conv1_filters, c.alphabet_size, c.conv1_width], (2.0 / c.conv1_width as f64).sqrt(), rng),
            ),
            conv1_b: p("conv1.bias", Tensor::zeros(&[c.conv1_filters])),
            conv2_w: p(
                "conv2.weight",
                Tensor::randn(
                    &[c.conv2_filters, c.conv1_filters, c.conv2_width],
                    (2.0 / (c.conv1_filters * c.conv2_width) as f64).sqrt(),
                    rng,
                ),
            ),
            conv2_b: p("conv2.bias", Tensor::zeros(&[c.conv2_filters])),
            // pooled conv2 activations are several units large; a small input
            // scale keeps the tanh cell out of saturation at the start
            rnn_wx: p(
                "rnn.w_x",
                Tensor::randn(&[c.hidden, c.conv2_filters], 0.3 / (c.conv2_filters as f64).sqrt(), rng),
            ),
            rnn_wh: p(
                "rnn.w_h",
                Tensor::randn(&[c.hidden, c.hidden], 0.5 / (c.hidden as f64).sqrt(), rng),
            ),
            rnn_b: p("rnn.bias", Tensor::zeros(&[c.hidden])),
            proj_w: p(
                "proj.weight",
                Tensor::randn(&[c.embed_dim, c.hidden], (1.0 / c.hidden as f64).sqrt(), rng),
            ),
            proj_b: p("proj.bias", Tensor::zeros(&[c.embed_dim])),
            config,
        }
    }

    /// Every parameter set to zero.
    pub fn zeros(config: TextEncoderConfig) -> Self {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut p = Self::init(config, &mut rng);
        for param in p.parameters_mut() {
            param.value.fill(0.0);
        }
        p
    }

    /// Rebuilds parameters from named tensors (checkpoint entries).
    pub fn from_tensors(mut get: impl FnMut(&str) -> Result<Tensor>) -> Result<Self> {
        let conv1_w = get("text.conv1.weight")?;
        let conv2_w = get("text.conv2.weight")?;
        let rnn_wx = get("text.rnn.w_x")?;
        let proj_w = get("text.proj.weight")?;
        let (f1, a, w1) = dims3(&conv1_w)?;
        let (f2, _, w2) = dims3(&conv2_w)?;
        let config = TextEncoderConfig {
            alphabet_size: a,
            conv1_filters: f1,
            conv1_width: w1,
            conv2_filters: f2,
            conv2_width: w2,
            hidden: rnn_wx.shape()[0],
            embed_dim: proj_w.shape()[0],
            ..TextEncoderConfig::default()
        };
        let mut p = Self::zeros(config);
        for param in p.parameters_mut() {
            let t = get(&param.name)?;
            t.expect_shape(param.value.shape(), &param.name)?;
            param.value = t;
        }
        Ok(p)
    }

    pub fn steps(&self) -> usize {
        let c = &self.config;
        let l1 = crate::text::alphabet::SEQ_LEN - c.conv1_width + 1;
        let p1 = (l1 - c.pool_width) / c.pool_stride + 1;
        let l2 = p1 - c.conv2_width + 1;
        (l2 - c.pool_width) / c.pool_stride + 1
    }
}

fn dims3(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(CvlError::shape(format!("expected rank-3 weights, got {s:?}"))),
    }
}

impl ParameterSet for TextEncoderParams {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.rnn_wx,
            &self.rnn_wh,
            &self.rnn_b,
            &self.proj_w,
            &self.proj_b,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.rnn_wx,
            &mut self.rnn_wh,
            &mut self.rnn_b,
            &mut self.proj_w,
            &mut self.proj_b,
        ]
    }
}

/// Intermediate values kept for the backward pass.
pub struct TextCache {
    indices: Vec<usize>,
    a1: Tensor,
    p1_argmax: Vec<usize>,
    p1: Tensor,
    a2: Tensor,
    p2_argmax: Vec<usize>,
    steps_in: Tensor,
    pub hiddens: Tensor,
    pub mean_hidden: Vec<f64>,
    pub embedding: Vec<f64>,
}

pub fn text_forward_cached(enc: &EncodedText, p: &TextEncoderParams) -> Result<TextCache> {
    let c = &p.config;
    if enc.alphabet_size != c.alphabet_size {
        return Err(CvlError::shape(format!(
            "text encoded over {} symbols, encoder expects {}",
            enc.alphabet_size, c.alphabet_size
        )));
    }
    let a1 = temporal_conv_onehot(&enc.indices, c.alphabet_size, &p.conv1_w.value, &p.conv1_b.value)?;
    let pool1 = temporal_maxpool(&relu(&a1), c.pool_width, c.pool_stride)?;
    let a2 = temporal_conv(&pool1.output, &p.conv2_w.value, &p.conv2_b.value)?;
    let pool2 = temporal_maxpool(&relu(&a2), c.pool_width, c.pool_stride)?;
    let steps_in = transpose(&pool2.output);
    let hiddens = rnn_forward(&steps_in, &p.rnn_wx.value, &p.rnn_wh.value, &p.rnn_b.value)?;
    let (len, d_h) = (hiddens.shape()[0], hiddens.shape()[1]);
    let mean_hidden = mean_rows(hiddens.data(), len, d_h)?;
    let embedding = linear(&mean_hidden, &p.proj_w.value, &p.proj_b.value)?;
    Ok(TextCache {
        indices: enc.indices.clone(),
        a1,
        p1_argmax: pool1.argmax,
        p1: pool1.output,
        a2,
        p2_argmax: pool2.argmax,
        steps_in,
        hiddens,
        mean_hidden,
        embedding,
    })
}

/// Returns the recurrent hidden states (`L' x hidden`) and the embedding.
pub fn text_forward(enc: &EncodedText, p: &TextEncoderParams) -> Result<(Tensor, TextEmbedding)> {
    let cache = text_forward_cached(enc, p)?;
    Ok((
        cache.hiddens,
        TextEmbedding {
            vector: cache.embedding,
        },
    ))
}

pub fn embed(enc: &EncodedText, p: &TextEncoderParams) -> Result<Vec<f64>> {
    Ok(text_forward_cached(enc, p)?.embedding)
}

/// Accumulates parameter gradients for upstream gradient `grad_embedding`.
pub fn text_backward(
    cache: &TextCache,
    p: &TextEncoderParams,
    grad_embedding: &[f64],
    grads: &mut GradBuffer,
) -> Result<()> {
    let c = &p.config;
    let g = &mut grads.0;
    let grad_mean = {
        let (gw, rest) = g.split_at_mut(PROJ_B);
        linear_backward(
            &cache.mean_hidden,
            &p.proj_w.value,
            grad_embedding,
            &mut gw[PROJ_W],
            &mut rest[0],
        )
    };
    let len = cache.hiddens.shape()[0];
    let grad_h = mean_over_time_backward(&grad_mean, len);
    let rg = rnn_backward(&cache.steps_in, &cache.hiddens, &p.rnn_wx.value, &p.rnn_wh.value, &grad_h)?;
    g[RNN_WX].add_assign(&rg.w_x);
    g[RNN_WH].add_assign(&rg.w_h);
    g[RNN_B].add_assign(&rg.bias);

    let grad_p2 = transpose(&rg.inputs);
    let grad_r2 = maxpool_backward(&grad_p2, &cache.p2_argmax, cache.a2.shape());
    let grad_a2 = relu_backward(&cache.a2, &grad_r2);
    let cg = temporal_conv_backward(&cache.p1, &p.conv2_w.value, &p.conv2_b.value, &grad_a2, true)?;
    g[CONV2_W].add_assign(&cg.weights);
    g[CONV2_B].add_assign(&cg.bias);

    let grad_p1 = cg.input.expect("input gradient requested");
    let grad_r1 = maxpool_backward(&grad_p1, &cache.p1_argmax, cache.a1.shape());
    let grad_a1 = relu_backward(&cache.a1, &grad_r1);
    let (gw1, rest) = g.split_at_mut(CONV1_B);
    temporal_conv_onehot_backward(
        &cache.indices,
        c.alphabet_size,
        &p.conv1_w.value,
        &grad_a1,
        &mut gw1[CONV1_W],
        &mut rest[0],
    )
}

/// Mean embedding of a class's descriptions.
pub fn embed_class_texts(texts: &[EncodedText], p: &TextEncoderParams) -> Result<TextEmbedding> {
    if texts.is_empty() {
        return Err(CvlError::EmptyClass);
    }
    let embs = texts.iter().map(|t| embed(t, p)).collect::<Result<Vec<_>>>()?;
    Ok(TextEmbedding {
        vector: mean_rows(&embs.concat(), embs.len(), p.config.embed_dim)?,
    })
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(&[c, r], out).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{grad_check, Coords};
    use crate::text::alphabet::{build_alphabet, encode_chars};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_text() -> EncodedText {
        encode_chars("this bird has a bright red crown, short bill and striped wings.", &build_alphabet()).unwrap()
    }

    #[test]
    fn steps_after_pooling() {
        let p = TextEncoderParams::zeros(TextEncoderConfig::default());
        assert_eq!(p.steps(), 20);
        crate::numeric::param::ensure_unique_names(p.parameters().iter().map(|q| q.name.as_str())).unwrap();
    }

    #[test]
    fn zero_network_emits_projection_bias() {
        let mut p = TextEncoderParams::zeros(TextEncoderConfig::default());
        p.proj_b.value = Tensor::from_vec((0..64).map(|i| i as f64 * 0.25).collect());
        let (hs, emb) = text_forward(&sample_text(), &p).unwrap();
        assert_eq!(hs.shape(), &[20, 128]);
        assert_eq!(emb.vector, p.proj_b.value.data());
    }

    #[test]
    fn mean_hidden_matches_external_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TextEncoderParams::init(TextEncoderConfig::default(), &mut rng);
        let cache = text_forward_cached(&sample_text(), &p).unwrap();
        let (l, d) = (cache.hiddens.shape()[0], cache.hiddens.shape()[1]);
        for j in 0..d {
            let m: f64 = (0..l).map(|t| cache.hiddens.get2(t, j)).sum::<f64>() / l as f64;
            assert!((m - cache.mean_hidden[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_encoder_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = TextEncoderParams::init(TextEncoderConfig::tiny(), &mut rng);
        let enc = sample_text();
        let probe: Vec<f64> = (0..3).map(|i| 0.7 - 0.6 * i as f64).collect();
        let cache = text_forward_cached(&enc, &p).unwrap();
        let mut grads = GradBuffer::zeros_like(&p);
        text_backward(&cache, &p, &probe, &mut grads).unwrap();
        grads.store_into(&mut p);
        let loss = |q: &TextEncoderParams| {
            let e = embed(&enc, q).unwrap();
            e.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>()
        };
        let r = grad_check(&mut p, loss, 1e-5, Coords::All);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn class_mean_of_opposites_is_zero() {
        let p = TextEncoderParams::zeros(TextEncoderConfig::default());
        let single = embed_class_texts(&[sample_text()], &p).unwrap();
        assert_eq!(single.vector, embed(&sample_text(), &p).unwrap());
        assert!(matches!(embed_class_texts(&[], &p), Err(CvlError::EmptyClass)));
    }
}
