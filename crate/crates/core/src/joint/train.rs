//! The joint model and its training loop.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::checkpoint::Checkpoint;
use crate::error::{CvlError, Result};
use crate::joint::compat::{classify_image_fv, classify_text_ft, ClassBank, ClassTextBank};
use crate::joint::loss::{dssje_minibatch_loss, DEFAULT_MARGIN};
use crate::numeric::optim::{rmsprop_step, RmspropState};
use crate::numeric::param::{GradBuffer, Parameter, ParameterSet};
use crate::text::{embed, text_backward, text_forward_cached, EncodedText, TextEncoderParams};
use crate::vision::encoder::{
    conv_features, project, project_backward, vision_backward, vision_forward_cached, VisionBackward,
    VisionCache, VisionParams,
};
use crate::vision::image::Image;

/// Image encoder (only its projection head is trained by default) and
/// text encoder, sharing the embedding space.
#[derive(Clone, Debug)]
pub struct JointModel {
    pub vision: VisionParams,
    pub text: TextEncoderParams,
}

impl JointModel {
    pub fn new(vision: VisionParams, text: TextEncoderParams) -> Result<Self> {
        if vision.feature_dim() != text.config.embed_dim {
            return Err(CvlError::shape(format!(
                "image features are {}-d but text embeddings are {}-d",
                vision.feature_dim(),
                text.config.embed_dim
            )));
        }
        Ok(JointModel { vision, text })
    }

    pub fn image_feature(&self, img: &Image) -> Result<Vec<f64>> {
        project(&conv_features(img, &self.vision)?, &self.vision)
    }

    pub fn feature_from_pooled(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        project(pooled, &self.vision)
    }

    pub fn embed_text(&self, t: &EncodedText) -> Result<Vec<f64>> {
        embed(t, &self.text)
    }

    /// Bank of every description embedding, grouped by `labels`.
    pub fn text_bank(&self, texts: &[&[EncodedText]], labels: &[usize], num_classes: usize) -> Result<ClassTextBank> {
        let mut vecs = Vec::new();
        let mut ys = Vec::new();
        for (ts, &y) in texts.iter().zip(labels) {
            for t in ts.iter() {
                vecs.push(self.embed_text(t)?);
                ys.push(y);
            }
        }
        ClassBank::from_labeled(&vecs, &ys, num_classes)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(self)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let vision = VisionParams::from_tensors(|n| c.get(n))?;
        let text = TextEncoderParams::from_tensors(|n| c.get(n))?;
        Self::new(vision, text)
    }
}

impl ParameterSet for JointModel {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut v = self.vision.parameters();
        v.extend(self.text.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = self.vision.parameters_mut();
        v.extend(self.text.parameters_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTrainConfig {
    pub learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of `learning_rate`;
    /// the rate falls linearly in between.
    pub final_lr_frac: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub margin: f64,
    pub seed: u64,
    /// Also train the conv stack (needs image inputs, not pooled features).
    pub unfreeze_conv: bool,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        JointTrainConfig {
            learning_rate: 7e-4,
            final_lr_frac: 0.1,
            minibatch: 40,
            epochs: 60,
            margin: DEFAULT_MARGIN,
            seed: 0,
            unfreeze_conv: false,
        }
    }
}

/// Image side of the training data.
#[derive(Clone, Copy, Debug)]
pub enum ImageInputs<'a> {
    /// Pooled conv features, for a frozen conv stack.
    Pooled(&'a [Vec<f64>]),
    Images(&'a [Image]),
}

impl ImageInputs<'_> {
    fn len(&self) -> usize {
        match self {
            ImageInputs::Pooled(p) => p.len(),
            ImageInputs::Images(i) => i.len(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct JointSamples<'a> {
    pub images: ImageInputs<'a>,
    /// Descriptions of each image.
    pub texts: &'a [Vec<EncodedText>],
    pub labels: &'a [usize],
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub fv_acc: f64,
    pub ft_acc: f64,
}

impl JointEpoch {
    /// `epoch,loss,fv_acc,ft_acc`
    pub fn to_line(&self) -> String {
        format!("{},{:.6},{:.6},{:.6}", self.epoch, self.loss, self.fv_acc, self.ft_acc)
    }
}

/// Class-balanced minibatch: `C = min(K, minibatch / 2)` random classes,
/// `ceil(minibatch / C)` members each (members reused only when a class is
/// smaller than that).
pub fn sample_batch(by_class: &[Vec<usize>], minibatch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut classes: Vec<usize> = (0..by_class.len()).filter(|&k| !by_class[k].is_empty()).collect();
    classes.shuffle(rng);
    let c = classes.len().min(minibatch / 2).max(1);
    let per = minibatch.div_ceil(c);
    let mut out = Vec::with_capacity(c * per);
    for &k in &classes[..c] {
        let mut m = by_class[k].clone();
        m.shuffle(rng);
        out.extend((0..per).map(|j| m[j % m.len()]));
    }
    out
}

pub fn train_joint(
    init: JointModel,
    data: &JointSamples,
    num_classes: usize,
    cfg: &JointTrainConfig,
) -> Result<(JointModel, Vec<JointEpoch>)> {
    let n = data.labels.len();
    if data.images.len() != n || data.texts.len() != n {
        return Err(CvlError::LengthMismatch(format!(
            "{} images, {} text lists, {} labels",
            data.images.len(),
            data.texts.len(),
            n
        )));
    }
    if cfg.minibatch < 4 {
        return Err(CvlError::Config("minibatch must hold two samples from two classes".into()));
    }
    if !(cfg.final_lr_frac > 0.0 && cfg.final_lr_frac <= 1.0) {
        return Err(CvlError::Config(format!("final_lr_frac must lie in (0, 1], got {}", cfg.final_lr_frac)));
    }
    if cfg.unfreeze_conv && matches!(data.images, ImageInputs::Pooled(_)) {
        return Err(CvlError::Config("training the conv stack needs images, not pooled features".into()));
    }
    if let Some(i) = data.texts.iter().position(|t| t.is_empty()) {
        return Err(CvlError::Config(format!("sample {i} has no descriptions")));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class
            .get_mut(y)
            .ok_or(CvlError::Index {
                index: y,
                len: num_classes,
            })?
            .push(i);
    }
    if by_class.iter().filter(|m| !m.is_empty()).count() < 2 {
        return Err(CvlError::DegenerateBatch("training data covers fewer than 2 classes".into()));
    }

    let mut model = init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = RmspropState::new(cfg.learning_rate);
    let mut log = Vec::with_capacity(cfg.epochs);
    let batches = n.div_ceil(cfg.minibatch);
    for epoch in 1..=cfg.epochs {
        let t = if cfg.epochs > 1 { (epoch - 1) as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
        state.learning_rate = cfg.learning_rate * (1.0 - t * (1.0 - cfg.final_lr_frac));
        let mut total = 0.0;
        for _ in 0..batches {
            let batch = sample_batch(&by_class, cfg.minibatch, &mut rng);
            let text_pick: Vec<&EncodedText> = batch
                .iter()
                .map(|&i| data.texts[i].choose(&mut rng).expect("nonempty"))
                .collect();
            total += step(&mut model, &mut state, data, &batch, &text_pick, cfg)?;
        }
        let (fv_acc, ft_acc) = train_accuracy(&model, data, num_classes)?;
        log.push(JointEpoch {
            epoch,
            loss: total / batches as f64,
            fv_acc,
            ft_acc,
        });
    }
    Ok((model, log))
}

fn step(
    model: &mut JointModel,
    state: &mut RmspropState,
    data: &JointSamples,
    batch: &[usize],
    texts: &[&EncodedText],
    cfg: &JointTrainConfig,
) -> Result<f64> {
    let mut vcaches: Vec<VisionCache> = Vec::new();
    let features: Vec<Vec<f64>> = match data.images {
        ImageInputs::Pooled(p) => batch
            .iter()
            .map(|&i| model.feature_from_pooled(&p[i]))
            .collect::<Result<_>>()?,
        ImageInputs::Images(imgs) => {
            vcaches = batch
                .iter()
                .map(|&i| vision_forward_cached(&imgs[i], &model.vision))
                .collect::<Result<_>>()?;
            vcaches.iter().map(|c| c.feature.clone()).collect()
        }
    };
    let tcaches = texts
        .iter()
        .map(|t| text_forward_cached(t, &model.text))
        .collect::<Result<Vec<_>>>()?;
    let embs: Vec<Vec<f64>> = tcaches.iter().map(|c| c.embedding.clone()).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let out = dssje_minibatch_loss(&features, &embs, &labels, cfg.margin)?;

    let mut vg = GradBuffer::zeros_like(&model.vision);
    for (j, g) in out.grad_features.iter().enumerate() {
        match data.images {
            ImageInputs::Pooled(p) => project_backward(&p[batch[j]], &model.vision, g, &mut vg),
            ImageInputs::Images(_) => {
                vision_backward(
                    &vcaches[j],
                    &model.vision,
                    None,
                    Some(g),
                    VisionBackward {
                        conv_params: cfg.unfreeze_conv,
                        input: false,
                    },
                    &mut vg,
                )?;
            }
        }
    }
    let mut tg = GradBuffer::zeros_like(&model.text);
    for (c, g) in tcaches.iter().zip(&out.grad_texts) {
        text_backward(c, &model.text, g, &mut tg)?;
    }
    vg.0.extend(tg.0);
    vg.store_into(model);
    rmsprop_step(model, state);
    Ok(out.loss)
}

/// Train-set accuracy of `f_v` and `f_t`, using each image's first
/// description for the text side.
fn train_accuracy(model: &JointModel, data: &JointSamples, num_classes: usize) -> Result<(f64, f64)> {
    let n = data.labels.len();
    let features = (0..n)
        .map(|i| match data.images {
            ImageInputs::Pooled(p) => model.feature_from_pooled(&p[i]),
            ImageInputs::Images(imgs) => model.image_feature(&imgs[i]),
        })
        .collect::<Result<Vec<_>>>()?;
    let texts = data
        .texts
        .iter()
        .map(|t| model.embed_text(&t[0]))
        .collect::<Result<Vec<_>>>()?;
    let present: Vec<bool> = (0..num_classes).map(|k| data.labels.contains(&k)).collect();
    // restrict to classes that occur so the banks are complete
    let remap: Vec<usize> = present
        .iter()
        .scan(0, |next, &p| {
            let r = *next;
            *next += usize::from(p);
            Some(r)
        })
        .collect();
    let ys: Vec<usize> = data.labels.iter().map(|&y| remap[y]).collect();
    let k = present.iter().filter(|&&p| p).count();
    let text_bank = ClassBank::from_labeled(&texts, &ys, k)?;
    let image_bank = ClassBank::from_labeled(&features, &ys, k)?;
    let (mut fv, mut ft) = (0usize, 0usize);
    for i in 0..n {
        fv += usize::from(classify_image_fv(&features[i], &text_bank)? == ys[i]);
        ft += usize::from(classify_text_ft(&texts[i], &image_bank)? == ys[i]);
    }
    Ok((fv as f64 / n as f64, ft as f64 / n as f64))
}
