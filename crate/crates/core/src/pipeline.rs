//! End-to-end runs over a loaded dataset: vision training, localization,
//! joint training, banks, fusion and the evaluation protocols.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::Dataset;
use crate::data::manifest::Split;
use crate::error::{CvlError, Result};
use crate::fusion::eval::{ablate_localization, evaluate, zero_shot_eval, AblationTable, EvalReport, StreamOutputs};
use crate::fusion::fuse::{select_beta, FusionConfig, BETA_GRID};
use crate::joint::compat::{language_class_scores, ClassTextBank};
use crate::joint::train::{train_joint, ImageInputs, JointEpoch, JointModel, JointSamples, JointTrainConfig};
use crate::text::{build_alphabet, encode_chars, EncodedText, TextEncoderConfig, TextEncoderParams};
use crate::vision::encoder::{conv_features, VisionParams};
use crate::vision::image::crop_and_resize;
use crate::vision::localize::LocalizeConfig;
use crate::vision::predict::{vision_predict_detailed, VisionPrediction};
use crate::vision::train::{train_vision, VisionEpoch, VisionTrainConfig};

/// Which image the language stream sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Full,
    Crop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub vision: VisionTrainConfig,
    pub joint: JointTrainConfig,
    pub localize: LocalizeConfig,
    pub source: FeatureSource,
    /// Fixed beta; `None` selects it on the validation split.
    pub beta: Option<f64>,
}

/// Saliency threshold used for training crops and evaluation boxes. Lower
/// than the operation default so thin parts of the bird stay in the box.
pub const PIPELINE_THRESHOLD_FRAC: f64 = 0.15;

pub fn pipeline_localize() -> LocalizeConfig {
    LocalizeConfig {
        threshold_frac: PIPELINE_THRESHOLD_FRAC,
        ..LocalizeConfig::default()
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            vision: VisionTrainConfig {
                learning_rate: 3e-3,
                minibatch: 20,
                epochs: 40,
                crop_epochs: 20,
                crop_jitter: 0.15,
                final_lr_frac: 0.1,
                seed: 1,
                localize: pipeline_localize(),
            },
            joint: JointTrainConfig::default(),
            localize: pipeline_localize(),
            source: FeatureSource::Crop,
            beta: None,
        }
    }
}

impl PipelineConfig {
    /// Same settings with every stage reseeded from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.vision.seed = seed.wrapping_mul(2).wrapping_add(1);
        self.joint.seed = seed.wrapping_mul(2).wrapping_add(2);
        self
    }
}

pub fn encode_descriptions(ds: &Dataset) -> Result<Vec<Vec<EncodedText>>> {
    let alphabet = build_alphabet();
    ds.records
        .iter()
        .map(|r| r.descriptions.iter().map(|d| encode_chars(d, &alphabet)).collect())
        .collect()
}

/// Vision-stream outputs and pooled conv features for every image.
#[derive(Clone, Debug)]
pub struct ImageViews {
    pub predictions: Vec<VisionPrediction>,
    pub pooled_full: Vec<Vec<f64>>,
    pub pooled_crop: Vec<Vec<f64>>,
}

impl ImageViews {
    pub fn pooled(&self, source: FeatureSource) -> &[Vec<f64>] {
        match source {
            FeatureSource::Full => &self.pooled_full,
            FeatureSource::Crop => &self.pooled_crop,
        }
    }
}

pub fn compute_views(ds: &Dataset, vision: &VisionParams, cfg: &LocalizeConfig) -> Result<ImageViews> {
    let mut v = ImageViews {
        predictions: Vec::with_capacity(ds.images.len()),
        pooled_full: Vec::with_capacity(ds.images.len()),
        pooled_crop: Vec::with_capacity(ds.images.len()),
    };
    for img in &ds.images {
        let pred = vision_predict_detailed(img, vision, cfg)?;
        v.pooled_full.push(conv_features(img, vision)?);
        v.pooled_crop
            .push(conv_features(&crop_and_resize(img, &pred.localization.bbox)?, vision)?);
        v.predictions.push(pred);
    }
    Ok(v)
}

fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Trains the vision stream on the given sample indices.
pub fn train_vision_on(
    ds: &Dataset,
    idx: &[usize],
    num_classes: usize,
    cfg: &VisionTrainConfig,
) -> Result<(VisionParams, Vec<VisionEpoch>)> {
    train_vision(&select(&ds.images, idx), &ds.labels(idx), num_classes, cfg)
}

/// Trains the language stream on pooled features of `idx`, starting from
/// `vision`'s projection head and a fresh text encoder.
pub fn train_language_on(
    vision: &VisionParams,
    pooled: &[Vec<f64>],
    texts: &[Vec<EncodedText>],
    labels: &[usize],
    idx: &[usize],
    num_classes: usize,
    cfg: &JointTrainConfig,
) -> Result<(JointModel, Vec<JointEpoch>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e57);
    let init = JointModel::new(vision.clone(), TextEncoderParams::init(TextEncoderConfig::default(), &mut rng))?;
    let p = select(pooled, idx);
    let t = select(texts, idx);
    let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let samples = JointSamples {
        images: ImageInputs::Pooled(&p),
        texts: &t,
        labels: &y,
    };
    train_joint(init, &samples, num_classes, cfg)
}

/// Bank over all descriptions of `idx`, with labels remapped through `slot`.
pub fn bank_for(
    model: &JointModel,
    texts: &[Vec<EncodedText>],
    labels: &[usize],
    idx: &[usize],
    num_classes: usize,
) -> Result<ClassTextBank> {
    let t: Vec<&[EncodedText]> = idx.iter().map(|&i| texts[i].as_slice()).collect();
    let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    model.text_bank(&t, &y, num_classes)
}

/// Language-stream accuracy on `idx`.
pub fn language_accuracy(model: &JointModel, bank: &ClassTextBank, pooled: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> Result<f64> {
    let mut correct = 0;
    for &i in idx {
        let s = language_class_scores(&model.feature_from_pooled(&pooled[i])?, bank)?;
        correct += usize::from(s.predict() == labels[i]);
    }
    Ok(correct as f64 / idx.len().max(1) as f64)
}

pub struct PipelineRun {
    pub vision: VisionParams,
    pub joint: JointModel,
    pub bank: ClassTextBank,
    pub views: ImageViews,
    pub texts: Vec<Vec<EncodedText>>,
    pub vision_log: Vec<VisionEpoch>,
    pub joint_log: Vec<JointEpoch>,
    pub val_report: EvalReport,
    pub report: EvalReport,
}

fn outputs(
    views: &ImageViews,
    joint: &JointModel,
    bank: &ClassTextBank,
    source: FeatureSource,
    labels: &[usize],
    idx: &[usize],
) -> Result<StreamOutputs> {
    let mut o = StreamOutputs::default();
    for &i in idx {
        let p = &views.predictions[i];
        o.original.push(p.original.clone());
        o.vision.push(p.combined.clone());
        let f = joint.feature_from_pooled(&views.pooled(source)[i])?;
        o.language.push(language_class_scores(&f, bank)?);
        o.labels.push(labels[i]);
    }
    Ok(o)
}

/// Full two-stream run: train on `train`, pick beta on `val`, report on `test`.
pub fn run_pipeline(ds: &Dataset, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let k = ds.num_classes;
    let (train, test) = (ds.split(Split::Train), ds.split(Split::Test));
    if train.is_empty() || test.is_empty() {
        return Err(CvlError::Config("dataset needs train and test samples".into()));
    }
    let labels = ds.labels(&(0..ds.records.len()).collect::<Vec<_>>());
    let texts = encode_descriptions(ds)?;
    let (vision, vision_log) = train_vision_on(ds, &train, k, &cfg.vision)?;
    let views = compute_views(ds, &vision, &cfg.localize)?;
    let (joint, joint_log) = train_language_on(
        &vision,
        views.pooled(cfg.source),
        &texts,
        &labels,
        &train,
        k,
        &cfg.joint,
    )?;
    let ev = evaluate_models(ds, &views, &joint, &texts, cfg.source, cfg.beta)?;
    Ok(PipelineRun {
        vision,
        joint,
        views,
        texts,
        vision_log,
        joint_log,
        val_report: ev.val_report,
        report: ev.report,
        bank: ev.bank,
    })
}

pub struct Evaluation {
    pub bank: ClassTextBank,
    pub val_report: EvalReport,
    /// Test-split report, with mean localization IoU filled in.
    pub report: EvalReport,
}

/// Builds the bank from every train description, fixes beta (or selects it
/// on the validation split, falling back to train when val is empty) and
/// scores the test split.
pub fn evaluate_models(
    ds: &Dataset,
    views: &ImageViews,
    joint: &JointModel,
    texts: &[Vec<EncodedText>],
    source: FeatureSource,
    beta: Option<f64>,
) -> Result<Evaluation> {
    let k = ds.num_classes;
    let (train, val, test) = (ds.split(Split::Train), ds.split(Split::Val), ds.split(Split::Test));
    if train.is_empty() || test.is_empty() {
        return Err(CvlError::Config("dataset needs train and test samples".into()));
    }
    let labels = ds.labels(&(0..ds.records.len()).collect::<Vec<_>>());
    let bank = bank_for(joint, texts, &labels, &train, k)?;
    let val_out = outputs(views, joint, &bank, source, &labels, if val.is_empty() { &train } else { &val })?;
    let beta = match beta {
        Some(b) => b,
        None => select_beta(&val_out.vision, &val_out.language, &val_out.labels, &BETA_GRID)?,
    };
    let fusion = FusionConfig::new(beta)?;
    let val_report = evaluate(&val_out, k, &fusion)?;
    let test_out = outputs(views, joint, &bank, source, &labels, &test)?;
    let mut report = evaluate(&test_out, k, &fusion)?;
    let iou: f64 = test
        .iter()
        .map(|&i| views.predictions[i].localization.bbox.iou(&ds.records[i].gt_box))
        .sum();
    report.mean_iou = Some(iou / test.len() as f64);
    Ok(Evaluation {
        bank,
        val_report,
        report,
    })
}

/// Language-stream test accuracy for the three training variants:
/// `base` (untrained conv stack, full images), `+ft` (trained conv stack,
/// full images) and `+ft+box` (trained conv stack, saliency crops).
/// Reuses the trained vision model and `+ft+box` language model of `run`
/// when its source is the crop.
pub fn run_ablation(ds: &Dataset, cfg: &PipelineConfig, run: &PipelineRun) -> Result<AblationTable> {
    let k = ds.num_classes;
    let (train, test) = (ds.split(Split::Train), ds.split(Split::Test));
    let labels = ds.labels(&(0..ds.records.len()).collect::<Vec<_>>());
    let variant = |vision: &VisionParams, pooled: &[Vec<f64>]| -> Result<f64> {
        let (joint, _) = train_language_on(vision, pooled, &run.texts, &labels, &train, k, &cfg.joint)?;
        let bank = bank_for(&joint, &run.texts, &labels, &train, k)?;
        language_accuracy(&joint, &bank, pooled, &labels, &test)
    };
    let boxed = if cfg.source == FeatureSource::Crop {
        language_accuracy(&run.joint, &run.bank, &run.views.pooled_crop, &labels, &test)?
    } else {
        variant(&run.vision, &run.views.pooled_crop)?
    };
    let full = variant(&run.vision, &run.views.pooled_full)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.vision.seed);
    let random = VisionParams::init(k, &mut rng);
    let base_pooled = ds
        .images
        .iter()
        .map(|img| conv_features(img, &random))
        .collect::<Result<Vec<_>>>()?;
    let base = variant(&random, &base_pooled)?;
    ablate_localization(&[("base", base), ("+ft", full), ("+ft+box", boxed)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotResult {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub top1: f64,
}

/// Holds out the last `held_out` labels: both streams train on the seen
/// classes' train split; unseen banks come from the unseen classes' train
/// descriptions; scoring uses the unseen classes' val and test images.
pub fn run_zero_shot(ds: &Dataset, cfg: &PipelineConfig, held_out: usize) -> Result<ZeroShotResult> {
    let k = ds.num_classes;
    if held_out == 0 || held_out + 2 > k {
        return Err(CvlError::Config(format!(
            "cannot hold out {held_out} of {k} classes and keep two seen"
        )));
    }
    let seen: Vec<usize> = (0..k - held_out).collect();
    let unseen: Vec<usize> = (k - held_out..k).collect();
    let labels = ds.labels(&(0..ds.records.len()).collect::<Vec<_>>());
    let train_seen: Vec<usize> = ds
        .split(Split::Train)
        .into_iter()
        .filter(|&i| labels[i] < seen.len())
        .collect();
    let texts = encode_descriptions(ds)?;
    let (vision, _) = train_vision_on(ds, &train_seen, seen.len(), &cfg.vision)?;
    let views = compute_views(ds, &vision, &cfg.localize)?;
    let pooled = views.pooled(cfg.source);
    let (joint, _) = train_language_on(&vision, pooled, &texts, &labels, &train_seen, seen.len(), &cfg.joint)?;

    let bank_idx: Vec<usize> = ds
        .split(Split::Train)
        .into_iter()
        .filter(|&i| labels[i] >= seen.len())
        .collect();
    let slot: Vec<usize> = labels.iter().map(|&y| y.saturating_sub(seen.len())).collect();
    let bank = bank_for(&joint, &texts, &slot, &bank_idx, unseen.len())?;
    let eval_idx: Vec<usize> = (0..ds.records.len())
        .filter(|&i| labels[i] >= seen.len() && ds.records[i].split != Split::Train)
        .collect();
    let features = eval_idx
        .iter()
        .map(|&i| joint.feature_from_pooled(&pooled[i]))
        .collect::<Result<Vec<_>>>()?;
    let top1 = zero_shot_eval(
        &features,
        &eval_idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        &bank,
        &seen,
        &unseen,
    )?;
    Ok(ZeroShotResult { seen, unseen, top1 })
}
