//! C interface over `cvl-core`.
//!
//! Every function returns a [`CvlStatus`]; results come back through out
//! pointers. Models and checkpoints are opaque handles released with their
//! `_free` function. After a failure, [`cvl_last_error`] describes it.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cvl_core::data::checkpoint::{load_checkpoint, Checkpoint};
use cvl_core::fusion::fuse::{fuse_scores, FusionConfig};
use cvl_core::joint::compat::compatibility;
use cvl_core::pipeline::pipeline_localize;
use cvl_core::text::{build_alphabet, embed, encode_chars, Alphabet, TextEncoderConfig, TextEncoderParams};
use cvl_core::vision::{
    extract_box, vision_predict_detailed, BoundingBox, ClassScores, Image, LocalizeConfig, VisionParams,
};
use cvl_core::{CvlError, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvlStatus {
    Ok = 0,
    NullPointer = 1,
    /// A value the caller passed is out of range or malformed.
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    /// A file on disk could not be decoded.
    Format = 5,
    Panic = 6,
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CvlBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    /// Nonzero when no salient pixel was found and the box is the full frame.
    pub fallback: u8,
}

pub struct CvlCheckpoint(Checkpoint);

pub struct CvlTextEncoder {
    params: TextEncoderParams,
    alphabet: Alphabet,
}

pub struct CvlVisionModel(VisionParams);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &CvlError) -> CvlStatus {
    match e {
        CvlError::Shape(_) | CvlError::LengthMismatch(_) => CvlStatus::ShapeMismatch,
        CvlError::Io { .. } => CvlStatus::Io,
        CvlError::Format(_) | CvlError::Parse { .. } => CvlStatus::Format,
        _ => CvlStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (CvlStatus, String)>) -> CvlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CvlStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CvlStatus::Panic
        }
    }
}

fn core<T>(r: cvl_core::Result<T>) -> Result<T, (CvlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CvlStatus, String) {
    (CvlStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (CvlStatus, String) {
    (CvlStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (CvlStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], (CvlStatus, String)> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CvlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (CvlStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn to_box(b: &BoundingBox, fallback: bool) -> CvlBox {
    CvlBox {
        x0: b.x0,
        y0: b.y0,
        x1: b.x1,
        y1: b.y1,
        fallback: u8::from(fallback),
    }
}

/// Message of the last failure on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cvl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static nul-terminated string.
#[no_mangle]
pub extern "C" fn cvl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn cvl_checkpoint_load(path: *const c_char, out: *mut *mut CvlCheckpoint) -> CvlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = str_arg(path, "path")?;
        let c = core(load_checkpoint(Path::new(path)))?;
        *out = Box::into_raw(Box::new(CvlCheckpoint(c)));
        Ok(())
    })
}

/// Number of named tensors in the checkpoint.
#[no_mangle]
pub unsafe extern "C" fn cvl_checkpoint_len(ckpt: *const CvlCheckpoint, out: *mut usize) -> CvlStatus {
    guard(|| {
        let c = ckpt.as_ref().ok_or_else(|| null("checkpoint"))?;
        *out_ptr(out, "out")? = c.0.entries.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvl_checkpoint_free(ckpt: *mut CvlCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// A freshly initialized text encoder with the default architecture.
#[no_mangle]
pub unsafe extern "C" fn cvl_text_encoder_new(seed: u64, out: *mut *mut CvlTextEncoder) -> CvlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = TextEncoderParams::init(TextEncoderConfig::default(), &mut rng);
        *out = Box::into_raw(Box::new(CvlTextEncoder {
            params,
            alphabet: build_alphabet(),
        }));
        Ok(())
    })
}

/// Text encoder stored in a (joint) checkpoint.
#[no_mangle]
pub unsafe extern "C" fn cvl_text_encoder_from_checkpoint(
    ckpt: *const CvlCheckpoint,
    out: *mut *mut CvlTextEncoder,
) -> CvlStatus {
    guard(|| {
        let c = ckpt.as_ref().ok_or_else(|| null("checkpoint"))?;
        let out = out_ptr(out, "out")?;
        let params = core(TextEncoderParams::from_tensors(|n| c.0.get(n)))?;
        *out = Box::into_raw(Box::new(CvlTextEncoder {
            params,
            alphabet: build_alphabet(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvl_text_encoder_embed_dim(enc: *const CvlTextEncoder, out: *mut usize) -> CvlStatus {
    guard(|| {
        let e = enc.as_ref().ok_or_else(|| null("encoder"))?;
        *out_ptr(out, "out")? = e.params.config.embed_dim;
        Ok(())
    })
}

/// Embeds a UTF-8 description into `out[0..dim]`; `dim` must equal the
/// encoder's embedding dimension.
#[no_mangle]
pub unsafe extern "C" fn cvl_text_encoder_embed(
    enc: *const CvlTextEncoder,
    text: *const c_char,
    out: *mut f64,
    dim: usize,
) -> CvlStatus {
    guard(|| {
        let e = enc.as_ref().ok_or_else(|| null("encoder"))?;
        let text = str_arg(text, "text")?;
        if dim != e.params.config.embed_dim {
            return Err((
                CvlStatus::ShapeMismatch,
                format!("output holds {dim} values, embedding has {}", e.params.config.embed_dim),
            ));
        }
        let out = slice_mut(out, dim, "out")?;
        let enc = core(encode_chars(text, &e.alphabet))?;
        out.copy_from_slice(&core(embed(&enc, &e.params))?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvl_text_encoder_free(enc: *mut CvlTextEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cvl_vision_model_from_checkpoint(
    ckpt: *const CvlCheckpoint,
    out: *mut *mut CvlVisionModel,
) -> CvlStatus {
    guard(|| {
        let c = ckpt.as_ref().ok_or_else(|| null("checkpoint"))?;
        let out = out_ptr(out, "out")?;
        let p = core(VisionParams::from_tensors(|n| c.0.get(n)))?;
        *out = Box::into_raw(Box::new(CvlVisionModel(p)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvl_vision_model_num_classes(model: *const CvlVisionModel, out: *mut usize) -> CvlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out_ptr(out, "out")? = m.0.num_classes();
        Ok(())
    })
}

/// Classifies a `3 x height x width` channel-major image with values in
/// `[0, 1]`. Writes the combined (original and crop) class probabilities to
/// `scores[0..num_classes]`, the predicted class to `class_out` and the
/// saliency box to `box_out`. `class_out` and `box_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cvl_vision_predict(
    model: *const CvlVisionModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    scores: *mut f64,
    num_classes: usize,
    class_out: *mut usize,
    box_out: *mut CvlBox,
) -> CvlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if num_classes != m.0.num_classes() {
            return Err((
                CvlStatus::ShapeMismatch,
                format!("score buffer holds {num_classes}, model has {} classes", m.0.num_classes()),
            ));
        }
        let n = 3 * height * width;
        if n == 0 {
            return Err(invalid("image has no pixels"));
        }
        let px = slice(pixels, n, "pixels")?;
        let img = core(Tensor::new(&[3, height, width], px.to_vec()).and_then(Image::new))?;
        let pred = core(vision_predict_detailed(&img, &m.0, &pipeline_localize()))?;
        slice_mut(scores, num_classes, "scores")?.copy_from_slice(pred.combined.as_slice());
        if let Some(c) = class_out.as_mut() {
            *c = pred.combined.predict();
        }
        if let Some(b) = box_out.as_mut() {
            *b = to_box(&pred.localization.bbox, pred.localization.fallback);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cvl_vision_model_free(model: *mut CvlVisionModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Box around the largest 4-connected region of `saliency` (row-major
/// `height x width`) at or above `threshold_frac` of its maximum, padded by
/// `margin_frac` of the image side.
#[no_mangle]
pub unsafe extern "C" fn cvl_extract_box(
    saliency: *const f64,
    height: usize,
    width: usize,
    threshold_frac: f64,
    margin_frac: f64,
    out: *mut CvlBox,
) -> CvlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if height == 0 || width == 0 {
            return Err(invalid("saliency map is empty"));
        }
        let s = slice(saliency, height * width, "saliency")?;
        let t = core(Tensor::new(&[height, width], s.to_vec()))?;
        let cfg = LocalizeConfig {
            threshold_frac,
            margin_frac,
        };
        let l = core(extract_box(&t, &cfg))?;
        *out = to_box(&l.bbox, l.fallback);
        Ok(())
    })
}

/// Inner product of an image feature and a text embedding.
#[no_mangle]
pub unsafe extern "C" fn cvl_compatibility(v: *const f64, t: *const f64, dim: usize, out: *mut f64) -> CvlStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = core(compatibility(slice(v, dim, "v")?, slice(t, dim, "t")?))?;
        Ok(())
    })
}

/// `fused[k] = vision[k] + beta * language[k]`; both inputs must be
/// probability vectors. `class_out` (may be null) receives the argmax,
/// lowest index on ties.
#[no_mangle]
pub unsafe extern "C" fn cvl_fuse_scores(
    vision: *const f64,
    language: *const f64,
    num_classes: usize,
    beta: f64,
    fused: *mut f64,
    class_out: *mut usize,
) -> CvlStatus {
    guard(|| {
        if num_classes == 0 {
            return Err(invalid("no classes"));
        }
        let scores = |p, what| -> Result<ClassScores, (CvlStatus, String)> {
            ClassScores::new(slice(p, num_classes, what)?.to_vec()).map_err(|e| invalid(format!("{what}: {e}")))
        };
        let v = scores(vision, "vision")?;
        let l = scores(language, "language")?;
        let cfg = core(FusionConfig::new(beta))?;
        let f = core(fuse_scores(&v, &l, &cfg))?;
        slice_mut(fused, num_classes, "fused")?.copy_from_slice(&f);
        if let Some(c) = class_out.as_mut() {
            *c = cvl_core::numeric::ops::argmax(&f);
        }
        Ok(())
    })
}
