use std::ffi::{CStr, CString};
use std::ptr;

use cvl_core::data::checkpoint::{save_checkpoint, Checkpoint};
use cvl_core::vision::VisionParams;
use cvl_ffi::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cvl_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn fuse_worked_example() {
    let (v, l) = ([0.5, 0.5], [0.9, 0.1]);
    let mut fused = [0.0; 2];
    let mut class = usize::MAX;
    let s = unsafe { cvl_fuse_scores(v.as_ptr(), l.as_ptr(), 2, 3.0, fused.as_mut_ptr(), &mut class) };
    assert_eq!(s, CvlStatus::Ok);
    assert!((fused[0] - 3.2).abs() < 1e-12 && (fused[1] - 0.8).abs() < 1e-12);
    assert_eq!(class, 0);
}

#[test]
fn fuse_rejects_bad_input() {
    let mut fused = [0.0; 2];
    let ok = [0.5, 0.5];
    let s = unsafe { cvl_fuse_scores(ok.as_ptr(), ok.as_ptr(), 2, -1.0, fused.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, CvlStatus::InvalidArgument);
    assert!(last_error().contains("beta"));
    let off = [0.7, 0.7];
    let s = unsafe { cvl_fuse_scores(off.as_ptr(), ok.as_ptr(), 2, 3.0, fused.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, CvlStatus::InvalidArgument);
    let s = unsafe { cvl_fuse_scores(ptr::null(), ok.as_ptr(), 2, 3.0, fused.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(s, CvlStatus::NullPointer);
    assert_eq!(last_error(), "vision is null");
}

#[test]
fn compatibility_is_inner_product() {
    let (v, t) = ([1.0, 2.0, 3.0], [4.0, -5.0, 6.0]);
    let mut out = 0.0;
    assert_eq!(unsafe { cvl_compatibility(v.as_ptr(), t.as_ptr(), 3, &mut out) }, CvlStatus::Ok);
    assert_eq!(out, 12.0);
    assert_eq!(
        unsafe { cvl_compatibility(v.as_ptr(), t.as_ptr(), 3, ptr::null_mut()) },
        CvlStatus::NullPointer
    );
}

#[test]
fn extract_box_single_pixel_and_empty_map() {
    let mut map = vec![0.0; 64 * 64];
    map[10 * 64 + 10] = 1.0;
    let mut b = CvlBox::default();
    assert_eq!(
        unsafe { cvl_extract_box(map.as_ptr(), 64, 64, 0.25, 0.05, &mut b) },
        CvlStatus::Ok
    );
    assert_eq!((b.x0, b.y0, b.x1, b.y1, b.fallback), (7, 7, 14, 14, 0));
    let zero = vec![0.0; 64 * 64];
    assert_eq!(
        unsafe { cvl_extract_box(zero.as_ptr(), 64, 64, 0.25, 0.05, &mut b) },
        CvlStatus::Ok
    );
    assert_eq!((b.x0, b.y0, b.x1, b.y1, b.fallback), (0, 0, 64, 64, 1));
    assert_eq!(
        unsafe { cvl_extract_box(zero.as_ptr(), 0, 64, 0.25, 0.05, &mut b) },
        CvlStatus::InvalidArgument
    );
}

#[test]
fn text_encoder_lifecycle() {
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    unsafe {
        assert_eq!(cvl_text_encoder_new(7, &mut a), CvlStatus::Ok);
        assert_eq!(cvl_text_encoder_new(7, &mut b), CvlStatus::Ok);
        let mut dim = 0;
        assert_eq!(cvl_text_encoder_embed_dim(a, &mut dim), CvlStatus::Ok);
        assert_eq!(dim, 64);
        let text = CString::new("a small bird with a red body and a blue head").unwrap();
        let (mut ea, mut eb) = (vec![0.0; dim], vec![0.0; dim]);
        assert_eq!(cvl_text_encoder_embed(a, text.as_ptr(), ea.as_mut_ptr(), dim), CvlStatus::Ok);
        assert_eq!(cvl_text_encoder_embed(b, text.as_ptr(), eb.as_mut_ptr(), dim), CvlStatus::Ok);
        assert_eq!(ea, eb);
        assert!(ea.iter().all(|x| x.is_finite()) && ea.iter().any(|&x| x != 0.0));
        assert_eq!(
            cvl_text_encoder_embed(a, text.as_ptr(), ea.as_mut_ptr(), dim - 1),
            CvlStatus::ShapeMismatch
        );
        cvl_text_encoder_free(a);
        cvl_text_encoder_free(b);
        cvl_text_encoder_free(ptr::null_mut());
    }
}

#[test]
fn vision_model_from_saved_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vision.ckpt");
    let params = VisionParams::init(4, &mut ChaCha8Rng::seed_from_u64(3));
    save_checkpoint(&path, &Checkpoint::from_params(&params)).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut ckpt = ptr::null_mut();
        assert_eq!(cvl_checkpoint_load(cpath.as_ptr(), &mut ckpt), CvlStatus::Ok);
        let mut n = 0;
        assert_eq!(cvl_checkpoint_len(ckpt, &mut n), CvlStatus::Ok);
        assert_eq!(n, 10);
        let mut enc = ptr::null_mut();
        assert_ne!(cvl_text_encoder_from_checkpoint(ckpt, &mut enc), CvlStatus::Ok);
        assert!(enc.is_null());

        let mut model = ptr::null_mut();
        assert_eq!(cvl_vision_model_from_checkpoint(ckpt, &mut model), CvlStatus::Ok);
        cvl_checkpoint_free(ckpt);
        let mut k = 0;
        assert_eq!(cvl_vision_model_num_classes(model, &mut k), CvlStatus::Ok);
        assert_eq!(k, 4);
        let pixels: Vec<f64> = (0..3 * 32 * 32).map(|i| (i % 97) as f64 / 97.0).collect();
        let mut scores = vec![0.0; k];
        let mut class = usize::MAX;
        let mut b = CvlBox::default();
        let s = cvl_vision_predict(model, pixels.as_ptr(), 32, 32, scores.as_mut_ptr(), k, &mut class, &mut b);
        assert_eq!(s, CvlStatus::Ok, "{}", last_error());
        assert!((scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(class < k);
        assert!(b.x0 < b.x1 && b.x1 <= 32 && b.y0 < b.y1 && b.y1 <= 32);
        let s = cvl_vision_predict(model, pixels.as_ptr(), 32, 32, scores.as_mut_ptr(), 3, ptr::null_mut(), ptr::null_mut());
        assert_eq!(s, CvlStatus::ShapeMismatch);
        cvl_vision_model_free(model);
    }
}

#[test]
fn missing_and_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut ckpt = ptr::null_mut();
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cvl_checkpoint_load(missing.as_ptr(), &mut ckpt) }, CvlStatus::Io);
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"XXXX\0\0\0\0").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { cvl_checkpoint_load(bad.as_ptr(), &mut ckpt) }, CvlStatus::Format);
    assert!(ckpt.is_null());
    assert_eq!(unsafe { cvl_checkpoint_load(ptr::null(), &mut ckpt) }, CvlStatus::NullPointer);
}

#[test]
fn header_declares_the_interface() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cvl.h")).unwrap();
    for name in [
        "cvl_fuse_scores",
        "cvl_compatibility",
        "cvl_extract_box",
        "cvl_text_encoder_embed",
        "cvl_vision_predict",
        "cvl_checkpoint_free",
        "CVL_STATUS_SHAPE_MISMATCH",
        "typedef struct CvlVisionModel CvlVisionModel",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
    assert!(unsafe { CStr::from_ptr(cvl_version()) }.to_str().unwrap().starts_with("0."));
}
