use std::fs;
use std::path::Path;

use cvl_core::cli::{dispatch, CONFUSION_FILE, EXIT_FAILURE, EXIT_OK, EXIT_USAGE, REPORT_FILE};

fn cvl(args: &[&str]) -> i32 {
    dispatch(std::iter::once("cvl").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors() {
    assert_eq!(cvl(&[]), EXIT_USAGE);
    assert_eq!(cvl(&["fly"]), EXIT_USAGE);
    assert_eq!(cvl(&["gen-data"]), EXIT_USAGE);
    assert_eq!(cvl(&["eval", "--beta", "x"]), EXIT_USAGE);
    assert_eq!(cvl(&["--help"]), EXIT_OK);
}

#[test]
fn spec_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    // more classes than attribute combinations
    assert_eq!(cvl(&["gen-data", "--out", s(dir.path()), "--classes", "400"]), EXIT_USAGE);
    let missing = dir.path().join("nothing");
    assert_eq!(
        cvl(&["train-vision", "--data", s(&missing), "--out", s(&dir.path().join("v.ckpt"))]),
        EXIT_FAILURE
    );
}

#[test]
fn small_end_to_end_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let vision = dir.path().join("vision.ckpt");
    let joint = dir.path().join("joint.ckpt");
    let boxes = dir.path().join("boxes.csv");
    let eval_dir = dir.path().join("eval");
    let d = s(&data);
    assert_eq!(
        cvl(&["gen-data", "--out", d, "--seed", "4", "--classes", "3", "--per-class", "10", "--clutter", "0.3"]),
        EXIT_OK
    );
    assert!(data.join("manifest.csv").exists());
    assert_eq!(
        cvl(&["train-vision", "--data", d, "--out", s(&vision), "--seed", "4", "--epochs", "2"]),
        EXIT_OK
    );
    assert_eq!(
        cvl(&["localize", "--data", d, "--vision", s(&vision), "--out", s(&boxes)]),
        EXIT_OK
    );
    let csv = fs::read_to_string(&boxes).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("image_id,x0,y0,x1,y1,fallback"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 30);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f.len(), 6);
        let v: Vec<usize> = f[1..5].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[0] < v[2] && v[2] <= 64 && v[1] < v[3] && v[3] <= 64, "{r}");
    }

    assert_eq!(
        cvl(&["train-joint", "--data", d, "--vision", s(&vision), "--out", s(&joint), "--seed", "4", "--epochs", "2"]),
        EXIT_OK
    );
    assert_eq!(
        cvl(&["eval", "--data", d, "--vision", s(&vision), "--joint", s(&joint), "--out", s(&eval_dir), "--beta", "3"]),
        EXIT_OK
    );
    let report = fs::read_to_string(eval_dir.join(REPORT_FILE)).unwrap();
    assert!(report.starts_with("beta=3\n"), "{report}");
    for key in ["accuracy_vision=", "accuracy_language=", "accuracy_fused=", "mean_iou="] {
        assert!(report.contains(key), "{key} missing");
    }
    let confusion = fs::read_to_string(eval_dir.join(CONFUSION_FILE)).unwrap();
    assert!(confusion.starts_with("true\\pred,0,1,2\n"));
    // every test image lands in exactly one cell: 2 per class
    let total: usize = confusion
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|c| c.parse::<usize>().unwrap()))
        .sum();
    assert_eq!(total, 6);

    // a vision checkpoint has no text encoder
    assert_eq!(
        cvl(&["eval", "--data", d, "--vision", s(&vision), "--joint", s(&vision), "--out", s(&eval_dir)]),
        EXIT_FAILURE
    );
    assert_eq!(
        cvl(&["eval", "--data", d, "--vision", s(&vision), "--joint", s(&joint), "--out", s(&eval_dir), "--beta", "-1"]),
        EXIT_USAGE
    );
}
