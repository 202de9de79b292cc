//! Dataset manifest (`manifest.csv`) and per-image description files
//! (`text/<image_id>/NN.txt`).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CvlError, Result};
use crate::vision::image::{BoundingBox, IMAGE_SIZE};

pub const MANIFEST_HEADER: &str = "image_id,path,label,split,x0,y0,x1,y1";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TEXT_DIR: &str = "text";
pub const DESCRIPTIONS_PER_IMAGE: usize = 10;
pub const MIN_DESCRIPTION_WORDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub image_id: String,
    /// Relative to the manifest's directory.
    pub image_path: PathBuf,
    pub label: usize,
    pub split: Split,
    pub descriptions: Vec<String>,
    pub gt_box: BoundingBox,
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn validate_record(r: &SampleRecord) -> Result<()> {
    let fail = |msg: String| {
        Err(CvlError::Validation {
            image_id: r.image_id.clone(),
            msg,
        })
    };
    if r.image_id.is_empty() || r.image_id.contains([',', '/', '\\']) {
        return fail("image id must be nonempty without separators".into());
    }
    if r.descriptions.len() != DESCRIPTIONS_PER_IMAGE {
        return fail(format!(
            "{} descriptions, expected {DESCRIPTIONS_PER_IMAGE}",
            r.descriptions.len()
        ));
    }
    if let Some((i, d)) = r
        .descriptions
        .iter()
        .enumerate()
        .find(|(_, d)| word_count(d) < MIN_DESCRIPTION_WORDS)
    {
        return fail(format!("description {i} has {} words", word_count(d)));
    }
    if !r.gt_box.is_valid_for(IMAGE_SIZE, IMAGE_SIZE) {
        return fail(format!("box {} outside the {IMAGE_SIZE}x{IMAGE_SIZE} frame", r.gt_box));
    }
    Ok(())
}

pub fn description_dir(root: &Path, image_id: &str) -> PathBuf {
    root.join(TEXT_DIR).join(image_id)
}

pub fn write_descriptions(root: &Path, image_id: &str, descriptions: &[String]) -> Result<()> {
    let dir = description_dir(root, image_id);
    fs::create_dir_all(&dir).map_err(|e| CvlError::io(&dir, e))?;
    for (i, d) in descriptions.iter().enumerate() {
        let p = dir.join(format!("{i:02}.txt"));
        fs::write(&p, format!("{d}\n")).map_err(|e| CvlError::io(&p, e))?;
    }
    Ok(())
}

/// Reads every `*.txt` under the image's description directory, in name order.
pub fn read_descriptions(root: &Path, image_id: &str) -> Result<Vec<String>> {
    let dir = description_dir(root, image_id);
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(CvlError::io(&dir, e)),
    };
    files.sort();
    files
        .iter()
        .map(|p| fs::read_to_string(p).map(|s| s.trim().to_string()).map_err(|e| CvlError::io(p, e)))
        .collect()
}

pub fn manifest_row(r: &SampleRecord) -> String {
    let b = r.gt_box;
    format!(
        "{},{},{},{},{},{},{},{}",
        r.image_id,
        r.image_path.display(),
        r.label,
        r.split,
        b.x0,
        b.y0,
        b.x1,
        b.y1
    )
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&manifest_row(r));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| CvlError::io(path, e))
}

/// Accepted records plus the validation failures of the rest.
#[derive(Debug, Default)]
pub struct ManifestScan {
    pub accepted: Vec<SampleRecord>,
    pub rejected: Vec<CvlError>,
}

/// Parses the manifest and reads descriptions. Malformed rows are hard
/// errors; rows that parse but break a record invariant are collected in
/// `rejected`.
pub fn scan_manifest(path: &Path) -> Result<ManifestScan> {
    let text = fs::read_to_string(path).map_err(|e| CvlError::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut scan = ManifestScan::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.trim() == MANIFEST_HEADER {
            continue;
        }
        let mut rec = parse_row(line).map_err(|msg| CvlError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        })?;
        rec.descriptions = read_descriptions(root, &rec.image_id)?;
        match validate_record(&rec) {
            Ok(()) => scan.accepted.push(rec),
            Err(e) => scan.rejected.push(e),
        }
    }
    Ok(scan)
}

/// Like [`scan_manifest`], but the first invalid record is an error.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let mut scan = scan_manifest(path)?;
    if !scan.rejected.is_empty() {
        return Err(scan.rejected.swap_remove(0));
    }
    Ok(scan.accepted)
}

fn parse_row(line: &str) -> std::result::Result<SampleRecord, String> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != 8 {
        return Err(format!("expected 8 columns, found {}", cols.len()));
    }
    let num = |i: usize| {
        cols[i]
            .parse::<usize>()
            .map_err(|_| format!("column {} is not a nonnegative integer: {:?}", i + 1, cols[i]))
    };
    Ok(SampleRecord {
        image_id: cols[0].to_string(),
        image_path: PathBuf::from(cols[1]),
        label: num(2)?,
        split: cols[3].parse()?,
        descriptions: Vec::new(),
        gt_box: BoundingBox::new(num(4)?, num(5)?, num(6)?, num(7)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str) -> SampleRecord {
        SampleRecord {
            image_id: id.into(),
            image_path: PathBuf::from(format!("images/{id}.ppm")),
            label: 3,
            split: Split::Val,
            descriptions: (0..10)
                .map(|i| format!("this bird number {i} has a red body and a blue head today"))
                .collect(),
            gt_box: BoundingBox::new(1, 2, 30, 40),
        }
    }

    fn write_dataset(dir: &Path, recs: &[SampleRecord]) {
        for r in recs {
            write_descriptions(dir, &r.image_id, &r.descriptions).unwrap();
        }
        write_manifest(&dir.join(MANIFEST_FILE), recs).unwrap();
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("a1"), record("b2")];
        write_dataset(dir.path(), &recs);
        assert_eq!(load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), recs);
    }

    #[test]
    fn nine_descriptions_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("good"), record("short_one")];
        write_dataset(dir.path(), &recs);
        fs::remove_file(description_dir(dir.path(), "short_one").join("09.txt")).unwrap();
        let err = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap_err();
        match err {
            CvlError::Validation { image_id, .. } => assert_eq!(image_id, "short_one"),
            e => panic!("unexpected {e:?}"),
        }
        let scan = scan_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(scan.accepted.len(), 1);
        assert_eq!(scan.rejected.len(), 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        fs::write(&p, format!("{MANIFEST_HEADER}\na,images/a.ppm,1,train,0,0,5,5\nb,x,oops,train,0,0,1,1\n")).unwrap();
        match scan_manifest(&p).unwrap_err() {
            CvlError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn short_description_rejected() {
        let mut r = record("x");
        r.descriptions[4] = "too short to count".into();
        assert!(validate_record(&r).is_err());
        let mut r = record("y");
        r.gt_box = BoundingBox::new(10, 10, 10, 20);
        assert!(validate_record(&r).is_err());
    }
}
