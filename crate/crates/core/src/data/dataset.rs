use std::path::Path;

use crate::data::manifest::{load_manifest, SampleRecord, Split, MANIFEST_FILE};
use crate::data::ppm::read_ppm;
use crate::error::{CvlError, Result};
use crate::vision::image::{Image, IMAGE_SIZE};

/// Manifest records with their decoded images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub images: Vec<Image>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(records: Vec<SampleRecord>, images: Vec<Image>) -> Result<Self> {
        if records.len() != images.len() {
            return Err(CvlError::LengthMismatch(format!(
                "{} records against {} images",
                records.len(),
                images.len()
            )));
        }
        let num_classes = records.iter().map(|r| r.label + 1).max().unwrap_or(0);
        Ok(Dataset {
            records,
            images,
            num_classes,
        })
    }

    /// Indices of the samples in `split`, in manifest order.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.records[i].label).collect()
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let records = load_manifest(&dir.join(MANIFEST_FILE))?;
    let images = records
        .iter()
        .map(|r| {
            let img = read_ppm(&dir.join(&r.image_path))?;
            if img.height() != IMAGE_SIZE || img.width() != IMAGE_SIZE {
                return Err(CvlError::Validation {
                    image_id: r.image_id.clone(),
                    msg: format!("image is {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}", img.width(), img.height()),
                });
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, images)
}
