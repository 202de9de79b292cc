//! Compatibility `F(v, t) = theta(v) . phi(t)`, per-class banks and the two
//! argmax classifiers.

use crate::error::{CvlError, Result};
use crate::numeric::ops::{argmax, mean_rows};
use crate::tensor::dot;
use crate::vision::scores::ClassScores;

pub fn compatibility(v_feat: &[f64], t_emb: &[f64]) -> Result<f64> {
    if v_feat.len() != t_emb.len() {
        return Err(CvlError::shape(format!(
            "compatibility of a {}-d image feature with a {}-d text embedding",
            v_feat.len(),
            t_emb.len()
        )));
    }
    Ok(dot(v_feat, t_emb))
}

/// Members of each class plus their cached mean. Used both for text
/// embeddings (`T(y)`) and for image features (`V(y)`).
#[derive(Clone, Debug, PartialEq)]
pub struct ClassBank {
    members: Vec<Vec<Vec<f64>>>,
    means: Vec<Vec<f64>>,
    dim: usize,
}

pub type ClassTextBank = ClassBank;
pub type ClassImageBank = ClassBank;

impl ClassBank {
    /// `members[y]` are the vectors of class `y`; every class needs one.
    pub fn new(members: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if members.is_empty() {
            return Err(CvlError::BankIncomplete(0));
        }
        if let Some(y) = members.iter().position(|m| m.is_empty()) {
            return Err(CvlError::BankIncomplete(y));
        }
        let dim = members[0][0].len();
        if members.iter().flatten().any(|v| v.len() != dim) {
            return Err(CvlError::shape("bank vectors differ in dimension"));
        }
        let means = members
            .iter()
            .map(|m| mean_rows(&m.concat(), m.len(), dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassBank { members, means, dim })
    }

    /// Groups `vectors` by `labels` into `num_classes` classes.
    pub fn from_labeled(vectors: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(CvlError::LengthMismatch(format!(
                "{} vectors against {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let mut members = vec![Vec::new(); num_classes];
        for (v, &y) in vectors.iter().zip(labels) {
            members
                .get_mut(y)
                .ok_or(CvlError::Index {
                    index: y,
                    len: num_classes,
                })?
                .push(v.clone());
        }
        Self::new(members)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn members(&self, y: usize) -> &[Vec<f64>] {
        &self.members[y]
    }

    pub fn mean(&self, y: usize) -> &[f64] {
        &self.means[y]
    }

    /// `raw[y] = F(query, mean_y)`, the class expectation of the compatibility.
    pub fn raw_scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.means.iter().map(|m| compatibility(query, m)).collect()
    }

    /// Checks that the bank covers exactly `k` classes.
    pub fn expect_classes(&self, k: usize) -> Result<()> {
        if self.num_classes() < k {
            return Err(CvlError::BankIncomplete(self.num_classes()));
        }
        if self.num_classes() > k {
            return Err(CvlError::LengthMismatch(format!(
                "bank has {} classes, expected {k}",
                self.num_classes()
            )));
        }
        Ok(())
    }
}

/// Softmax over the expected compatibilities with each class's texts.
pub fn language_class_scores(v_feat: &[f64], bank: &ClassTextBank) -> Result<ClassScores> {
    Ok(ClassScores::from_logits(&bank.raw_scores(v_feat)?))
}

/// `f_v(v)`: class whose descriptions are most compatible with the image.
pub fn classify_image_fv(v_feat: &[f64], bank: &ClassTextBank) -> Result<usize> {
    Ok(argmax(&bank.raw_scores(v_feat)?))
}

/// `f_t(t)`: class whose images are most compatible with the description.
pub fn classify_text_ft(t_emb: &[f64], image_bank: &ClassImageBank) -> Result<usize> {
    Ok(argmax(&image_bank.raw_scores(t_emb)?))
}

/// Mean 0-1 loss of both classifiers; lies in `[0, 2]`.
pub fn empirical_risk(pred_v: &[usize], pred_t: &[usize], truth: &[usize]) -> Result<f64> {
    if pred_v.len() != truth.len() || pred_t.len() != truth.len() {
        return Err(CvlError::LengthMismatch(format!(
            "{} image and {} text predictions for {} labels",
            pred_v.len(),
            pred_t.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(CvlError::LengthMismatch("empirical risk of no samples".into()));
    }
    let wrong: usize = truth
        .iter()
        .zip(pred_v.iter().zip(pred_t))
        .map(|(y, (a, b))| usize::from(a != y) + usize::from(b != y))
        .sum();
    Ok(wrong as f64 / truth.len() as f64)
}
