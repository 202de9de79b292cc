use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CvlError, Result};
use crate::fusion::fuse::{fused_predict, FusionConfig};
use crate::joint::compat::{classify_image_fv, ClassTextBank};
use crate::vision::scores::ClassScores;

/// Per-sample outputs of both streams on one split.
#[derive(Clone, Debug, Default)]
pub struct StreamOutputs {
    /// Vision classifier on the original image only.
    pub original: Vec<ClassScores>,
    /// Vision stream: original and crop averaged.
    pub vision: Vec<ClassScores>,
    pub language: Vec<ClassScores>,
    pub labels: Vec<usize>,
}

impl StreamOutputs {
    fn check(&self) -> Result<usize> {
        let n = self.labels.len();
        if self.original.len() != n || self.vision.len() != n || self.language.len() != n {
            return Err(CvlError::LengthMismatch(format!(
                "stream outputs {}/{}/{} for {n} labels",
                self.original.len(),
                self.vision.len(),
                self.language.len()
            )));
        }
        if n == 0 {
            return Err(CvlError::Config("evaluation split is empty".into()));
        }
        Ok(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub beta: f64,
    pub accuracy_original_only: f64,
    pub accuracy_vision: f64,
    pub accuracy_language: f64,
    pub accuracy_fused: f64,
    /// `confusion[true][predicted]` for the fused prediction.
    pub confusion: Vec<Vec<usize>>,
    pub zero_shot_top1: Option<f64>,
    pub mean_iou: Option<f64>,
}

fn accuracy(scores: &[ClassScores], labels: &[usize]) -> f64 {
    let c = scores.iter().zip(labels).filter(|(s, &y)| s.predict() == y).count();
    c as f64 / labels.len() as f64
}

pub fn evaluate(out: &StreamOutputs, num_classes: usize, cfg: &FusionConfig) -> Result<EvalReport> {
    let n = out.check()?;
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    let mut correct = 0;
    for i in 0..n {
        let y = out.labels[i];
        let p = fused_predict(&out.vision[i], &out.language[i], cfg)?;
        if y >= num_classes || p >= num_classes {
            return Err(CvlError::Index {
                index: y.max(p),
                len: num_classes,
            });
        }
        confusion[y][p] += 1;
        correct += usize::from(p == y);
    }
    Ok(EvalReport {
        beta: cfg.beta,
        accuracy_original_only: accuracy(&out.original, &out.labels),
        accuracy_vision: accuracy(&out.vision, &out.labels),
        accuracy_language: accuracy(&out.language, &out.labels),
        accuracy_fused: correct as f64 / n as f64,
        confusion,
        zero_shot_top1: None,
        mean_iou: None,
    })
}

impl EvalReport {
    /// One `name=value` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "accuracy_original_only={:.6}", self.accuracy_original_only);
        let _ = writeln!(s, "accuracy_vision={:.6}", self.accuracy_vision);
        let _ = writeln!(s, "accuracy_language={:.6}", self.accuracy_language);
        let _ = writeln!(s, "accuracy_fused={:.6}", self.accuracy_fused);
        if let Some(v) = self.mean_iou {
            let _ = writeln!(s, "mean_iou={v:.6}");
        }
        if let Some(v) = self.zero_shot_top1 {
            let _ = writeln!(s, "zero_shot_top1={v:.6}");
        }
        s
    }

    /// Header row of predicted labels, then one row per true label.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true\\pred");
        for p in 0..k {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for (y, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{y}");
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, report: &Path, confusion: &Path) -> Result<()> {
        fs::write(report, self.to_text()).map_err(|e| CvlError::io(report, e))?;
        fs::write(confusion, self.confusion_csv()).map_err(|e| CvlError::io(confusion, e))
    }
}

/// Language-stream accuracy of each training variant.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(String, f64)>,
}

pub const ABLATION_VARIANTS: [&str; 3] = ["base", "+ft", "+ft+box"];

impl AblationTable {
    pub fn get(&self, name: &str) -> Result<f64> {
        self.rows
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| *a)
            .ok_or_else(|| CvlError::Config(format!("ablation variant {name:?} missing")))
    }

    pub fn to_text(&self) -> String {
        self.rows.iter().map(|(n, a)| format!("{n}={a:.6}\n")).collect()
    }
}

/// Builds the table from per-variant language-stream accuracies; every
/// variant in [`ABLATION_VARIANTS`] must be present.
pub fn ablate_localization(results: &[(&str, f64)]) -> Result<AblationTable> {
    let table = AblationTable {
        rows: results.iter().map(|(n, a)| (n.to_string(), *a)).collect(),
    };
    for v in ABLATION_VARIANTS {
        table.get(v)?;
    }
    Ok(table)
}

/// Top-1 accuracy of `f_v` on unseen-class images against a bank built from
/// unseen-class descriptions only. `bank` slot `j` is class `unseen[j]`.
pub fn zero_shot_eval(
    features: &[Vec<f64>],
    labels: &[usize],
    bank: &ClassTextBank,
    seen: &[usize],
    unseen: &[usize],
) -> Result<f64> {
    if let Some(c) = unseen.iter().find(|c| seen.contains(c)) {
        return Err(CvlError::Protocol(format!("class {c} is both seen and unseen")));
    }
    bank.expect_classes(unseen.len())?;
    if features.len() != labels.len() || labels.is_empty() {
        return Err(CvlError::LengthMismatch(format!(
            "{} features for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut correct = 0;
    for (f, y) in features.iter().zip(labels) {
        if !unseen.contains(y) {
            return Err(CvlError::Protocol(format!("test label {y} is not an unseen class")));
        }
        correct += usize::from(unseen[classify_image_fv(f, bank)?] == *y);
    }
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::compat::ClassBank;

    fn onehot(k: usize, y: usize) -> ClassScores {
        let mut v = vec![0.0; k];
        v[y] = 1.0;
        ClassScores::new(v).unwrap()
    }

    #[test]
    fn perfect_models() {
        let labels = vec![0, 1, 2, 1];
        let s: Vec<ClassScores> = labels.iter().map(|&y| onehot(3, y)).collect();
        let out = StreamOutputs {
            original: s.clone(),
            vision: s.clone(),
            language: s,
            labels,
        };
        let r = evaluate(&out, 3, &FusionConfig::default()).unwrap();
        assert_eq!(
            (r.accuracy_original_only, r.accuracy_vision, r.accuracy_language, r.accuracy_fused),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(r.confusion[1][1], 2);
        assert!(r.to_text().contains("beta=3\n"));
        assert!(r.confusion_csv().starts_with("true\\pred,0,1,2\n0,1,0,0\n"));
    }

    #[test]
    fn zero_shot_protocol() {
        let bank = ClassBank::new(vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]).unwrap();
        let f = vec![vec![2.0, 0.1], vec![0.0, 3.0]];
        assert_eq!(zero_shot_eval(&f, &[7, 9], &bank, &[0, 1], &[7, 9]).unwrap(), 1.0);
        assert!(matches!(
            zero_shot_eval(&f, &[7, 9], &bank, &[0, 7], &[7, 9]),
            Err(CvlError::Protocol(_))
        ));
        let single = ClassBank::new(vec![vec![vec![1.0, 0.0]]]).unwrap();
        assert_eq!(zero_shot_eval(&f, &[4, 4], &single, &[0], &[4]).unwrap(), 1.0);
    }

    #[test]
    fn ablation_needs_all_variants() {
        assert!(ablate_localization(&[("base", 0.1), ("+ft", 0.5)]).is_err());
        let t = ablate_localization(&[("base", 0.1), ("+ft", 0.5), ("+ft+box", 0.6)]).unwrap();
        assert_eq!(t.get("+ft").unwrap(), 0.5);
    }
}
