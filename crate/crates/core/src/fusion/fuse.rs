use crate::error::{CvlError, Result};
use crate::numeric::ops::argmax;
use crate::vision::scores::ClassScores;

pub const DEFAULT_BETA: f64 = 3.0;
pub const BETA_GRID: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub beta: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { beta: DEFAULT_BETA }
    }
}

impl FusionConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(CvlError::Config(format!("beta must be finite and nonnegative, got {beta}")));
        }
        Ok(FusionConfig { beta })
    }
}

/// `vision + beta * language`, unnormalized.
pub fn fuse_scores(vision: &ClassScores, language: &ClassScores, cfg: &FusionConfig) -> Result<Vec<f64>> {
    if vision.len() != language.len() {
        return Err(CvlError::LengthMismatch(format!(
            "fusing {} vision scores with {} language scores",
            vision.len(),
            language.len()
        )));
    }
    Ok(vision
        .as_slice()
        .iter()
        .zip(language.as_slice())
        .map(|(v, l)| v + cfg.beta * l)
        .collect())
}

pub fn fused_predict(vision: &ClassScores, language: &ClassScores, cfg: &FusionConfig) -> Result<usize> {
    Ok(argmax(&fuse_scores(vision, language, cfg)?))
}

/// Number of samples whose fused prediction matches the label.
pub fn fused_correct(vision: &[ClassScores], language: &[ClassScores], labels: &[usize], beta: f64) -> Result<usize> {
    if vision.len() != labels.len() || language.len() != labels.len() {
        return Err(CvlError::LengthMismatch(format!(
            "{} vision, {} language score sets for {} labels",
            vision.len(),
            language.len(),
            labels.len()
        )));
    }
    let cfg = FusionConfig::new(beta)?;
    let mut correct = 0;
    for ((v, l), &y) in vision.iter().zip(language).zip(labels) {
        correct += usize::from(fused_predict(v, l, &cfg)? == y);
    }
    Ok(correct)
}

/// Grid value with the best fused accuracy on the validation scores;
/// the smallest such value on ties.
pub fn select_beta(vision: &[ClassScores], language: &[ClassScores], labels: &[usize], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(CvlError::Config("empty beta grid".into()));
    }
    if labels.is_empty() {
        return Err(CvlError::Config("empty validation split".into()));
    }
    let mut best: Option<(f64, usize)> = None;
    for &beta in grid {
        let c = fused_correct(vision, language, labels, beta)?;
        let better = match best {
            None => true,
            Some((b, bc)) => c > bc || (c == bc && beta < b),
        };
        if better {
            best = Some((beta, c));
        }
    }
    Ok(best.expect("nonempty grid").0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> ClassScores {
        ClassScores::new(v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let f = fuse_scores(&s(&[0.5, 0.5]), &s(&[0.9, 0.1]), &FusionConfig::default()).unwrap();
        assert!((f[0] - 3.2).abs() < 1e-12 && (f[1] - 0.8).abs() < 1e-12);
        assert_eq!(fused_predict(&s(&[0.5, 0.5]), &s(&[0.9, 0.1]), &FusionConfig::default()).unwrap(), 0);
        assert_eq!(DEFAULT_BETA, 3.0);
    }

    #[test]
    fn beta_zero_is_vision() {
        let v = s(&[0.2, 0.7, 0.1]);
        let l = s(&[0.9, 0.05, 0.05]);
        assert_eq!(fused_predict(&v, &l, &FusionConfig::new(0.0).unwrap()).unwrap(), 1);
        assert_eq!(fused_predict(&v, &l, &FusionConfig::new(1e6).unwrap()).unwrap(), 0);
    }

    #[test]
    fn mismatched_k() {
        assert!(fuse_scores(&s(&[1.0]), &s(&[0.5, 0.5]), &FusionConfig::default()).is_err());
        assert!(FusionConfig::new(-1.0).is_err());
        assert!(FusionConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn select_beta_edges() {
        let v = vec![s(&[0.6, 0.4])];
        let l = vec![s(&[0.1, 0.9])];
        assert_eq!(select_beta(&v, &l, &[0], &[4.0]).unwrap(), 4.0);
        // every beta >= 1/4 flips to the wrong class; ties go to the smallest
        assert_eq!(select_beta(&v, &l, &[0], &BETA_GRID).unwrap(), 0.5);
        assert_eq!(select_beta(&v, &l, &[1], &BETA_GRID).unwrap(), 0.5);
        assert!(select_beta(&v, &l, &[0], &[]).is_err());
        assert!(select_beta(&[], &[], &[], &BETA_GRID).is_err());
    }
}
