use crate::error::{CvlError, Result};
use crate::numeric::ops::{argmax, softmax};

const SIMPLEX_TOL: f64 = 1e-9;

/// Per-class probabilities: nonnegative and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    scores: Vec<f64>,
}

impl ClassScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(CvlError::shape("class scores need at least one class"));
        }
        if scores.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CvlError::Format("class scores must be finite and nonnegative".into()));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(CvlError::Format(format!("class scores sum to {sum}, not 1")));
        }
        Ok(ClassScores { scores })
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        ClassScores {
            scores: softmax(logits),
        }
    }

    pub fn uniform(k: usize) -> Self {
        ClassScores {
            scores: vec![1.0 / k as f64; k],
        }
    }

    /// Elementwise mean of two distributions, renormalized.
    pub fn average(a: &ClassScores, b: &ClassScores) -> Result<Self> {
        if a.len() != b.len() {
            return Err(CvlError::LengthMismatch(format!(
                "averaging {} and {} class scores",
                a.len(),
                b.len()
            )));
        }
        let mut s: Vec<f64> = a.scores.iter().zip(&b.scores).map(|(x, y)| 0.5 * (x + y)).collect();
        let total: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= total);
        Ok(ClassScores { scores: s })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    /// Highest-scoring class, smallest index on ties.
    pub fn predict(&self) -> usize {
        argmax(&self.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_of_two() {
        let a = ClassScores::new(vec![0.8, 0.2]).unwrap();
        let b = ClassScores::new(vec![0.4, 0.6]).unwrap();
        let m = ClassScores::average(&a, &b).unwrap();
        assert!((m.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((m.as_slice()[1] - 0.4).abs() < 1e-15);
        assert_eq!(ClassScores::average(&b, &a).unwrap(), m);
    }

    #[test]
    fn identical_average_is_idempotent() {
        let a = ClassScores::from_logits(&[0.3, -1.0, 2.0]);
        let m = ClassScores::average(&a, &a).unwrap();
        for (x, y) in m.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_off_simplex() {
        assert!(ClassScores::new(vec![0.5, 0.6]).is_err());
        assert!(ClassScores::new(vec![1.5, -0.5]).is_err());
        assert!(ClassScores::new(vec![]).is_err());
    }
}
