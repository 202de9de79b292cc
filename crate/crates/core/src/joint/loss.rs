//! Symmetric structured max-margin loss with within-batch class means.
//!
//! For sample `n` with label `y_n`, image feature `v_n` and text `t_n`:
//!
//! ```text
//! l_n = max_y [D(y_n, y) + v_n . tbar_y - v_n . tbar_{y_n}]
//!     + max_y [D(y_n, y) + vbar_y . t_n - vbar_{y_n} . t_n]
//! ```
//!
//! where `tbar_y`, `vbar_y` are the batch means of class `y` and `D` is 0 on
//! a match and `margin` otherwise. The maxima range over classes present in
//! the batch; ties resolve to the smallest label. The loss is the mean of
//! `l_n`.

use crate::error::{CvlError, Result};
use crate::tensor::{axpy, dot};

pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    /// Gradient with respect to each image feature, batch order.
    pub grad_features: Vec<Vec<f64>>,
    /// Gradient with respect to each text embedding, batch order.
    pub grad_texts: Vec<Vec<f64>>,
}

struct Groups {
    /// Distinct labels in ascending order.
    labels: Vec<usize>,
    /// Group slot of each sample.
    slot: Vec<usize>,
    members: Vec<Vec<usize>>,
}

fn group(labels: &[usize]) -> Groups {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let slot: Vec<usize> = labels
        .iter()
        .map(|y| distinct.binary_search(y).expect("present"))
        .collect();
    let mut members = vec![Vec::new(); distinct.len()];
    for (n, &s) in slot.iter().enumerate() {
        members[s].push(n);
    }
    Groups {
        labels: distinct,
        slot,
        members,
    }
}

fn class_means(rows: &[Vec<f64>], g: &Groups, d: usize) -> Vec<Vec<f64>> {
    g.members
        .iter()
        .map(|m| {
            let mut acc = vec![0.0; d];
            for &n in m {
                axpy(1.0, &rows[n], &mut acc);
            }
            acc.iter_mut().for_each(|v| *v /= m.len() as f64);
            acc
        })
        .collect()
}

pub fn dssje_minibatch_loss(
    features: &[Vec<f64>],
    texts: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
) -> Result<BatchLoss> {
    let b = labels.len();
    if features.len() != b || texts.len() != b {
        return Err(CvlError::LengthMismatch(format!(
            "{} features, {} texts, {} labels",
            features.len(),
            texts.len(),
            b
        )));
    }
    let g = group(labels);
    if g.labels.len() < 2 {
        return Err(CvlError::DegenerateBatch(format!(
            "batch of {b} covers {} class(es); need at least 2",
            g.labels.len()
        )));
    }
    let d = features[0].len();
    if features.iter().chain(texts).any(|v| v.len() != d) {
        return Err(CvlError::shape("batch vectors differ in dimension"));
    }
    let tbar = class_means(texts, &g, d);
    let vbar = class_means(features, &g, d);

    let mut loss = 0.0;
    let mut gf = vec![vec![0.0; d]; b];
    let mut gt = vec![vec![0.0; d]; b];
    let scale = 1.0 / b as f64;
    for n in 0..b {
        let own = g.slot[n];
        // image-to-text direction
        let (best, value) = violator(&g, own, margin, |s| dot(&features[n], &tbar[s]));
        loss += value;
        if best != own {
            axpy(scale, &tbar[best], &mut gf[n]);
            axpy(-scale, &tbar[own], &mut gf[n]);
            let (wb, wo) = (scale / g.members[best].len() as f64, scale / g.members[own].len() as f64);
            for &m in &g.members[best] {
                axpy(wb, &features[n], &mut gt[m]);
            }
            for &m in &g.members[own] {
                axpy(-wo, &features[n], &mut gt[m]);
            }
        }
        // text-to-image direction
        let (best, value) = violator(&g, own, margin, |s| dot(&vbar[s], &texts[n]));
        loss += value;
        if best != own {
            axpy(scale, &vbar[best], &mut gt[n]);
            axpy(-scale, &vbar[own], &mut gt[n]);
            let (wb, wo) = (scale / g.members[best].len() as f64, scale / g.members[own].len() as f64);
            for &m in &g.members[best] {
                axpy(wb, &texts[n], &mut gf[m]);
            }
            for &m in &g.members[own] {
                axpy(-wo, &texts[n], &mut gf[m]);
            }
        }
    }
    Ok(BatchLoss {
        loss: loss * scale,
        grad_features: gf,
        grad_texts: gt,
    })
}

/// Maximising slot of `D + score(s) - score(own)` and its value (>= 0,
/// since `own` itself scores 0). Ties keep the smaller label.
fn violator(g: &Groups, own: usize, margin: f64, score: impl Fn(usize) -> f64) -> (usize, f64) {
    let base = score(own);
    let mut best = (own, 0.0);
    for s in 0..g.labels.len() {
        let v = if s == own { 0.0 } else { margin + score(s) - base };
        if v > best.1 || (v == best.1 && s < best.0) {
            best = (s, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn satisfied_margin_is_zero() {
        let f = vec![vec![5.0, 0.0], vec![0.0, 5.0]];
        let r = dssje_minibatch_loss(&f, &f, &[0, 1], 1.0).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.grad_features.iter().chain(&r.grad_texts).flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn two_sample_enumeration() {
        // v0=(1,0) t0=(1,1) y=0 ; v1=(0,1) t1=(2,0) y=1 ; margin 1
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let t = vec![vec![1.0, 1.0], vec![2.0, 0.0]];
        let r = dssje_minibatch_loss(&v, &t, &[0, 1], 1.0).unwrap();
        let f = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1];
        let hinge = |x: f64| x.max(0.0);
        let l0 = hinge(1.0 + f(&v[0], &t[1]) - f(&v[0], &t[0])) + hinge(1.0 + f(&v[1], &t[0]) - f(&v[0], &t[0]));
        let l1 = hinge(1.0 + f(&v[1], &t[0]) - f(&v[1], &t[1])) + hinge(1.0 + f(&v[0], &t[1]) - f(&v[1], &t[1]));
        assert!((r.loss - (l0 + l1) / 2.0).abs() < 1e-12);
        assert!((r.loss - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_batch_is_degenerate() {
        let f = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            dssje_minibatch_loss(&f, &f, &[3, 3], 1.0),
            Err(CvlError::DegenerateBatch(_))
        ));
    }
}
