//! Elementwise activations, reductions and the softmax classifier head.

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`] given its forward input.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Mean of the rows of an `L x d` matrix.
pub fn mean_over_time(h: &Tensor) -> Result<Vec<f64>> {
    let (len, d) = match h.shape() {
        [l, d] => (*l, *d),
        s => return Err(CvlError::shape(format!("mean_over_time expects L x d, got {s:?}"))),
    };
    mean_rows(h.data(), len, d)
}

pub(crate) fn mean_rows(data: &[f64], len: usize, d: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(CvlError::EmptySequence);
    }
    let mut acc = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = 1.0 / len as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Each of the `len` steps receives `grad / len`.
pub fn mean_over_time_backward(grad: &[f64], len: usize) -> Tensor {
    let inv = 1.0 / len as f64;
    let row: Vec<f64> = grad.iter().map(|g| g * inv).collect();
    let data = row.iter().copied().cycle().take(len * row.len()).collect();
    Tensor::new(&[len, grad.len()], data).expect("positive dims")
}

/// Per-channel spatial mean of a `C x H x W` tensor.
pub fn global_avg_pool(x: &Tensor) -> Result<Vec<f64>> {
    let plane = match x.shape() {
        [_, h, w] => h * w,
        s => return Err(CvlError::shape(format!("global_avg_pool expects C x H x W, got {s:?}"))),
    };
    Ok(x.data()
        .chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect())
}

pub fn global_avg_pool_backward(grad: &[f64], shape: &[usize]) -> Tensor {
    let plane = shape[1] * shape[2];
    let inv = 1.0 / plane as f64;
    let data = grad
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * inv, plane))
        .collect();
    Tensor::new(shape, data).expect("same shape")
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Returns `(-log p[label], p - onehot(label))`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(CvlError::Index {
            index: label,
            len: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
