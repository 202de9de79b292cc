//! Max pooling over time (C x L) and over space (C x H x W).
//!
//! Backward routes each output gradient to the position of its window
//! maximum; on ties the first (lowest index, row-major) maximum wins.

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;

/// Pooled output plus, per output element, the flat input index it came from.
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub fn temporal_maxpool(input: &Tensor, width: usize, stride: usize) -> Result<Pooled> {
    let (c, len) = match input.shape() {
        [c, l] => (*c, *l),
        s => return Err(CvlError::shape(format!("temporal_maxpool input must be C x L, got {s:?}"))),
    };
    check_window(width, stride, len)?;
    let out_len = (len - width) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_len);
    let mut argmax = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        for t in 0..out_len {
            let start = ch * len + t * stride;
            let (best_i, best) = window_max((start..start + width).map(|i| (i, x[i])));
            out.push(best);
            argmax.push(best_i);
        }
    }
    Ok(Pooled {
        output: Tensor::new(&[c, out_len], out)?,
        argmax,
    })
}

pub fn maxpool2d(input: &Tensor, width: usize, stride: usize) -> Result<Pooled> {
    let (c, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(CvlError::shape(format!("maxpool2d input must be C x H x W, got {s:?}"))),
    };
    check_window(width, stride, h.min(w))?;
    let (ho, wo) = ((h - width) / stride + 1, (w - width) / stride + 1);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let (y0, x0) = (oy * stride, ox * stride);
                let cells = (0..width).flat_map(|dy| {
                    (0..width).map(move |dx| ch * h * w + (y0 + dy) * w + x0 + dx)
                });
                let (best_i, best) = window_max(cells.map(|i| (i, x[i])));
                out.push(best);
                argmax.push(best_i);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(&[c, ho, wo], out)?,
        argmax,
    })
}

/// Scatters `grad_out` back to an input of `input_shape`.
pub fn maxpool_backward(grad_out: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    assert_eq!(grad_out.numel(), argmax.len());
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&src, &v) in argmax.iter().zip(grad_out.data()) {
        gd[src] += v;
    }
    g
}

fn window_max(mut cells: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    let first = cells.next().expect("non-empty window");
    cells.fold(first, |best, cur| if cur.1 > best.1 { cur } else { best })
}

fn check_window(width: usize, stride: usize, extent: usize) -> Result<()> {
    if width == 0 || stride == 0 {
        return Err(CvlError::shape("pool width and stride must be positive"));
    }
    if width > extent {
        return Err(CvlError::shape(format!(
            "pool width {width} exceeds input extent {extent}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_of_four() {
        let x = Tensor::new(&[1, 4], vec![1.0, 5.0, 2.0, 8.0]).unwrap();
        let p = temporal_maxpool(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[5.0, 8.0]);
        assert_eq!(p.argmax, vec![1, 3]);
    }

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::full(&[2, 10], 3.5);
        let p = temporal_maxpool(&x, 3, 3).unwrap();
        assert_eq!(p.output.shape(), &[2, 3]);
        assert!(p.output.data().iter().all(|&v| v == 3.5));
        let q = maxpool2d(&Tensor::full(&[2, 6, 6], -1.0), 2, 2).unwrap();
        assert!(q.output.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn full_width_window() {
        let x = Tensor::new(&[1, 5], vec![0.0, 4.0, -2.0, 4.0, 1.0]).unwrap();
        let p = temporal_maxpool(&x, 5, 1).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        // tie goes to the first maximum
        assert_eq!(p.argmax, vec![1]);
        let g = maxpool_backward(&Tensor::from_vec(vec![1.0]), &p.argmax, &[1, 5]);
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn wide_window_is_rejected() {
        assert!(temporal_maxpool(&Tensor::zeros(&[1, 2]), 3, 1).is_err());
        assert!(maxpool2d(&Tensor::zeros(&[1, 2, 5]), 3, 1).is_err());
    }

    #[test]
    fn pool2d_output_size_and_values() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let p = maxpool2d(&x, 2, 1).unwrap();
        assert_eq!(p.output.data(), &[5.0, 6.0, 8.0, 9.0]);
        let p = maxpool2d(&Tensor::zeros(&[1, 5, 5]), 2, 2).unwrap();
        assert_eq!(p.output.shape(), &[1, 2, 2]);
    }
}
