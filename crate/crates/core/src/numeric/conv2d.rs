//! Valid 2-D cross-correlation with square kernels, via im2col + GEMM.

use crate::error::{CvlError, Result};
use crate::numeric::conv1d::ConvGrads;
use crate::numeric::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Dims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

fn dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Dims> {
    let (c_in, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(CvlError::shape(format!("conv2d input must be C x H x W, got {s:?}"))),
    };
    let (c_out, wc, k) = match weights.shape() {
        [o, c, k1, k2] if k1 == k2 => (*o, *c, *k1),
        s => {
            return Err(CvlError::shape(format!(
                "conv2d weights must be O x C x k x k, got {s:?}"
            )))
        }
    };
    if wc != c_in {
        return Err(CvlError::shape(format!(
            "conv2d weights {:?} against input {:?}",
            weights.shape(),
            input.shape()
        )));
    }
    if k > h.min(w) {
        return Err(CvlError::shape(format!(
            "conv2d kernel {k} larger than input {h}x{w}"
        )));
    }
    bias.expect_shape(&[c_out], "conv2d bias")?;
    Ok(Dims {
        c_in,
        h,
        w,
        c_out,
        k,
        ho: h - k + 1,
        wo: w - k + 1,
    })
}

fn im2col(x: &[f64], d: Dims) -> Vec<f64> {
    let p = d.positions();
    let mut cols = vec![0.0; d.patch() * p];
    for c in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let r = (c * d.k + ky) * d.k + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..d.ho {
                    let src = &x[c * d.h * d.w + (oy + ky) * d.w + kx..][..d.wo];
                    dst[oy * d.wo..(oy + 1) * d.wo].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], d: Dims) -> Vec<f64> {
    let p = d.positions();
    let mut x = vec![0.0; d.c_in * d.h * d.w];
    for c in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let r = (c * d.k + ky) * d.k + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..d.ho {
                    let dst = &mut x[c * d.h * d.w + (oy + ky) * d.w + kx..][..d.wo];
                    for (a, b) in dst.iter_mut().zip(&src[oy * d.wo..(oy + 1) * d.wo]) {
                        *a += b;
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = dims(input, weights, bias)?;
    let cols = im2col(input.data(), d);
    let p = d.positions();
    let mut out = Vec::with_capacity(d.c_out * p);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, p));
    }
    gemm(
        MatRef::new(weights.data(), d.c_out, d.patch()),
        MatRef::new(&cols, d.patch(), p),
        1.0,
        &mut out,
    );
    Tensor::new(&[d.c_out, d.ho, d.wo], out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let d = dims(input, weights, bias)?;
    grad_out.expect_shape(&[d.c_out, d.ho, d.wo], "conv2d upstream gradient")?;
    let p = d.positions();
    let cols = im2col(input.data(), d);
    let g = MatRef::new(grad_out.data(), d.c_out, p);

    let mut gw = vec![0.0; d.c_out * d.patch()];
    gemm(g, MatRef::new(&cols, d.patch(), p).t(), 0.0, &mut gw);
    let gb: Vec<f64> = grad_out
        .data()
        .chunks_exact(p)
        .map(|plane| plane.iter().sum())
        .collect();

    let input_grad = if need_input_grad {
        let mut gcols = vec![0.0; d.patch() * p];
        gemm(
            MatRef::new(weights.data(), d.c_out, d.patch()).t(),
            g,
            0.0,
            &mut gcols,
        );
        Some(Tensor::new(&[d.c_in, d.h, d.w], col2im(&gcols, d))?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[d.c_out], gb)?,
    })
}

/// Input gradient only, skipping the weight and bias gradients.
pub fn conv2d_input_grad(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let d = dims(input, weights, bias)?;
    grad_out.expect_shape(&[d.c_out, d.ho, d.wo], "conv2d upstream gradient")?;
    let p = d.positions();
    let mut gcols = vec![0.0; d.patch() * p];
    gemm(
        MatRef::new(weights.data(), d.c_out, d.patch()).t(),
        MatRef::new(grad_out.data(), d.c_out, p),
        0.0,
        &mut gcols,
    );
    Tensor::new(&[d.c_in, d.h, d.w], col2im(&gcols, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_bias_planes() {
        let w = Tensor::full(&[2, 1, 2, 2], 0.7);
        let b = Tensor::from_vec(vec![1.0, -3.0]);
        let out = conv2d(&Tensor::zeros(&[1, 4, 5]), &w, &b).unwrap();
        assert_eq!(out.shape(), &[2, 3, 4]);
        assert!(out.data()[..12].iter().all(|&v| v == 1.0));
        assert!(out.data()[12..].iter().all(|&v| v == -3.0));
    }

    #[test]
    fn pointwise_scale() {
        let out = conv2d(
            &Tensor::full(&[1, 3, 3], 1.0),
            &Tensor::full(&[1, 1, 1, 1], 2.0),
            &Tensor::from_vec(vec![1.0]),
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn box_filter_sums() {
        let x = Tensor::new(&[1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let out = conv2d(&x, &Tensor::full(&[1, 1, 2, 2], 1.0), &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn kernel_larger_than_input() {
        let r = conv2d(&Tensor::zeros(&[1, 2, 8]), &Tensor::zeros(&[1, 1, 3, 3]), &Tensor::zeros(&[1]));
        assert!(matches!(r, Err(CvlError::Shape(_))));
    }
}
