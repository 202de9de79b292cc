//! Valid (unpadded) 1-D cross-correlation along the length axis.

use crate::error::{CvlError, Result};
use crate::numeric::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

struct Dims {
    c_in: usize,
    len: usize,
    c_out: usize,
    width: usize,
    out_len: usize,
}

fn dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Dims> {
    let (c_in, len) = match input.shape() {
        [c, l] => (*c, *l),
        s => return Err(CvlError::shape(format!("temporal_conv input must be C x L, got {s:?}"))),
    };
    let (c_out, wc, width) = match weights.shape() {
        [o, c, w] => (*o, *c, *w),
        s => return Err(CvlError::shape(format!("temporal_conv weights must be O x C x w, got {s:?}"))),
    };
    if wc != c_in {
        return Err(CvlError::shape(format!(
            "temporal_conv weights {:?} against input {:?}",
            weights.shape(),
            input.shape()
        )));
    }
    if width > len {
        return Err(CvlError::shape(format!(
            "temporal_conv filter width {width} exceeds sequence length {len}"
        )));
    }
    bias.expect_shape(&[c_out], "temporal_conv bias")?;
    Ok(Dims {
        c_in,
        len,
        c_out,
        width,
        out_len: len - width + 1,
    })
}

/// `cols[(c*w + k)][t] = input[c][t + k]`
fn im2col(input: &[f64], d: &Dims) -> Vec<f64> {
    let mut cols = vec![0.0; d.c_in * d.width * d.out_len];
    for c in 0..d.c_in {
        let row = &input[c * d.len..(c + 1) * d.len];
        for k in 0..d.width {
            let dst = &mut cols[(c * d.width + k) * d.out_len..(c * d.width + k + 1) * d.out_len];
            dst.copy_from_slice(&row[k..k + d.out_len]);
        }
    }
    cols
}

pub fn temporal_conv(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = dims(input, weights, bias)?;
    let cols = im2col(input.data(), &d);
    let mut out = Vec::with_capacity(d.c_out * d.out_len);
    for &b in bias.data() {
        out.extend(std::iter::repeat_n(b, d.out_len));
    }
    let k = d.c_in * d.width;
    gemm(
        MatRef::new(weights.data(), d.c_out, k),
        MatRef::new(&cols, k, d.out_len),
        1.0,
        &mut out,
    );
    Tensor::new(&[d.c_out, d.out_len], out)
}

pub fn temporal_conv_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let d = dims(input, weights, bias)?;
    grad_out.expect_shape(&[d.c_out, d.out_len], "temporal_conv upstream gradient")?;
    let k = d.c_in * d.width;
    let cols = im2col(input.data(), &d);

    let mut gw = vec![0.0; d.c_out * k];
    gemm(
        MatRef::new(grad_out.data(), d.c_out, d.out_len),
        MatRef::new(&cols, k, d.out_len).t(),
        0.0,
        &mut gw,
    );
    let gb: Vec<f64> = (0..d.c_out).map(|o| grad_out.row(o).iter().sum()).collect();

    let input_grad = if need_input_grad {
        let mut gcols = vec![0.0; k * d.out_len];
        gemm(
            MatRef::new(weights.data(), d.c_out, k).t(),
            MatRef::new(grad_out.data(), d.c_out, d.out_len),
            0.0,
            &mut gcols,
        );
        let mut gi = vec![0.0; d.c_in * d.len];
        for c in 0..d.c_in {
            for kk in 0..d.width {
                let src = &gcols[(c * d.width + kk) * d.out_len..(c * d.width + kk + 1) * d.out_len];
                let dst = &mut gi[c * d.len + kk..c * d.len + kk + d.out_len];
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        Some(Tensor::new(&[d.c_in, d.len], gi)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::new(weights.shape(), gw)?,
        bias: Tensor::new(&[d.c_out], gb)?,
    })
}

/// [`temporal_conv`] specialised to a one-hot input given by its active
/// channel per position. Equal to the dense version on the expanded input.
pub fn temporal_conv_onehot(
    indices: &[usize],
    channels: usize,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let (c_out, width) = onehot_dims(indices, channels, weights, bias)?;
    let out_len = indices.len() - width + 1;
    let w = weights.data();
    let mut out = vec![0.0; c_out * out_len];
    for o in 0..c_out {
        let b = bias.data()[o];
        let wo = &w[o * channels * width..(o + 1) * channels * width];
        for (t, slot) in out[o * out_len..(o + 1) * out_len].iter_mut().enumerate() {
            let mut acc = b;
            for k in 0..width {
                acc += wo[indices[t + k] * width + k];
            }
            *slot = acc;
        }
    }
    Tensor::new(&[c_out, out_len], out)
}

/// Weight and bias gradients of [`temporal_conv_onehot`].
pub fn temporal_conv_onehot_backward(
    indices: &[usize],
    channels: usize,
    weights: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Result<()> {
    let (c_out, width) = (weights.shape()[0], weights.shape()[2]);
    let out_len = indices.len() - width + 1;
    grad_out.expect_shape(&[c_out, out_len], "onehot conv upstream gradient")?;
    let gw = grad_w.data_mut();
    for o in 0..c_out {
        let g = grad_out.row(o);
        grad_b.data_mut()[o] += g.iter().sum::<f64>();
        let base = o * channels * width;
        for (t, &gv) in g.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            for k in 0..width {
                gw[base + indices[t + k] * width + k] += gv;
            }
        }
    }
    Ok(())
}

fn onehot_dims(
    indices: &[usize],
    channels: usize,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize)> {
    let (c_out, wc, width) = match weights.shape() {
        [o, c, w] => (*o, *c, *w),
        s => return Err(CvlError::shape(format!("weights must be O x C x w, got {s:?}"))),
    };
    if wc != channels {
        return Err(CvlError::shape(format!(
            "weights {:?} against {channels} input channels",
            weights.shape()
        )));
    }
    if width > indices.len() {
        return Err(CvlError::shape(format!(
            "filter width {width} exceeds sequence length {}",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= channels) {
        return Err(CvlError::Index {
            index: bad,
            len: channels,
        });
    }
    bias.expect_shape(&[c_out], "bias")?;
    Ok((c_out, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::randn(&[3, 2, 4], 1.0, &mut rng);
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        let out = temporal_conv(&Tensor::zeros(&[2, 9]), &w, &b).unwrap();
        assert_eq!(out.shape(), &[3, 6]);
        for o in 0..3 {
            assert!(out.row(o).iter().all(|&v| v == b.data()[o]));
        }
    }

    #[test]
    fn difference_filter() {
        let out = temporal_conv(
            &t(&[1, 3], &[1.0, 2.0, 3.0]),
            &t(&[1, 1, 3], &[1.0, 0.0, -1.0]),
            &t(&[1], &[0.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[-2.0]);
    }

    #[test]
    fn unit_filter_is_identity() {
        let x = t(&[1, 4], &[0.3, -1.0, 2.5, 7.0]);
        let out = temporal_conv(&x, &t(&[1, 1, 1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn wide_filter_is_rejected() {
        let r = temporal_conv(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 1, 4]), &Tensor::zeros(&[1]));
        assert!(matches!(r, Err(CvlError::Shape(_))));
    }

    #[test]
    fn onehot_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let channels = 6;
        let idx = [0usize, 3, 5, 5, 1, 2, 4, 0, 3];
        let mut dense = Tensor::zeros(&[channels, idx.len()]);
        for (pos, &c) in idx.iter().enumerate() {
            dense.data_mut()[c * idx.len() + pos] = 1.0;
        }
        let w = Tensor::randn(&[4, channels, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[4], 1.0, &mut rng);
        let fast = temporal_conv_onehot(&idx, channels, &w, &b).unwrap();
        let slow = temporal_conv(&dense, &w, &b).unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-12);

        let g = Tensor::randn(fast.shape(), 1.0, &mut rng);
        let dense_grads = temporal_conv_backward(&dense, &w, &b, &g, false).unwrap();
        let mut gw = Tensor::zeros(w.shape());
        let mut gb = Tensor::zeros(b.shape());
        temporal_conv_onehot_backward(&idx, channels, &w, &g, &mut gw, &mut gb).unwrap();
        assert!(gw.max_abs_diff(&dense_grads.weights) < 1e-12);
        assert!(gb.max_abs_diff(&dense_grads.bias) < 1e-12);
    }
}
