//! Vanilla tanh recurrent cell, `h_t = tanh(W_x x_t + W_h h_{t-1} + b)`,
//! unrolled over a sequence with `h_0 = 0` and full backpropagation
//! through time.

use crate::error::{CvlError, Result};
use crate::numeric::linalg::{gemm, MatRef};
use crate::tensor::{dot, Tensor};

pub struct RnnGrads {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
    pub inputs: Tensor,
}

/// One step of the cell.
pub fn rnn_step(x_t: &[f64], h_prev: &[f64], w_x: &Tensor, w_h: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (d_h, d_in) = check(w_x, w_h, b)?;
    if x_t.len() != d_in || h_prev.len() != d_h {
        return Err(CvlError::shape(format!(
            "rnn_step: x {} / h {} against W_x {:?}",
            x_t.len(),
            h_prev.len(),
            w_x.shape()
        )));
    }
    Ok((0..d_h)
        .map(|j| (b.data()[j] + dot(w_x.row(j), x_t) + dot(w_h.row(j), h_prev)).tanh())
        .collect())
}

/// Runs the cell over the rows of `xs` (`L x d_in`), returning `L x d_h`.
pub fn rnn_forward(xs: &Tensor, w_x: &Tensor, w_h: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (d_h, d_in) = check(w_x, w_h, b)?;
    let len = match xs.shape() {
        [l, d] if *d == d_in => *l,
        s => {
            return Err(CvlError::shape(format!(
                "rnn inputs {s:?} against W_x {:?}",
                w_x.shape()
            )))
        }
    };
    let mut hs = input_projection(xs, w_x, len, d_in, d_h);
    for t in 0..len {
        let (done, rest) = hs.split_at_mut(t * d_h);
        let row = &mut rest[..d_h];
        let prev = if t == 0 { None } else { Some(&done[(t - 1) * d_h..]) };
        for j in 0..d_h {
            let mut a = row[j] + b.data()[j];
            if let Some(p) = prev {
                a += dot(w_h.row(j), p);
            }
            row[j] = a.tanh();
        }
    }
    Tensor::new(&[len, d_h], hs)
}

/// Backpropagation through time. `hs` is the output of [`rnn_forward`] and
/// `grad_hs` the upstream gradient on every hidden state.
pub fn rnn_backward(
    xs: &Tensor,
    hs: &Tensor,
    w_x: &Tensor,
    w_h: &Tensor,
    grad_hs: &Tensor,
) -> Result<RnnGrads> {
    let (d_h, d_in) = (w_x.shape()[0], w_x.shape()[1]);
    let len = hs.shape()[0];
    grad_hs.expect_shape(hs.shape(), "rnn upstream gradient")?;

    // pre-activation gradients, one row per step
    let mut da = vec![0.0; len * d_h];
    let mut carry = vec![0.0; d_h];
    let mut grad_wh = Tensor::zeros(&[d_h, d_h]);
    for t in (0..len).rev() {
        let h = hs.row(t);
        let g = grad_hs.row(t);
        let row = &mut da[t * d_h..(t + 1) * d_h];
        for j in 0..d_h {
            row[j] = (g[j] + carry[j]) * (1.0 - h[j] * h[j]);
        }
        carry.iter_mut().for_each(|c| *c = 0.0);
        if t > 0 {
            let h_prev = hs.row(t - 1);
            let gwh = grad_wh.data_mut();
            for (j, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                crate::tensor::axpy(a, h_prev, &mut gwh[j * d_h..(j + 1) * d_h]);
                crate::tensor::axpy(a, w_h.row(j), &mut carry);
            }
        }
    }

    let mut grad_wx = vec![0.0; d_h * d_in];
    gemm(
        MatRef::new(&da, len, d_h).t(),
        MatRef::new(xs.data(), len, d_in),
        0.0,
        &mut grad_wx,
    );
    let mut grad_xs = vec![0.0; len * d_in];
    gemm(
        MatRef::new(&da, len, d_h),
        MatRef::new(w_x.data(), d_h, d_in),
        0.0,
        &mut grad_xs,
    );
    let mut grad_b = vec![0.0; d_h];
    for row in da.chunks_exact(d_h) {
        for (gb, a) in grad_b.iter_mut().zip(row) {
            *gb += a;
        }
    }

    Ok(RnnGrads {
        w_x: Tensor::new(&[d_h, d_in], grad_wx)?,
        w_h: grad_wh,
        bias: Tensor::new(&[d_h], grad_b)?,
        inputs: Tensor::new(&[len, d_in], grad_xs)?,
    })
}

fn input_projection(xs: &Tensor, w_x: &Tensor, len: usize, d_in: usize, d_h: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d_h];
    gemm(
        MatRef::new(xs.data(), len, d_in),
        MatRef::new(w_x.data(), d_h, d_in).t(),
        0.0,
        &mut out,
    );
    out
}

fn check(w_x: &Tensor, w_h: &Tensor, b: &Tensor) -> Result<(usize, usize)> {
    let (d_h, d_in) = match w_x.shape() {
        [h, i] => (*h, *i),
        s => return Err(CvlError::shape(format!("W_x must be a matrix, got {s:?}"))),
    };
    w_h.expect_shape(&[d_h, d_h], "W_h")?;
    b.expect_shape(&[d_h], "rnn bias")?;
    Ok((d_h, d_in))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let hs = rnn_forward(&xs, &Tensor::zeros(&[5, 4]), &Tensor::zeros(&[5, 5]), &Tensor::zeros(&[5])).unwrap();
        assert!(hs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_input_path_stays_at_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = Tensor::randn(&[6, 3], 1.0, &mut rng);
        let mut wh = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            wh.data_mut()[i * 3 + i] = 0.1;
        }
        let hs = rnn_forward(&xs, &Tensor::zeros(&[3, 3]), &wh, &Tensor::zeros(&[3])).unwrap();
        assert!(hs.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_step() {
        let one = Tensor::full(&[1, 1], 1.0);
        let h = rnn_step(&[0.5], &[0.0], &one, &Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1])).unwrap();
        assert!((h[0] - 0.5f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn sequence_equals_repeated_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let wx = Tensor::randn(&[4, 3], 0.5, &mut rng);
        let wh = Tensor::randn(&[4, 4], 0.5, &mut rng);
        let b = Tensor::randn(&[4], 0.5, &mut rng);
        let hs = rnn_forward(&xs, &wx, &wh, &b).unwrap();
        let mut h = vec![0.0; 4];
        for t in 0..5 {
            h = rnn_step(xs.row(t), &h, &wx, &wh, &b).unwrap();
            for j in 0..4 {
                assert!((h[j] - hs.row(t)[j]).abs() < 1e-14);
            }
        }
    }
}
