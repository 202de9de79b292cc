//! Matrix products. Everything funnels through [`gemm`], a thin strided
//! wrapper over `matrixmultiply::dgemm`.

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;

/// Row-major matrix view description used by [`gemm`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The transpose of this view, without copying.
    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical_dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta * c + a * b`, with `c` a row-major `m x n` buffer.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    let (m, k) = a.logical_dims();
    let (k2, n) = b.logical_dims();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the slices cover exactly the index ranges implied by the
    // dimensions and strides checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a[m x k] * b[k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a)?;
    let (k2, n) = as_matrix(b)?;
    if k != k2 {
        return Err(CvlError::shape(format!(
            "matmul of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(MatRef::new(a.data(), m, k), MatRef::new(b.data(), k, n), 0.0, &mut out);
    Tensor::new(&[m, n], out)
}

/// Gradients of `matmul` given the upstream gradient `grad` (`m x n`).
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = as_matrix(a)?;
    let (_, n) = as_matrix(b)?;
    grad.expect_shape(&[m, n], "matmul upstream gradient")?;
    let mut ga = vec![0.0; m * k];
    gemm(
        MatRef::new(grad.data(), m, n),
        MatRef::new(b.data(), k, n).t(),
        0.0,
        &mut ga,
    );
    let mut gb = vec![0.0; k * n];
    gemm(
        MatRef::new(a.data(), m, k).t(),
        MatRef::new(grad.data(), m, n),
        0.0,
        &mut gb,
    );
    Ok((Tensor::new(&[m, k], ga)?, Tensor::new(&[k, n], gb)?))
}

fn as_matrix(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(CvlError::shape(format!("expected a matrix, got {s:?}"))),
    }
}

/// Dense affine map `y = W x + b` with `W` stored `out x in`.
pub fn linear(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (out, inp) = as_matrix(w)?;
    if x.len() != inp || b.numel() != out {
        return Err(CvlError::shape(format!(
            "linear: input {} against weights {:?} and bias {:?}",
            x.len(),
            w.shape(),
            b.shape()
        )));
    }
    Ok((0..out)
        .map(|o| b.data()[o] + crate::tensor::dot(w.row(o), x))
        .collect())
}

/// Accumulates the gradients of [`linear`] and returns the input gradient.
pub fn linear_backward(
    x: &[f64],
    w: &Tensor,
    grad_out: &[f64],
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
) -> Vec<f64> {
    let inp = x.len();
    let mut grad_x = vec![0.0; inp];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad_b.data_mut()[o] += g;
        let gw = &mut grad_w.data_mut()[o * inp..(o + 1) * inp];
        crate::tensor::axpy(g, x, gw);
        crate::tensor::axpy(g, w.row(o), &mut grad_x);
    }
    grad_x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.get2(i, p) * b.get2(p, j);
                }
            }
        }
        Tensor::new(&[m, n], c).unwrap()
    }

    #[test]
    fn identity_times_column() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let col = Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(matmul(&eye, &col).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn small_product_matches_triple_loop() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, naive(&a, &b));
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn zeros_annihilate() {
        let a = Tensor::from_rows(&[vec![1.5, -2.0, 3.0]]).unwrap();
        let z = Tensor::zeros(&[3, 4]);
        assert!(matmul(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_views() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut c = vec![0.0; 9];
        gemm(
            MatRef::new(a.data(), 2, 3).t(),
            MatRef::new(a.data(), 2, 3),
            0.0,
            &mut c,
        );
        assert_eq!(c, vec![17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
