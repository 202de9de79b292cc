//! RMSprop: `ms <- decay*ms + (1-decay)*g^2`, `theta <- theta - lr*g/sqrt(ms+eps)`.

use crate::numeric::param::ParameterSet;
use crate::tensor::Tensor;

pub const DEFAULT_DECAY: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct RmspropState {
    pub mean_square: Vec<Tensor>,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl RmspropState {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_decay(learning_rate, DEFAULT_DECAY, DEFAULT_EPSILON)
    }

    pub fn with_decay(learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!(decay > 0.0 && decay < 1.0, "decay must lie in (0, 1)");
        assert!(epsilon > 0.0, "epsilon must be positive");
        RmspropState {
            mean_square: Vec::new(),
            learning_rate,
            decay,
            epsilon,
        }
    }
}

/// Applies one update using the gradients currently stored in `params`.
pub fn rmsprop_step<P: ParameterSet + ?Sized>(params: &mut P, state: &mut RmspropState) {
    let mut params = params.parameters_mut();
    if state.mean_square.is_empty() {
        state.mean_square = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    }
    assert_eq!(state.mean_square.len(), params.len(), "optimizer state out of sync");
    let (lr, decay, eps) = (state.learning_rate, state.decay, state.epsilon);
    for (p, ms) in params.iter_mut().zip(state.mean_square.iter_mut()) {
        assert!(ms.same_shape(&p.value), "optimizer state shape for {}", p.name);
        let grads = p.grad.data();
        for ((theta, m), &g) in p.value.data_mut().iter_mut().zip(ms.data_mut()).zip(grads) {
            *m = decay * *m + (1.0 - decay) * g * g;
            *theta -= lr * g / (*m + eps).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::param::{ParamList, Parameter};

    fn scalar(v: f64, g: f64) -> ParamList {
        let mut p = Parameter::new("theta", Tensor::from_vec(vec![v]));
        p.grad = Tensor::from_vec(vec![g]);
        ParamList(vec![p])
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = scalar(3.25, 0.0);
        let mut st = RmspropState::new(0.0007);
        for _ in 0..5 {
            rmsprop_step(&mut params, &mut st);
        }
        assert_eq!(params.0[0].value.data(), &[3.25]);
    }

    #[test]
    fn single_scalar_step() {
        let mut params = scalar(1.0, 1.0);
        let mut st = RmspropState::new(0.0007);
        rmsprop_step(&mut params, &mut st);
        assert!((st.mean_square[0].data()[0] - 0.1).abs() < 1e-15);
        let expected = 1.0 - 0.0007 / (0.1f64 + 1e-8).sqrt();
        assert!((params.0[0].value.data()[0] - expected).abs() < 1e-15);
        assert!((params.0[0].value.data()[0] - 0.997786).abs() < 1e-6);
    }

    #[test]
    fn two_steps_accumulate_mean_square() {
        let g = 2.5;
        let mut params = scalar(0.0, g);
        let mut st = RmspropState::new(0.01);
        rmsprop_step(&mut params, &mut st);
        rmsprop_step(&mut params, &mut st);
        // 0.9 * 0.1 g^2 + 0.1 g^2
        assert!((st.mean_square[0].data()[0] - 0.19 * g * g).abs() < 1e-12);
    }
}
