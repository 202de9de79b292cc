//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numeric::param::ParameterSet;

pub const DEFAULT_STEP: f64 = 1e-5;

const KINK_SCREEN: f64 = 1e-6;
const KINK_SLOPE_GAP: f64 = 1e-2;
const KINK_STEP_FACTOR: f64 = 1e-2;

/// Which coordinates of each parameter tensor to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// At most `per_tensor` coordinates per tensor, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates re-probed with a smaller step because the two one-sided
    /// slopes disagreed (a ReLU or max-pool switch inside `[x-h, x+h]`).
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }

    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worst_is_other = other.max_rel_error > self.max_rel_error;
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            worst: if worst_is_other { other.worst } else { self.worst },
            checked: self.checked + other.checked,
            kinks: self.kinks + other.kinks,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients already stored in `model` against central
/// differences `(f(x+h) - f(x-h)) / 2h` of `loss`.
pub fn grad_check<P, F>(model: &mut P, mut loss: F, h: f64, coords: Coords) -> GradCheckReport
where
    P: ParameterSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    let shapes: Vec<usize> = model.parameters().iter().map(|p| p.value.numel()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        kinks: 0,
    };
    for (pi, &n) in shapes.iter().enumerate() {
        let indices: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample { per_tensor, seed } => {
                if per_tensor >= n {
                    (0..n).collect()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pi as u64).wrapping_mul(0x9E37_79B9));
                    let mut v = sample(&mut rng, n, per_tensor).into_vec();
                    v.sort_unstable();
                    v
                }
            }
        };
        for i in indices {
            let (orig, analytic) = {
                let p = &model.parameters()[pi];
                (p.value.data()[i], p.grad.data()[i])
            };
            model.parameters_mut()[pi].value.data_mut()[i] = orig + h;
            let up = loss(model);
            model.parameters_mut()[pi].value.data_mut()[i] = orig - h;
            let down = loss(model);
            model.parameters_mut()[pi].value.data_mut()[i] = orig;
            let mut err = relative_error(analytic, (up - down) / (2.0 * h));
            if err > KINK_SCREEN {
                let mid = loss(model);
                if relative_error((up - mid) / h, (mid - down) / h) > KINK_SLOPE_GAP {
                    let h2 = h * KINK_STEP_FACTOR;
                    model.parameters_mut()[pi].value.data_mut()[i] = orig + h2;
                    let up = loss(model);
                    model.parameters_mut()[pi].value.data_mut()[i] = orig - h2;
                    let down = loss(model);
                    model.parameters_mut()[pi].value.data_mut()[i] = orig;
                    err = relative_error(analytic, (up - down) / (2.0 * h2));
                    report.kinks += 1;
                }
            }
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((model.parameters()[pi].name.clone(), i));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::param::{ParamList, Parameter};
    use crate::tensor::Tensor;
    use rand_chacha::ChaCha8Rng;

    fn half_norm_sq(p: &ParamList) -> f64 {
        p.0.iter().flat_map(|p| p.value.data()).map(|v| 0.5 * v * v).sum()
    }

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamList(vec![
            Parameter::new("a", Tensor::randn(&[3, 4], 1.0, &mut rng)),
            Parameter::new("b", Tensor::randn(&[5], 2.0, &mut rng)),
        ]);
        for p in &mut params.0 {
            p.grad = p.value.clone();
        }
        let r = grad_check(&mut params, half_norm_sq, 1e-5, Coords::All);
        assert_eq!(r.checked, 17);
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut params = ParamList(vec![Parameter::new("a", Tensor::from_vec(vec![1.0, 2.0]))]);
        params.0[0].grad = Tensor::from_vec(vec![1.0, 3.0]);
        let r = grad_check(&mut params, half_norm_sq, 1e-5, Coords::All);
        assert!(r.max_rel_error > 0.3);
        assert_eq!(r.worst, Some(("a".to_string(), 1)));
    }

    #[test]
    fn sampling_limits_coordinates() {
        let mut params = ParamList(vec![Parameter::new("a", Tensor::zeros(&[100]))]);
        let r = grad_check(&mut params, half_norm_sq, 1e-5, Coords::Sample { per_tensor: 7, seed: 1 });
        assert_eq!(r.checked, 7);
    }

    #[test]
    fn kink_inside_step_is_reprobed() {
        // |x - 0.3| with x 3e-6 above the kink; slope is exactly 1 there
        let abs_dev = |p: &ParamList| (p.0[0].value.data()[0] - 0.3).abs();
        let mut params = ParamList(vec![Parameter::new("a", Tensor::from_vec(vec![0.3 + 3e-6]))]);
        params.0[0].grad = Tensor::from_vec(vec![1.0]);
        let r = grad_check(&mut params, abs_dev, 1e-5, Coords::All);
        assert_eq!(r.kinks, 1);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        // a wrong gradient at the same point still fails
        params.0[0].grad = Tensor::from_vec(vec![-1.0]);
        let r = grad_check(&mut params, abs_dev, 1e-5, Coords::All);
        assert!(r.max_rel_error > 1.0);
    }
}
