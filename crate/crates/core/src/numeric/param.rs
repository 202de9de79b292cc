use std::collections::HashSet;

use crate::error::{CvlError, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Overwrites the gradient; the shape must match the value.
    pub fn set_grad(&mut self, grad: Tensor) {
        assert_eq!(grad.shape(), self.value.shape(), "gradient shape for {}", self.name);
        self.grad = grad;
    }
}

/// A model exposing its parameters in a fixed order.
pub trait ParameterSet {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grads(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn num_values(&self) -> usize {
        self.parameters().iter().map(|p| p.value.numel()).sum()
    }
}

pub(crate) fn ensure_unique_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(CvlError::Format(format!("duplicate parameter name {n:?}")));
        }
    }
    Ok(())
}

/// Plain list of parameters, handy for tests and ad-hoc objectives.
#[derive(Clone, Debug, Default)]
pub struct ParamList(pub Vec<Parameter>);

impl ParameterSet for ParamList {
    fn parameters(&self) -> Vec<&Parameter> {
        self.0.iter().collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.0.iter_mut().collect()
    }
}

/// Gradients for a [`ParameterSet`], one tensor per parameter in the same
/// order. Used to accumulate per-sample gradients before storing them.
#[derive(Clone, Debug)]
pub struct GradBuffer(pub Vec<Tensor>);

impl GradBuffer {
    pub fn zeros_like<P: ParameterSet + ?Sized>(model: &P) -> Self {
        GradBuffer(
            model
                .parameters()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        )
    }

    pub fn add_assign(&mut self, other: &GradBuffer) {
        assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|t| t.scale(factor));
    }

    /// Moves the buffer into the parameters' `grad` fields.
    pub fn store_into<P: ParameterSet + ?Sized>(self, model: &mut P) {
        let params = model.parameters_mut();
        assert_eq!(params.len(), self.0.len());
        for (p, g) in params.into_iter().zip(self.0) {
            p.set_grad(g);
        }
    }
}
