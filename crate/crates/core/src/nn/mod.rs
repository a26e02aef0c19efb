//! Layers with explicit forward and backward passes.
//!
//! Each layer caches what its backward pass needs during `forward_train`; the
//! inference path (`forward`) takes `&self` and caches nothing.

mod conv;
mod init;
mod linear;
mod norm;
mod pool;
mod tensor;

pub use conv::Conv2d;
pub use init::{kaiming_normal_fan_out, uniform_fan_in};
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use pool::MaxPool2d;
pub use tensor::Tensor;

use crate::scalar::Scalar;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![T::zero(); len])
    }

    pub fn filled(len: usize, v: T) -> Self {
        Self::new(vec![v; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns parameters (and optionally non-trainable state buffers).
///
/// Visitation order is fixed; optimizers and checkpoints rely on it.
pub trait Module<T: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut Vec<T>)) {}

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Prefixes every visited name with `prefix.`.
pub(crate) fn scoped<'a, V: ?Sized>(
    prefix: &'a str,
    f: &'a mut dyn FnMut(&str, &mut V),
) -> impl FnMut(&str, &mut V) + 'a {
    move |name, v| f(&format!("{prefix}.{name}"), v)
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `grad` where the ReLU output was zero.
pub fn relu_backward<T: Scalar>(output: &[T], grad: &mut [T]) {
    debug_assert_eq!(output.len(), grad.len());
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences for layer tests.

    /// Max relative error between analytic and numeric gradients, with an
    /// absolute floor to avoid blowing up near zero.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / (a.abs().max(n.abs()).max(1e-6)))
            .fold(0.0, f64::max)
    }

    /// Numeric gradient of `loss` w.r.t. every entry of `x`.
    pub fn numeric_grad(x: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64, eps: f64) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = loss(x);
            x[i] = orig - eps;
            let minus = loss(x);
            x[i] = orig;
            out[i] = (plus - minus) / (2.0 * eps);
        }
        out
    }
}
