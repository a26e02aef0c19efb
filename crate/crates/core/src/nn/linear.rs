use rand::Rng;

use super::{init, Module, Param};
use crate::scalar::Scalar;

/// Affine map `y = W x + b` applied row-wise to a `batch x in_features` matrix.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features x in_features`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(init::uniform_fan_in(out_features * in_features, in_features, rng)),
            bias: Param::new(init::uniform_fan_in(out_features, in_features, rng)),
        }
    }

    pub fn zeroed(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::zeros(out_features * in_features),
            bias: Param::zeros(out_features),
        }
    }

    /// `rows` is `batch x in_features`; returns `batch x out_features`.
    pub fn forward(&self, rows: &[T], batch: usize) -> Vec<T> {
        assert_eq!(rows.len(), batch * self.in_features, "linear input length");
        let mut out = Vec::with_capacity(batch * self.out_features);
        for _ in 0..batch {
            out.extend_from_slice(&self.bias.value);
        }
        T::gemm(
            false,
            true,
            batch,
            self.out_features,
            self.in_features,
            T::one(),
            rows,
            &self.weight.value,
            T::one(),
            &mut out,
        );
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, rows: &[T], grad_out: &[T], batch: usize) -> Vec<T> {
        assert_eq!(grad_out.len(), batch * self.out_features);
        T::gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            batch,
            T::one(),
            grad_out,
            rows,
            T::one(),
            &mut self.weight.grad,
        );
        for b in 0..batch {
            for (g, &d) in self
                .bias
                .grad
                .iter_mut()
                .zip(&grad_out[b * self.out_features..(b + 1) * self.out_features])
            {
                *g += d;
            }
        }
        let mut grad_in = vec![T::zero(); batch * self.in_features];
        T::gemm(
            false,
            false,
            batch,
            self.in_features,
            self.out_features,
            T::one(),
            grad_out,
            &self.weight.value,
            T::zero(),
            &mut grad_in,
        );
        grad_in
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.3).sin()).collect();
        let probe: Vec<f64> = (0..6).map(|i| (i as f64 * 0.9).cos()).collect();
        let loss = |l: &Linear<f64>, x: &[f64]| -> f64 {
            l.forward(x, 2).iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let gin = lin.backward(&x, &probe, 2);
        let mut xd = x.clone();
        assert!(max_rel_err(&gin, &numeric_grad(&mut xd, |d| loss(&lin, d), 1e-6)) < 1e-7);
        let mut w = lin.weight.value.clone();
        let num_w = numeric_grad(
            &mut w,
            |wv| {
                let mut l = lin.clone();
                l.weight.value = wv.to_vec();
                loss(&l, &x)
            },
            1e-6,
        );
        assert!(max_rel_err(&lin.weight.grad, &num_w) < 1e-7);
    }
}
