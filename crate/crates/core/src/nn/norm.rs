use super::{Module, Param, Tensor};
use crate::scalar::{lit, Scalar};

/// Per-channel batch normalization with running statistics for inference.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<NormCache<T>>,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(channels, T::one()),
            beta: Param::zeros(channels),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    /// Inference: normalizes with the running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.channels, "batch norm channels");
        let plane = x.h * x.w;
        let mut out = x.clone();
        for n in 0..x.n {
            for c in 0..x.c {
                let scale = self.gamma.value[c] / (self.running_var[c] + lit(self.eps)).sqrt();
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                let off = (n * x.c + c) * plane;
                for v in &mut out.data[off..off + plane] {
                    *v = *v * scale + shift;
                }
            }
        }
        out
    }

    /// Training: normalizes with batch statistics and updates the running ones.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.channels, "batch norm channels");
        let plane = x.h * x.w;
        let count = x.n * plane;
        let count_t: T = lit(count as f64);
        let momentum: T = lit(self.momentum);
        let mut normalized = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut out = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut inv_std = vec![T::zero(); x.c];
        for c in 0..x.c {
            let mut sum = T::zero();
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                sum += x.data[off..off + plane].iter().copied().sum::<T>();
            }
            let mean = sum / count_t;
            let mut sq = T::zero();
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                sq += x.data[off..off + plane]
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<T>();
            }
            let var = sq / count_t;
            let istd = T::one() / (var + lit(self.eps)).sqrt();
            inv_std[c] = istd;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                for i in off..off + plane {
                    let xh = (x.data[i] - mean) * istd;
                    normalized.data[i] = xh;
                    out.data[i] = xh * g + b;
                }
            }
            let unbiased = if count > 1 {
                sq / lit((count - 1) as f64)
            } else {
                var
            };
            self.running_mean[c] = (T::one() - momentum) * self.running_mean[c] + momentum * mean;
            self.running_var[c] = (T::one() - momentum) * self.running_var[c] + momentum * unbiased;
        }
        self.cache = Some(NormCache { normalized, inv_std });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let NormCache { normalized, inv_std } = self
            .cache
            .take()
            .expect("BatchNorm2d::backward called without forward_train");
        let (nb, ch) = (grad_out.n, grad_out.c);
        let plane = grad_out.h * grad_out.w;
        let count_t: T = lit((nb * plane) as f64);
        let mut grad_in = Tensor::zeros(nb, ch, grad_out.h, grad_out.w);
        for c in 0..ch {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for n in 0..nb {
                let off = (n * ch + c) * plane;
                for i in off..off + plane {
                    sum_dy += grad_out.data[i];
                    sum_dy_xh += grad_out.data[i] * normalized.data[i];
                }
            }
            self.beta.grad[c] += sum_dy;
            self.gamma.grad[c] += sum_dy_xh;
            let k = self.gamma.value[c] * inv_std[c] / count_t;
            for n in 0..nb {
                let off = (n * ch + c) * plane;
                for i in off..off + plane {
                    grad_in.data[i] =
                        k * (count_t * grad_out.data[i] - sum_dy - normalized.data[i] * sum_dy_xh);
                }
            }
        }
        grad_in
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};

    #[test]
    fn train_output_is_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_vec((0..3 * 2 * 4).map(|_| rng.random_range(-3.0..5.0)).collect(), 3, 2, 2, 2);
        let y = bn.forward_train(&x);
        for c in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| y.data[(n * 2 + c) * 4..(n * 2 + c + 1) * 4].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm2d::<f64>::new(3);
        bn.gamma.value = vec![0.7, 1.3, -0.4];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let x = Tensor::from_vec((0..2 * 3 * 9).map(|_| rng.random_range(-2.0..2.0)).collect(), 2, 3, 3, 3);
        let probe: Vec<f64> = (0..x.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |b: &BatchNorm2d<f64>, d: &[f64]| -> f64 {
            let mut b = b.clone();
            let y = b.forward_train(&Tensor::from_vec(d.to_vec(), 2, 3, 3, 3));
            y.data.iter().zip(&probe).map(|(a, p)| a * p).sum()
        };
        bn.forward_train(&x);
        let gin = bn.backward(&Tensor::from_vec(probe.clone(), 2, 3, 3, 3));
        let mut xd = x.data.clone();
        let num = numeric_grad(&mut xd, |d| loss(&bn, d), 1e-6);
        assert!(max_rel_err(&gin.data, &num) < 1e-5);

        let mut g = bn.gamma.value.clone();
        let num_g = numeric_grad(
            &mut g,
            |gv| {
                let mut b = bn.clone();
                b.gamma.value = gv.to_vec();
                loss(&b, &x.data)
            },
            1e-6,
        );
        assert!(max_rel_err(&bn.gamma.grad, &num_g) < 1e-6);
    }
}
