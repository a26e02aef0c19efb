use rand::Rng;

use super::{init, Module, Param, Tensor};
use crate::scalar::Scalar;

/// Bias-free 2-D convolution lowered to a matrix product via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out_channels x (in_channels * kernel * kernel)`
    pub weight: Param<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let len = out_channels * in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(init::kaiming_normal_fan_out(len, fan_out, rng)),
            cached_input: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, img: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let src = &img[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            *v = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize, img: &mut [T]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let dst = &mut img[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_hw(x.h, x.w);
        let mut out = Tensor::zeros(x.n, self.out_channels, oh, ow);
        let mut col = vec![T::zero(); self.patch_len() * oh * ow];
        for i in 0..x.n {
            self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut col);
            T::gemm(
                false,
                false,
                self.out_channels,
                oh * ow,
                self.patch_len(),
                T::one(),
                &self.weight.value,
                &col,
                T::zero(),
                out.sample_mut(i),
            );
        }
        out
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let out = self.forward(x);
        self.cached_input = Some(x.clone());
        out
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        self.backward_inner(grad_out, true)
    }

    /// Accumulates the weight gradient only; for layers fed directly by data.
    pub fn backward_weights(&mut self, grad_out: &Tensor<T>) {
        self.backward_inner(grad_out, false);
    }

    fn backward_inner(&mut self, grad_out: &Tensor<T>, input_grad: bool) -> Tensor<T> {
        let x = self
            .cached_input
            .take()
            .expect("Conv2d::backward called without forward_train");
        let (oh, ow) = (grad_out.h, grad_out.w);
        let plane = oh * ow;
        let kk = self.patch_len();
        let mut grad_in = if input_grad {
            Tensor::zeros(x.n, x.c, x.h, x.w)
        } else {
            Tensor::zeros(0, x.c, x.h, x.w)
        };
        let mut col = vec![T::zero(); kk * plane];
        let mut dcol = vec![T::zero(); kk * plane];
        for i in 0..x.n {
            self.im2col(x.sample(i), x.h, x.w, oh, ow, &mut col);
            let g = grad_out.sample(i);
            T::gemm(
                false,
                true,
                self.out_channels,
                kk,
                plane,
                T::one(),
                g,
                &col,
                T::one(),
                &mut self.weight.grad,
            );
            if !input_grad {
                continue;
            }
            T::gemm(
                true,
                false,
                kk,
                plane,
                self.out_channels,
                T::one(),
                &self.weight.value,
                g,
                T::zero(),
                &mut dcol,
            );
            self.col2im(&dcol, x.h, x.w, oh, ow, grad_in.sample_mut(i));
        }
        grad_in
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};

    fn direct_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.output_hw(x.h, x.w);
        let k = conv.kernel;
        let mut out = Tensor::zeros(x.n, conv.out_channels, oh, ow);
        for n in 0..x.n {
            for o in 0..conv.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..x.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((n * x.c + c) * x.h + iy as usize) * x.w + ix as usize];
                                    let wv = conv.weight.value[((o * x.c + c) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data[((n * conv.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec((0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect(), n, c, h, w)
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3)] {
            let conv = Conv2d::<f64>::new(3, 4, k, s, p, &mut rng);
            let x = random_tensor(&mut rng, 2, 3, 9, 8);
            let a = conv.forward(&x);
            let b = direct_conv(&conv, &x);
            assert_eq!(a.shape(), b.shape());
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let x = random_tensor(&mut rng, 2, 2, 5, 5);
        let probe = random_tensor(&mut rng, 2, 3, 3, 3);
        let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
            c.forward(x).data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
        };

        conv.forward_train(&x);
        let grad_in = conv.backward(&probe);

        let mut xd = x.data.clone();
        let num_x = numeric_grad(
            &mut xd,
            |d| loss(&conv, &Tensor::from_vec(d.to_vec(), 2, 2, 5, 5)),
            1e-6,
        );
        assert!(max_rel_err(&grad_in.data, &num_x) < 1e-6);

        let analytic_w = conv.weight.grad.clone();
        let mut w = conv.weight.value.clone();
        let num_w = numeric_grad(
            &mut w,
            |wv| {
                let mut c = conv.clone();
                c.weight.value = wv.to_vec();
                loss(&c, &x)
            },
            1e-6,
        );
        assert!(max_rel_err(&analytic_w, &num_w) < 1e-6);
    }
}
