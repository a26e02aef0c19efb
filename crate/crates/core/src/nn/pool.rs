use super::Tensor;
use crate::scalar::Scalar;

/// Max pooling; padded cells never win.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<u32>, [usize; 4])>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn run<T: Scalar>(&self, x: &Tensor<T>, mut record: Option<&mut Vec<u32>>) -> Tensor<T> {
        let (oh, ow) = self.output_hw(x.h, x.w);
        let mut out = Tensor::zeros(x.n, x.c, oh, ow);
        let plane_in = x.h * x.w;
        for nc in 0..x.n * x.c {
            let src = &x.data[nc * plane_in..(nc + 1) * plane_in];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut arg = 0usize;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let idx = iy as usize * x.w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                arg = idx;
                            }
                        }
                    }
                    out.data[(nc * oh + oy) * ow + ox] = best;
                    if let Some(r) = record.as_deref_mut() {
                        r.push(arg as u32);
                    }
                }
            }
        }
        out
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x, None)
    }

    pub fn forward_train<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut idx = Vec::new();
        let out = self.run(x, Some(&mut idx));
        self.cache = Some((idx, x.shape()));
        out
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (idx, [n, c, h, w]) = self
            .cache
            .take()
            .expect("MaxPool2d::backward called without forward_train");
        let mut grad_in = Tensor::zeros(n, c, h, w);
        let plane_out = grad_out.h * grad_out.w;
        for nc in 0..n * c {
            let dst = &mut grad_in.data[nc * h * w..(nc + 1) * h * w];
            for o in 0..plane_out {
                dst[idx[nc * plane_out + o] as usize] += grad_out.data[nc * plane_out + o];
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maximum_and_routes_gradient() {
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect(), 1, 1, 4, 4);
        let mut pool = MaxPool2d::new(3, 2, 1);
        let y = pool.forward_train(&x);
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data, vec![5.0, 7.0, 13.0, 15.0]);
        let g = pool.backward(&Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], 1, 1, 2, 2));
        assert_eq!(g.data[5], 1.0);
        assert_eq!(g.data[7], 2.0);
        assert_eq!(g.data[13], 3.0);
        assert_eq!(g.data[15], 4.0);
        assert_eq!(g.data.iter().sum::<f64>(), 10.0);
    }
}
