//! ResNet-18 topology backbone producing the last pre-pooling feature map.
//!
//! Stem: 7x7/2 conv, batch norm, ReLU, 3x3/2 max pool. Then four stages of two
//! basic residual blocks with widths `w, 2w, 4w, 8w`, the last three stages
//! downsampling by two. A 128x128 input yields an `8w x 4 x 4` map.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{relu_backward, relu_inplace, scoped, BatchNorm2d, Conv2d, MaxPool2d, Module, Param, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct BasicBlock<T: Scalar> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> BasicBlock<T> {
    fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, stride: usize, rng: &mut R) -> Self {
        let downsample = (stride != 1 || in_c != out_c)
            .then(|| (Conv2d::new(in_c, out_c, 1, stride, 0, rng), BatchNorm2d::new(out_c)));
        Self {
            conv1: Conv2d::new(in_c, out_c, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(out_c),
            conv2: Conv2d::new(out_c, out_c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(out_c),
            downsample,
            cache: None,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = self.bn1.forward(&self.conv1.forward(x));
        relu_inplace(&mut h.data);
        let mut out = self.bn2.forward(&self.conv2.forward(&h));
        match &self.downsample {
            Some((conv, bn)) => out.add_assign(&bn.forward(&conv.forward(x))),
            None => out.add_assign(x),
        }
        relu_inplace(&mut out.data);
        out
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.conv1.forward_train(x);
        let mut h = self.bn1.forward_train(&h);
        relu_inplace(&mut h.data);
        let out = self.conv2.forward_train(&h);
        let mut out = self.bn2.forward_train(&out);
        match &mut self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward_train(x);
                out.add_assign(&bn.forward_train(&s));
            }
            None => out.add_assign(x),
        }
        relu_inplace(&mut out.data);
        self.cache = Some((h, out.clone()));
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (hidden, out) = self.cache.take().expect("BasicBlock::backward without forward_train");
        let mut g = grad_out.clone();
        relu_backward(&out.data, &mut g.data);
        let gh = self.bn2.backward(&g);
        let mut gh = self.conv2.backward(&gh);
        relu_backward(&hidden.data, &mut gh.data);
        let gh = self.bn1.backward(&gh);
        let mut gx = self.conv1.backward(&gh);
        match &mut self.downsample {
            Some((conv, bn)) => {
                let gs = bn.backward(&g);
                gx.add_assign(&conv.backward(&gs));
            }
            None => gx.add_assign(&g),
        }
        gx
    }
}

impl<T: Scalar> Module<T> for BasicBlock<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params(&mut scoped("conv1", f));
        self.bn1.visit_params(&mut scoped("bn1", f));
        self.conv2.visit_params(&mut scoped("conv2", f));
        self.bn2.visit_params(&mut scoped("bn2", f));
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_params(&mut scoped("downsample.0", f));
            bn.visit_params(&mut scoped("downsample.1", f));
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.bn1.visit_buffers(&mut scoped("bn1", f));
        self.bn2.visit_buffers(&mut scoped("bn2", f));
        if let Some((_, bn)) = &mut self.downsample {
            bn.visit_buffers(&mut scoped("downsample.1", f));
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResNet18<T: Scalar> {
    pub width: usize,
    pub input_size: usize,
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    pool: MaxPool2d,
    blocks: Vec<BasicBlock<T>>,
    stem_relu: Option<Tensor<T>>,
}

impl<T: Scalar> ResNet18<T> {
    /// `width` is the channel count of the first stage (64 for the standard network).
    pub fn new<R: Rng + ?Sized>(width: usize, input_size: usize, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(8);
        let mut in_c = width;
        for (stage, mult) in [1usize, 2, 4, 8].into_iter().enumerate() {
            let out_c = width * mult;
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(in_c, out_c, stride, rng));
            blocks.push(BasicBlock::new(out_c, out_c, 1, rng));
            in_c = out_c;
        }
        Self {
            width,
            input_size,
            conv1: Conv2d::new(3, width, 7, 2, 3, rng),
            bn1: BatchNorm2d::new(width),
            pool: MaxPool2d::new(3, 2, 1),
            blocks,
            stem_relu: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.width * 8
    }

    /// Spatial side of the output map: five stride-2 reductions.
    pub fn out_size(&self) -> usize {
        let mut s = self.input_size;
        s = (s + 6 - 7) / 2 + 1;
        s = (s + 2 - 3) / 2 + 1;
        for _ in 0..3 {
            s = (s + 2 - 3) / 2 + 1;
        }
        s
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != 3 || x.h != self.input_size || x.w != self.input_size {
            return Err(shape_err(
                "backbone input",
                format!("(3, {}, {})", self.input_size, self.input_size),
                format!("({}, {}, {})", x.c, x.h, x.w),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.bn1.forward(&self.conv1.forward(x));
        relu_inplace(&mut h.data);
        let mut h = self.pool.forward(&h);
        for block in &self.blocks {
            h = block.forward(&h);
        }
        Ok(h)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let h = self.conv1.forward_train(x);
        let mut h = self.bn1.forward_train(&h);
        relu_inplace(&mut h.data);
        let mut out = self.pool.forward_train(&h);
        self.stem_relu = Some(h);
        for block in &mut self.blocks {
            out = block.forward_train(&out);
        }
        Ok(out)
    }

    /// Backpropagates the feature-map gradient into all parameters.
    pub fn backward(&mut self, grad_out: &Tensor<T>) {
        let mut g = grad_out.clone();
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g);
        }
        let mut g = self.pool.backward(&g);
        let stem = self.stem_relu.take().expect("ResNet18::backward without forward_train");
        relu_backward(&stem.data, &mut g.data);
        let g = self.bn1.backward(&g);
        self.conv1.backward_weights(&g);
    }
}

impl<T: Scalar> Module<T> for ResNet18<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_params(&mut scoped("conv1", f));
        self.bn1.visit_params(&mut scoped("bn1", f));
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let name = format!("layer{}.{}", i / 2 + 1, i % 2);
            block.visit_params(&mut scoped(&name, f));
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.bn1.visit_buffers(&mut scoped("bn1", f));
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let name = format!("layer{}.{}", i / 2 + 1, i % 2);
            block.visit_buffers(&mut scoped(&name, f));
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::gradcheck::{max_rel_err, numeric_grad};

    #[test]
    fn stride_arithmetic_reduces_128_to_4() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ResNet18::<f32>::new(2, 128, &mut rng);
        assert_eq!(net.out_size(), 4);
        assert_eq!(net.out_channels(), 16);
        let x = Tensor::zeros(1, 3, 128, 128);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 16, 4, 4]);
    }

    #[test]
    fn standard_width_has_resnet18_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ResNet18::<f32>::new(64, 128, &mut rng);
        // torchvision resnet18 minus the 512->1000 fc layer.
        assert_eq!(net.num_params(), 11_689_512 - 513_000);
    }

    #[test]
    fn rejects_wrong_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ResNet18::<f32>::new(2, 128, &mut rng);
        let err = net.forward(&Tensor::zeros(1, 3, 64, 64)).unwrap_err().to_string();
        assert!(err.contains("(3, 128, 128)") && err.contains("(3, 64, 64)"), "{err}");
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = ResNet18::<f64>::new(2, 64, &mut rng);
        let x = Tensor::from_vec((0..2 * 3 * 64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect(), 2, 3, 64, 64);
        let out = net.forward_train(&x).unwrap();
        let probe: Vec<f64> = (0..out.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.backward(&Tensor::from_vec(probe.clone(), out.n, out.c, out.h, out.w));

        let mut analytic = Vec::new();
        let mut values = Vec::new();
        net.visit_params(&mut |name, p| {
            if name == "layer1.0.conv1.weight" || name == "layer4.1.bn2.gamma" || name == "conv1.weight" {
                analytic.extend(p.grad.iter().take(6).copied());
                values.push((name.to_string(), p.value.clone()));
            }
        });
        let base = net.clone();
        let mut numeric = Vec::new();
        for (name, vals) in values {
            let mut head = vals[..6].to_vec();
            numeric.extend(numeric_grad(
                &mut head,
                |h| {
                    let mut n = base.clone();
                    n.visit_params(&mut |pn, p| {
                        if pn == name {
                            p.value[..6].copy_from_slice(h);
                        }
                    });
                    let y = n.forward_train(&x).unwrap();
                    y.data.iter().zip(&probe).map(|(a, b)| a * b).sum()
                },
                1e-6,
            ));
        }
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-6, "relative error {err}");
    }
}
