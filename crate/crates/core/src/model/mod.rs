//! The classifier: backbone, global and multi-view extraction, prototype
//! correction and the fused head.

mod prototype;
mod types;
mod views;

pub use prototype::{
    correct_mediator, correction_jacobian, cosine_similarity, retrieve_classes, retrieve_prototypes,
    update_prototypes, PrototypeBank,
};
pub use types::{CorrectedMediator, FeatureMap, GlobalFeature, Logits, Mediator, ModelConfig, ViewAttention};
pub use views::{softmax_inplace, GlobalExtractor, MultiViewExtractor, ViewTrace};

use rand::Rng;

use crate::backbone::ResNet18;
use crate::error::{shape_err, Error, Result};
use crate::nn::{scoped, Linear, Module, Param, Tensor};
use crate::objectives::{self, BatchPrediction, FusionBatch, LossConfig};
use crate::scalar::{lit, Scalar};

/// `logits = f_c([g; Â])`.
pub fn fuse_and_classify<T: Scalar>(
    global: &GlobalFeature<T>,
    corrected: Option<&CorrectedMediator<T>>,
    head: &Linear<T>,
) -> Result<Logits<T>> {
    let mut z = global.0.clone();
    if let Some(a) = corrected {
        z.extend_from_slice(&a.0);
    }
    if z.len() != head.in_features {
        return Err(shape_err("classifier head input", head.in_features, z.len()));
    }
    Ok(Logits(head.forward(&z, 1)))
}

/// Arg-max class; ties resolve to the lowest index.
pub fn predict<T: Scalar>(logits: &Logits<T>) -> usize {
    let mut best = 0;
    for (i, &v) in logits.0.iter().enumerate() {
        if v > logits.0[best] {
            best = i;
        }
    }
    best
}

/// Counts of prototype corrections applied and skipped during warm-up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorrectionStats {
    pub applied: u64,
    pub skipped: u64,
    pub fusion_skipped: u64,
}

/// Loss components of one training step.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub total: T,
    pub lo: T,
    pub lf: T,
    pub lip: T,
    /// Uncorrected mediators of the batch, for the prototype update.
    pub mediators: Vec<Vec<T>>,
    pub logits: Vec<T>,
    pub corrections: CorrectionStats,
}

#[derive(Debug, Clone)]
pub struct PemvModel<T: Scalar> {
    pub config: ModelConfig,
    pub backbone: ResNet18<T>,
    pub global: GlobalExtractor<T>,
    pub views: Option<MultiViewExtractor<T>>,
    pub head: Linear<T>,
    pub bank: PrototypeBank<T>,
}

impl<T: Scalar> PemvModel<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = ResNet18::new(config.backbone_width, config.input_size, rng);
        let channels = backbone.out_channels();
        let global = GlobalExtractor::new(channels, config.d_global, rng);
        let views = if config.enable_mvfe {
            Some(MultiViewExtractor::new(channels, config.num_views, config.d_view, rng)?)
        } else {
            None
        };
        let head = Linear::new(config.head_input_dim(), config.num_classes, rng);
        let bank = PrototypeBank::new(config.num_classes, config.mediator_dim(), config.prototype_momentum);
        Ok(Self {
            config,
            backbone,
            global,
            views,
            head,
            bank,
        })
    }

    /// Feature map of a single `(3, S, S)` image.
    pub fn backbone_forward(&self, image: &Tensor<T>) -> Result<FeatureMap<T>> {
        if image.n != 1 {
            return Err(shape_err("backbone input batch", 1, image.n));
        }
        let out = self.backbone.forward(image)?;
        FeatureMap::new(out.data, out.c, out.h, out.w)
    }

    pub fn extract_global(&self, fm: &FeatureMap<T>) -> Result<GlobalFeature<T>> {
        self.global.extract(fm)
    }

    pub fn extract_views(&self, fm: &FeatureMap<T>) -> Result<(Mediator<T>, ViewAttention<T>)> {
        self.views
            .as_ref()
            .ok_or_else(|| Error::Config("multi-view extraction is disabled in this configuration".into()))?
            .extract(fm)
    }

    fn check_batch(&self, images: &Tensor<T>) -> Result<()> {
        if !images.is_finite() {
            return Err(Error::NonFinite("input images"));
        }
        self.backbone.check_input(images)
    }

    /// Inference logits (`batch x classes`) with running batch-norm statistics
    /// and label-free prototype retrieval.
    pub fn infer(&self, images: &Tensor<T>) -> Result<Vec<Logits<T>>> {
        self.check_batch(images)?;
        if self.config.enable_pbc && !self.bank.is_ready() {
            return Err(Error::UninitializedBank(
                "prototype correction needs both class prototypes; load a trained checkpoint".into(),
            ));
        }
        let fm = self.backbone.forward(images)?;
        let positions = fm.h * fm.w;
        let mut out = Vec::with_capacity(fm.n);
        for i in 0..fm.n {
            let map = FeatureMap::new(fm.sample(i).to_vec(), fm.c, fm.h, fm.w)?;
            let g = self.global.extract(&map)?;
            let corrected = match &self.views {
                Some(views) => {
                    let (mediator, _) = views.forward_raw(map.values(), positions);
                    if self.config.enable_pbc {
                        let (s, o) = retrieve_classes(&mediator, &self.bank, None)?;
                        Some(correct_mediator(&mediator, self.bank.prototype(s), self.bank.prototype(o), &self.config)?)
                    } else {
                        Some(CorrectedMediator(mediator))
                    }
                }
                None => None,
            };
            out.push(fuse_and_classify(&g, corrected.as_ref(), &self.head)?);
        }
        Ok(out)
    }

    pub fn predict_batch(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.infer(images)?.iter().map(predict).collect())
    }

    /// Forward and backward pass over one training batch. Parameter gradients
    /// are accumulated; the caller zeroes them and steps the optimizer.
    pub fn forward_backward<R: Rng + ?Sized>(
        &mut self,
        images: &Tensor<T>,
        labels: &[usize],
        loss_cfg: &LossConfig,
        rng: &mut R,
    ) -> Result<StepOutput<T>> {
        self.check_batch(images)?;
        let b = images.n;
        if labels.len() != b {
            return Err(shape_err("labels", b, labels.len()));
        }
        let cfg = self.config.clone();
        let fm = self.backbone.forward_train(images)?;
        let (c, positions) = (fm.c, fm.h * fm.w);
        let dg = cfg.d_global;
        let da = cfg.mediator_dim();

        let mut pooled = Vec::with_capacity(b * c);
        for i in 0..b {
            pooled.extend(GlobalExtractor::pool(fm.sample(i), c, positions));
        }
        let globals = self.global.proj.forward(&pooled, b);

        let mut stats = CorrectionStats::default();
        let mut mediators = Vec::new();
        let mut traces = Vec::new();
        let mut same = Vec::new();
        let mut corrected_flags = vec![false; b];
        if let Some(views) = &self.views {
            for i in 0..b {
                let (m, t) = views.forward_raw(fm.sample(i), positions);
                mediators.push(m);
                traces.push(t);
            }
            let ready = cfg.enable_pbc && self.bank.is_ready();
            for (i, m) in mediators.iter().enumerate() {
                if ready {
                    let (s, o) = retrieve_classes(m, &self.bank, Some(labels[i]))?;
                    same.extend(correct_mediator(m, self.bank.prototype(s), self.bank.prototype(o), &cfg)?.0);
                    corrected_flags[i] = true;
                    stats.applied += 1;
                } else {
                    if cfg.enable_pbc {
                        stats.skipped += 1;
                    }
                    same.extend_from_slice(m);
                }
            }
        }

        let width = cfg.head_input_dim();
        let mut z = Vec::with_capacity(b * width);
        for i in 0..b {
            z.extend_from_slice(&globals[i * dg..(i + 1) * dg]);
            if self.views.is_some() {
                z.extend_from_slice(&same[i * da..(i + 1) * da]);
            }
        }
        let logits = self.head.forward(&z, b);
        let (lo, grad_logits) = objectives::loss_classification(&BatchPrediction {
            logits: &logits,
            labels,
            classes: cfg.num_classes,
        })?;

        let mut grad_globals;
        let mut grad_same = vec![T::zero(); b * da];
        {
            let grad_z = self.head.backward(&z, &grad_logits, b);
            grad_globals = vec![T::zero(); b * dg];
            for i in 0..b {
                let row = &grad_z[i * width..(i + 1) * width];
                grad_globals[i * dg..(i + 1) * dg].copy_from_slice(&row[..dg]);
                if self.views.is_some() {
                    grad_same[i * da..(i + 1) * da].copy_from_slice(&row[dg..]);
                }
            }
        }

        let mut lf = T::zero();
        let mut grad_diff = vec![T::zero(); b * da];
        if loss_cfg.enable_lf && self.views.is_some() {
            if cfg.enable_pbc && self.bank.is_ready() && b >= 2 {
                let mut diff = Vec::with_capacity(b * da);
                for (i, m) in mediators.iter().enumerate() {
                    let (s, o) = retrieve_classes(m, &self.bank, Some(labels[i]))?;
                    diff.extend(correct_mediator(m, self.bank.prototype(o), self.bank.prototype(s), &cfg)?.0);
                }
                let pairs = objectives::pair_plan(b, loss_cfg.pair_threshold, loss_cfg.pair_partners, rng);
                let fusion = objectives::loss_fusion(
                    &self.head,
                    &FusionBatch {
                        globals: &globals,
                        same: &same,
                        diff: &diff,
                        labels,
                    },
                    &pairs,
                )?;
                lf = fusion.value;
                let lambda: T = lit(loss_cfg.lambda_f);
                axpy(lambda, &fusion.grad_weight, &mut self.head.weight.grad);
                axpy(lambda, &fusion.grad_bias, &mut self.head.bias.grad);
                axpy(lambda, &fusion.grad_globals, &mut grad_globals);
                axpy(lambda, &fusion.grad_same, &mut grad_same);
                axpy(lambda, &fusion.grad_diff, &mut grad_diff);
            } else {
                stats.fusion_skipped += 1;
            }
        }

        let mut lip = T::zero();
        let mut grad_attention: Vec<Vec<T>> = Vec::new();
        if loss_cfg.enable_ip {
            if let Some(views) = &self.views {
                let inv_b: T = T::one() / lit(b as f64);
                let mu: T = lit(loss_cfg.mu_ip);
                for t in &traces {
                    let (v, g) = objectives::information_purity(&t.attention, views.views, positions);
                    lip += v * inv_b;
                    grad_attention.push(g.into_iter().map(|x| x * inv_b * mu).collect());
                }
            }
        }

        let total = objectives::loss_total(lo, lf, lip, loss_cfg);

        let mut grad_fm = Tensor::zeros(fm.n, fm.c, fm.h, fm.w);
        if let Some(views) = &mut self.views {
            let jac: T = lit(correction_jacobian(&cfg));
            for i in 0..b {
                let mut gm: Vec<T> = grad_same[i * da..(i + 1) * da]
                    .iter()
                    .zip(&grad_diff[i * da..(i + 1) * da])
                    .map(|(&s, &d)| s + d)
                    .collect();
                if corrected_flags[i] {
                    gm.iter_mut().for_each(|g| *g *= jac);
                }
                let ga = grad_attention.get(i).map(Vec::as_slice);
                views.backward(fm.sample(i), positions, &traces[i], &gm, ga, grad_fm.sample_mut(i));
            }
        }
        let grad_pooled = self.global.proj.backward(&pooled, &grad_globals, b);
        let inv_p: T = T::one() / lit(positions as f64);
        for i in 0..b {
            let gp = &grad_pooled[i * c..(i + 1) * c];
            let dst = grad_fm.sample_mut(i);
            for ch in 0..c {
                let v = gp[ch] * inv_p;
                dst[ch * positions..(ch + 1) * positions].iter_mut().for_each(|x| *x += v);
            }
        }
        self.backbone.backward(&grad_fm);

        Ok(StepOutput {
            total,
            lo,
            lf,
            lip,
            mediators,
            logits,
            corrections: stats,
        })
    }

    /// Momentum update of the prototypes from a batch's uncorrected mediators.
    pub fn update_bank(&mut self, mediators: &[Vec<T>], labels: &[usize]) -> Result<()> {
        if mediators.is_empty() {
            return Ok(());
        }
        let batch: Vec<(&[T], usize)> = mediators.iter().map(Vec::as_slice).zip(labels.iter().copied()).collect();
        update_prototypes(&mut self.bank, &batch)
    }
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (a, &b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

impl<T: Scalar> Module<T> for PemvModel<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.backbone.visit_params(&mut scoped("backbone", f));
        self.global.visit_params(&mut scoped("global", f));
        if let Some(v) = &mut self.views {
            v.visit_params(&mut scoped("views", f));
        }
        self.head.visit_params(&mut scoped("head", f));
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        self.backbone.visit_buffers(&mut scoped("backbone", f));
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn predict_ties_and_shift_invariance() {
        assert_eq!(predict(&Logits(vec![0.3, 0.9])), 1);
        assert_eq!(predict(&Logits(vec![0.5, 0.5])), 0);
        assert_eq!(predict(&Logits(vec![0.3 + 7.0, 0.9 + 7.0])), 1);
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let head = Linear::<f64>::zeroed(5, 2);
        let logits = fuse_and_classify(&GlobalFeature(vec![1.0, 2.0]), Some(&CorrectedMediator(vec![3.0, 4.0, 5.0])), &head).unwrap();
        assert_eq!(logits.0, vec![0.0, 0.0]);
        assert_eq!(objectives::softmax(&logits.0), vec![0.5, 0.5]);
        let s = objectives::softmax(&[2.0f64, 0.0]);
        assert!((s[0] - 0.8808).abs() < 1e-4 && (s[1] - 0.1192).abs() < 1e-4);
        assert!(fuse_and_classify(&GlobalFeature(vec![1.0]), None, &head).is_err());
    }

    #[test]
    fn default_dimensions() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.mediator_dim(), 384);
        assert_eq!(cfg.head_input_dim(), 640);
    }

    #[test]
    fn inference_requires_prototypes() {
        let cfg = ModelConfig {
            backbone_width: 2,
            input_size: 32,
            d_global: 4,
            d_view: 3,
            ..ModelConfig::default()
        };
        let model = PemvModel::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err = model.infer(&Tensor::zeros(1, 3, 32, 32)).unwrap_err();
        assert!(matches!(err, Error::UninitializedBank(_)));
    }

    #[test]
    fn zero_image_gives_finite_feature_map() {
        let cfg = ModelConfig {
            backbone_width: 4,
            ..ModelConfig::default()
        };
        let model = PemvModel::<f32>::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let fm = model.backbone_forward(&Tensor::zeros(1, 3, 128, 128)).unwrap();
        assert_eq!((fm.channels(), fm.height(), fm.width()), (32, 4, 4));
        let g = model.extract_global(&fm).unwrap();
        assert_eq!(g.0.len(), 256);
        assert!(model.backbone_forward(&Tensor::zeros(1, 3, 64, 64)).is_err());
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            num_views: 2,
            d_global: 3,
            d_view: 2,
            backbone_width: 2,
            input_size: 64,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        use rand::Rng;

        use crate::nn::gradcheck::{max_rel_err, numeric_grad};

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = PemvModel::<f64>::new(tiny_config(), &mut rng).unwrap();
        let protos: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        model.bank = PrototypeBank::from_parts(protos, vec![true, true], 0.9).unwrap();
        let images = Tensor::from_vec((0..3 * 3 * 64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect(), 3, 3, 64, 64);
        let labels = [0, 1, 1];
        let loss_cfg = LossConfig::default();

        let mut m = model.clone();
        m.zero_grad();
        let out = m.forward_backward(&images, &labels, &loss_cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(out.lf > 0.0 && out.lip > 0.0);
        assert_eq!(out.corrections.applied, 3);

        let targets = ["head.weight", "views.score.weight", "views.proj.1.weight", "global.proj.weight", "backbone.layer4.1.conv2.weight"];
        for name in targets {
            let mut analytic = Vec::new();
            let mut values = Vec::new();
            m.visit_params(&mut |n, p| {
                if n == name {
                    analytic = p.grad[..4].to_vec();
                    values = p.value[..4].to_vec();
                }
            });
            let numeric = numeric_grad(
                &mut values,
                |v| {
                    let mut probe = model.clone();
                    probe.visit_params(&mut |n, p| {
                        if n == name {
                            p.value[..4].copy_from_slice(v);
                        }
                    });
                    probe
                        .forward_backward(&images, &labels, &loss_cfg, &mut ChaCha8Rng::seed_from_u64(0))
                        .unwrap()
                        .total
                },
                1e-6,
            );
            let err = max_rel_err(&analytic, &numeric);
            assert!(err < 1e-5, "{name}: relative error {err}");
        }
    }

    #[test]
    fn warm_up_skips_correction_and_fusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut model = PemvModel::<f64>::new(tiny_config(), &mut rng).unwrap();
        let images = Tensor::from_vec((0..2 * 3 * 64 * 64).map(|i| (i as f64 * 0.01).sin()).collect(), 2, 3, 64, 64);
        let out = model.forward_backward(&images, &[0, 1], &LossConfig::default(), &mut rng).unwrap();
        assert_eq!(out.corrections.skipped, 2);
        assert_eq!(out.corrections.fusion_skipped, 1);
        assert_eq!(out.lf, 0.0);
        model.update_bank(&out.mediators, &[0, 1]).unwrap();
        assert!(model.bank.is_ready());
        let out = model.forward_backward(&images, &[0, 1], &LossConfig::default(), &mut rng).unwrap();
        assert_eq!(out.corrections.applied, 2);
        assert!(out.lf > 0.0);
    }
}
