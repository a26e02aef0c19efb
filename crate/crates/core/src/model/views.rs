//! Global and per-view feature extraction over the shared feature map.
//!
//! Each view scores every spatial position with a 1x1 projection, normalizes
//! the scores with a softmax over positions, pools channel vectors with those
//! weights and projects the pooled vector to `d_view`.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{scoped, Linear, Module, Param};
use crate::scalar::{lit, Scalar};

use super::types::{FeatureMap, GlobalFeature, Mediator, ViewAttention};

/// Spatial mean followed by an affine projection.
#[derive(Debug, Clone)]
pub struct GlobalExtractor<T: Scalar> {
    pub proj: Linear<T>,
}

impl<T: Scalar> GlobalExtractor<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, d_global: usize, rng: &mut R) -> Self {
        Self {
            proj: Linear::new(channels, d_global, rng),
        }
    }

    pub fn pool(fm: &[T], channels: usize, positions: usize) -> Vec<T> {
        let n: T = lit(positions as f64);
        (0..channels)
            .map(|c| fm[c * positions..(c + 1) * positions].iter().copied().sum::<T>() / n)
            .collect()
    }

    pub fn extract(&self, fm: &FeatureMap<T>) -> Result<GlobalFeature<T>> {
        if fm.channels() != self.proj.in_features {
            return Err(shape_err("global extractor channels", self.proj.in_features, fm.channels()));
        }
        let pooled = Self::pool(fm.values(), fm.channels(), fm.positions());
        Ok(GlobalFeature(self.proj.forward(&pooled, 1)))
    }
}

impl<T: Scalar> Module<T> for GlobalExtractor<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.proj.visit_params(&mut scoped("proj", f));
    }
}

/// Intermediate values of one view-extraction pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ViewTrace<T> {
    /// `views x positions`
    pub attention: Vec<T>,
    /// `views x channels`
    pub pooled: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct MultiViewExtractor<T: Scalar> {
    pub views: usize,
    pub channels: usize,
    pub d_view: usize,
    /// `views x channels` 1x1 score projections, one row per view.
    pub score: Linear<T>,
    pub proj: Vec<Linear<T>>,
}

impl<T: Scalar> MultiViewExtractor<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, views: usize, d_view: usize, rng: &mut R) -> Result<Self> {
        if views == 0 {
            return Err(Error::Config("the multi-view extractor needs at least one view".into()));
        }
        Ok(Self {
            views,
            channels,
            d_view,
            score: Linear::new(channels, views, rng),
            proj: (0..views).map(|_| Linear::new(channels, d_view, rng)).collect(),
        })
    }

    /// Runs all views on a `channels x positions` map.
    pub fn forward_raw(&self, fm: &[T], positions: usize) -> (Vec<T>, ViewTrace<T>) {
        let (k, c) = (self.views, self.channels);
        // scores = W_s (k x c) * fm (c x p) + b
        let mut attention = Vec::with_capacity(k * positions);
        for b in &self.score.bias.value {
            attention.extend(std::iter::repeat_n(*b, positions));
        }
        T::gemm(false, false, k, positions, c, T::one(), &self.score.weight.value, fm, T::one(), &mut attention);
        for row in attention.chunks_mut(positions) {
            softmax_inplace(row);
        }
        // pooled = α (k x p) * fm^T (p x c)
        let mut pooled = vec![T::zero(); k * c];
        T::gemm(false, true, k, c, positions, T::one(), &attention, fm, T::zero(), &mut pooled);
        let mut mediator = Vec::with_capacity(k * self.d_view);
        for (v, proj) in self.proj.iter().enumerate() {
            mediator.extend(proj.forward(&pooled[v * c..(v + 1) * c], 1));
        }
        (mediator, ViewTrace { attention, pooled })
    }

    pub fn extract(&self, fm: &FeatureMap<T>) -> Result<(Mediator<T>, ViewAttention<T>)> {
        if fm.channels() != self.channels {
            return Err(shape_err("view extractor channels", self.channels, fm.channels()));
        }
        let (concatenated, trace) = self.forward_raw(fm.values(), fm.positions());
        Ok((
            Mediator {
                concatenated,
                views: self.views,
                view_dim: self.d_view,
            },
            ViewAttention {
                weights: trace.attention,
                views: self.views,
                height: fm.height(),
                width: fm.width(),
            },
        ))
    }

    /// Backpropagates `grad_mediator` (and an optional direct gradient on the
    /// attention weights) into the view parameters; adds the feature-map
    /// gradient into `grad_fm`.
    pub fn backward(
        &mut self,
        fm: &[T],
        positions: usize,
        trace: &ViewTrace<T>,
        grad_mediator: &[T],
        grad_attention: Option<&[T]>,
        grad_fm: &mut [T],
    ) {
        let (k, c, dv) = (self.views, self.channels, self.d_view);
        let mut grad_pooled = vec![T::zero(); k * c];
        for v in 0..k {
            let g = self.proj[v].backward(&trace.pooled[v * c..(v + 1) * c], &grad_mediator[v * dv..(v + 1) * dv], 1);
            grad_pooled[v * c..(v + 1) * c].copy_from_slice(&g);
        }
        // d fm += d_pooled^T (c x k) * α (k x p)
        T::gemm(true, false, c, positions, k, T::one(), &grad_pooled, &trace.attention, T::one(), grad_fm);
        // d α = d_pooled (k x c) * fm (c x p)
        let mut grad_att = vec![T::zero(); k * positions];
        T::gemm(false, false, k, positions, c, T::one(), &grad_pooled, fm, T::zero(), &mut grad_att);
        if let Some(extra) = grad_attention {
            for (g, &e) in grad_att.iter_mut().zip(extra) {
                *g += e;
            }
        }
        // softmax backward: ds = α ⊙ (dα − <α, dα>)
        let mut grad_scores = grad_att;
        for (ds, alpha) in grad_scores.chunks_mut(positions).zip(trace.attention.chunks(positions)) {
            let dot: T = ds.iter().zip(alpha).map(|(&g, &a)| g * a).sum();
            for (g, &a) in ds.iter_mut().zip(alpha) {
                *g = a * (*g - dot);
            }
        }
        // scores = W_s fm + b
        T::gemm(false, true, k, c, positions, T::one(), &grad_scores, fm, T::one(), &mut self.score.weight.grad);
        for (v, row) in grad_scores.chunks(positions).enumerate() {
            self.score.bias.grad[v] += row.iter().copied().sum::<T>();
        }
        T::gemm(true, false, c, positions, k, T::one(), &self.score.weight.value, &grad_scores, T::one(), grad_fm);
    }
}

impl<T: Scalar> Module<T> for MultiViewExtractor<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.score.visit_params(&mut scoped("score", f));
        for (i, p) in self.proj.iter_mut().enumerate() {
            p.visit_params(&mut scoped(&format!("proj.{i}"), f));
        }
    }
}

pub fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
