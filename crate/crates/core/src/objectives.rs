//! Classification loss, fusion loss, information-purity regularizer and the joint objective.
//!
//! Every loss returns its value together with the gradients the training step
//! needs; none of them mutate their inputs.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::ViewAttention;
use crate::nn::Linear;
use crate::scalar::{lit, Scalar};

/// Probability floor inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_f: f64,
    pub mu_ip: f64,
    pub enable_lf: bool,
    pub enable_ip: bool,
    /// Batches larger than this use subsampled marginal partners.
    pub pair_threshold: usize,
    pub pair_partners: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_f: 0.5,
            mu_ip: 0.1,
            enable_lf: true,
            enable_ip: true,
            pair_threshold: 32,
            pair_partners: 8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("loss.lambda_f", self.lambda_f), ("loss.mu_ip", self.mu_ip)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.pair_partners == 0 {
            return Err(Error::Config("loss.pair_partners must be >= 1".into()));
        }
        Ok(())
    }
}

/// Logits for a batch (`batch x classes`) with their integer labels.
#[derive(Debug, Clone)]
pub struct BatchPrediction<'a, T> {
    pub logits: &'a [T],
    pub labels: &'a [usize],
    pub classes: usize,
}

impl<T: Scalar> BatchPrediction<'_, T> {
    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        if self.logits.len() != self.labels.len() * self.classes {
            return Err(shape_err("batch logits", self.labels.len() * self.classes, self.logits.len()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Invalid(format!("label {l} outside 0..{}", self.classes)));
        }
        if !self.logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(())
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = logits.to_vec();
    crate::model::softmax_inplace(&mut out);
    out
}

/// `-q ln q` with `0 ln 0 := 0` and the log argument floored at [`LOG_FLOOR`].
pub fn neg_q_log_q<T: Scalar>(q: T) -> T {
    if q <= T::zero() {
        return T::zero();
    }
    -q * q.max(lit(LOG_FLOOR)).ln()
}

fn neg_q_log_q_derivative<T: Scalar>(q: T) -> T {
    let floor: T = lit(LOG_FLOOR);
    if q > floor {
        -(q.ln() + T::one())
    } else {
        -floor.ln()
    }
}

/// Mean negative log-likelihood of the true class, with `d loss / d logits`.
pub fn loss_classification<T: Scalar>(bp: &BatchPrediction<'_, T>) -> Result<(T, Vec<T>)> {
    bp.validate()?;
    let c = bp.classes;
    let n: T = lit(bp.batch() as f64);
    let mut terms = Vec::with_capacity(bp.batch());
    let mut grad = vec![T::zero(); bp.logits.len()];
    for (i, &y) in bp.labels.iter().enumerate() {
        let row = &bp.logits[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        terms.push(lse - row[y]);
        for j in 0..c {
            let p = (row[j] - lse).exp();
            grad[i * c + j] = (p - if j == y { T::one() } else { T::zero() }) / n;
        }
    }
    Ok((ordered_sum(&mut terms) / n, grad))
}

/// Sums after sorting so the result does not depend on batch order.
fn ordered_sum<T: Scalar>(terms: &mut [T]) -> T {
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    terms.iter().copied().sum()
}

/// Which `(anchor, marginal)` sample pairs the fusion loss averages over.
///
/// Up to `threshold` samples every pair is used; above it each anchor draws
/// `partners` distinct marginal samples.
pub fn pair_plan<R: Rng + ?Sized>(batch: usize, threshold: usize, partners: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if batch <= threshold {
        return (0..batch).flat_map(|i| (0..batch).map(move |j| (i, j))).collect();
    }
    let k = partners.min(batch);
    let mut pairs = Vec::with_capacity(batch * k);
    for i in 0..batch {
        let mut js = sample(rng, batch, k).into_vec();
        js.sort_unstable();
        pairs.extend(js.into_iter().map(|j| (i, j)));
    }
    pairs
}

/// Inputs of the fusion loss for one batch.
#[derive(Debug, Clone)]
pub struct FusionBatch<'a, T> {
    /// `batch x d_global`, the marginal samples' global features.
    pub globals: &'a [T],
    /// `batch x d_A`, mediators corrected toward their own class prototype.
    pub same: &'a [T],
    /// `batch x d_A`, mediators corrected toward the other class prototype.
    pub diff: &'a [T],
    pub labels: &'a [usize],
}

/// Fusion loss value and its gradients (unscaled by λ).
#[derive(Debug, Clone)]
pub struct FusionLoss<T> {
    pub value: T,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    pub grad_globals: Vec<T>,
    pub grad_same: Vec<T>,
    pub grad_diff: Vec<T>,
}

/// One `(anchor, marginal)` contribution given the two selected probabilities.
pub fn fusion_pair_term<T: Scalar>(q_same: T, q_diff: T) -> T {
    neg_q_log_q(q_same) + neg_q_log_q(q_diff)
}

/// Front-door style fusion loss.
///
/// For anchor `i` and marginal sample `j`, the head sees `[g_j; Â_i^same]` and
/// `[g_j; Â_i^diff]`. The first prediction is read at `y_i`, the second at the
/// other class, and each contributes `-q ln q`. Pairs are weighted uniformly.
pub fn loss_fusion<T: Scalar>(head: &Linear<T>, batch: &FusionBatch<'_, T>, pairs: &[(usize, usize)]) -> Result<FusionLoss<T>> {
    let b = batch.labels.len();
    if b < 2 {
        return Err(Error::Invalid(format!("fusion loss needs a batch of at least 2, got {b}")));
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("fusion loss needs at least one pair".into()));
    }
    let classes = head.out_features;
    if classes != 2 {
        return Err(Error::Config("fusion loss is defined for two classes".into()));
    }
    let dg = batch.globals.len() / b;
    let da = batch.same.len() / b;
    if dg * b != batch.globals.len() || dg + da != head.in_features {
        return Err(shape_err("fusion head input", head.in_features, dg + da));
    }
    if batch.same.len() != b * da || batch.diff.len() != b * da {
        return Err(shape_err("fusion mediators", b * da, batch.diff.len()));
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= 2) {
        return Err(Error::Invalid(format!("label {l} outside {{0, 1}}")));
    }
    let rows = 2 * pairs.len();
    let width = head.in_features;
    // Row 2p holds the same-corrected input of pair p, row 2p+1 the other-corrected one.
    let mut z = Vec::with_capacity(rows * width);
    for &(i, j) in pairs {
        let g = &batch.globals[j * dg..(j + 1) * dg];
        z.extend_from_slice(g);
        z.extend_from_slice(&batch.same[i * da..(i + 1) * da]);
        z.extend_from_slice(g);
        z.extend_from_slice(&batch.diff[i * da..(i + 1) * da]);
    }
    let logits = head.forward(&z, rows);
    let scale: T = T::one() / lit(pairs.len() as f64);
    let mut terms = Vec::with_capacity(pairs.len());
    let mut grad_logits = vec![T::zero(); rows * classes];
    for (p, &(i, _)) in pairs.iter().enumerate() {
        let y = batch.labels[i];
        let mut pair_value = T::zero();
        for (r, selected) in [(2 * p, y), (2 * p + 1, 1 - y)] {
            let probs = softmax(&logits[r * classes..(r + 1) * classes]);
            let q = probs[selected];
            pair_value += neg_q_log_q(q);
            // d(-q ln q)/dz_c = h'(q) q (δ_cs − p_c)
            let outer = neg_q_log_q_derivative(q) * q * scale;
            for c in 0..classes {
                let delta = if c == selected { T::one() } else { T::zero() };
                grad_logits[r * classes + c] = outer * (delta - probs[c]);
            }
        }
        terms.push(pair_value);
    }
    let value = ordered_sum(&mut terms) * scale;

    let mut grad_weight = vec![T::zero(); head.out_features * width];
    T::gemm(true, false, classes, width, rows, T::one(), &grad_logits, &z, T::zero(), &mut grad_weight);
    let mut grad_bias = vec![T::zero(); classes];
    for row in grad_logits.chunks(classes) {
        for (g, &d) in grad_bias.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut grad_z = vec![T::zero(); rows * width];
    T::gemm(false, false, rows, width, classes, T::one(), &grad_logits, &head.weight.value, T::zero(), &mut grad_z);
    let mut grad_globals = vec![T::zero(); b * dg];
    let mut grad_same = vec![T::zero(); b * da];
    let mut grad_diff = vec![T::zero(); b * da];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        for (r, target) in [(2 * p, &mut grad_same), (2 * p + 1, &mut grad_diff)] {
            let gz = &grad_z[r * width..(r + 1) * width];
            for (acc, &v) in grad_globals[j * dg..(j + 1) * dg].iter_mut().zip(&gz[..dg]) {
                *acc += v;
            }
            for (acc, &v) in target[i * da..(i + 1) * da].iter_mut().zip(&gz[dg..]) {
                *acc += v;
            }
        }
    }
    Ok(FusionLoss {
        value,
        grad_weight,
        grad_bias,
        grad_globals,
        grad_same,
        grad_diff,
    })
}

/// Mean normalized spatial entropy of the view attention, in `[0, 1]`.
pub fn loss_information_purity<T: Scalar>(att: &ViewAttention<T>) -> T {
    information_purity(&att.weights, att.views, att.positions()).0
}

/// Value and `d loss / d weights` for `views x positions` attention weights.
pub fn information_purity<T: Scalar>(weights: &[T], views: usize, positions: usize) -> (T, Vec<T>) {
    if positions <= 1 || views == 0 {
        return (T::zero(), vec![T::zero(); weights.len()]);
    }
    let norm: T = lit((positions as f64).ln() * views as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); weights.len()];
    for (row, grow) in weights.chunks(positions).zip(grad.chunks_mut(positions)) {
        for (&a, g) in row.iter().zip(grow.iter_mut()) {
            total += neg_q_log_q(a);
            *g = neg_q_log_q_derivative(a) / norm;
        }
    }
    (total / norm, grad)
}

/// `Lo + λ Lf [enable_lf] + μ Lip [enable_ip]`.
pub fn loss_total<T: Scalar>(lo: T, lf: T, lip: T, cfg: &LossConfig) -> T {
    let mut total = lo;
    if cfg.enable_lf {
        total += lit::<T>(cfg.lambda_f) * lf;
    }
    if cfg.enable_ip {
        total += lit::<T>(cfg.mu_ip) * lip;
    }
    total
}
