//! Class prototypes in mediator space and prototype-based correction.

use crate::error::{shape_err, Error, Result};
use crate::scalar::{lit, Scalar};

use super::types::{CorrectedMediator, Mediator, ModelConfig};

/// One running reference vector per class, maintained by momentum averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank<T> {
    prototypes: Vec<Vec<T>>,
    initialized: Vec<bool>,
    momentum: f64,
    dim: usize,
}

impl<T: Scalar> PrototypeBank<T> {
    pub fn new(num_classes: usize, dim: usize, momentum: f64) -> Self {
        Self {
            prototypes: vec![vec![T::zero(); dim]; num_classes],
            initialized: vec![false; num_classes],
            momentum,
            dim,
        }
    }

    pub fn from_parts(prototypes: Vec<Vec<T>>, initialized: Vec<bool>, momentum: f64) -> Result<Self> {
        let dim = prototypes.first().map_or(0, Vec::len);
        if prototypes.len() != initialized.len() || prototypes.iter().any(|p| p.len() != dim) {
            return Err(Error::Invalid("inconsistent prototype bank parts".into()));
        }
        if prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prototype bank"));
        }
        Ok(Self {
            prototypes,
            initialized,
            momentum,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn prototype(&self, class: usize) -> &[T] {
        &self.prototypes[class]
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized[class]
    }

    pub fn initialized_flags(&self) -> &[bool] {
        &self.initialized
    }

    /// True once every class has a prototype.
    pub fn is_ready(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }
}

/// Folds a batch of `(mediator, label)` pairs into the bank.
///
/// A class seen for the first time takes its batch mean; afterwards
/// `P_c <- m * P_c + (1 - m) * mean_c`. Classes absent from the batch are untouched.
pub fn update_prototypes<T: Scalar>(bank: &mut PrototypeBank<T>, batch: &[(&[T], usize)]) -> Result<()> {
    let classes = bank.num_classes();
    let mut sums = vec![vec![T::zero(); bank.dim]; classes];
    let mut counts = vec![0usize; classes];
    for &(mediator, label) in batch {
        if mediator.len() != bank.dim {
            return Err(shape_err("prototype update", bank.dim, mediator.len()));
        }
        if label >= classes {
            return Err(Error::Invalid(format!("label {label} outside 0..{classes}")));
        }
        counts[label] += 1;
        for (s, &v) in sums[label].iter_mut().zip(mediator) {
            *s += v;
        }
    }
    let m: T = lit(bank.momentum);
    for c in 0..classes {
        if counts[c] == 0 {
            continue;
        }
        let n: T = lit(counts[c] as f64);
        let mean = sums[c].iter().map(|&s| s / n);
        if bank.initialized[c] {
            for (p, v) in bank.prototypes[c].iter_mut().zip(mean) {
                *p = m * *p + (T::one() - m) * v;
            }
        } else {
            bank.prototypes[c] = mean.collect();
            bank.initialized[c] = true;
        }
    }
    Ok(())
}

/// `Â = A + γ_align (P_same − A) + γ_contrast (A − P_other)`.
pub fn correct_mediator<T: Scalar>(
    mediator: &[T],
    same: &[T],
    other: &[T],
    cfg: &ModelConfig,
) -> Result<CorrectedMediator<T>> {
    if same.len() != mediator.len() || other.len() != mediator.len() {
        return Err(shape_err(
            "prototype correction",
            mediator.len(),
            format!("{} / {}", same.len(), other.len()),
        ));
    }
    let ga: T = lit(cfg.gamma_align);
    let gc: T = lit(cfg.gamma_contrast);
    if ga == T::zero() && gc == T::zero() {
        return Ok(CorrectedMediator(mediator.to_vec()));
    }
    // Expanded form: with γ_align = 1, γ_contrast = 0 it returns P_same bit for bit.
    let ka: T = lit(correction_jacobian(cfg));
    Ok(CorrectedMediator(
        mediator
            .iter()
            .zip(same)
            .zip(other)
            .map(|((&a, &s), &o)| ka * a + ga * s - gc * o)
            .collect(),
    ))
}

/// d Â / d A (a scalar multiple of the identity).
pub fn correction_jacobian(cfg: &ModelConfig) -> f64 {
    1.0 - cfg.gamma_align + cfg.gamma_contrast
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na: T = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb: T = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        T::zero()
    } else {
        dot / (na * nb)
    }
}

/// Returns `(same_class, other_class)` indices.
///
/// With a label this is a direct lookup. Without one, the prototype with the
/// higher cosine similarity to the mediator plays the same-class role; ties go to class 0.
pub fn retrieve_classes<T: Scalar>(
    mediator: &[T],
    bank: &PrototypeBank<T>,
    label: Option<usize>,
) -> Result<(usize, usize)> {
    if mediator.len() != bank.dim() {
        return Err(shape_err("prototype retrieval", bank.dim(), mediator.len()));
    }
    match label {
        Some(l) if l < 2 => Ok((l, 1 - l)),
        Some(l) => Err(Error::Invalid(format!("label {l} outside {{0, 1}}"))),
        None => {
            if !bank.is_ready() {
                return Err(Error::UninitializedBank(
                    "inference needs both class prototypes; load a trained checkpoint".into(),
                ));
            }
            let c0 = cosine_similarity(mediator, bank.prototype(0));
            let c1 = cosine_similarity(mediator, bank.prototype(1));
            Ok(if c1 > c0 { (1, 0) } else { (0, 1) })
        }
    }
}

pub fn retrieve_prototypes<'a, T: Scalar>(
    mediator: &Mediator<T>,
    bank: &'a PrototypeBank<T>,
    label: Option<usize>,
) -> Result<(&'a [T], &'a [T])> {
    let (same, other) = retrieve_classes(&mediator.concatenated, bank, label)?;
    Ok((bank.prototype(same), bank.prototype(other)))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cfg(ga: f64, gc: f64) -> ModelConfig {
        ModelConfig {
            gamma_align: ga,
            gamma_contrast: gc,
            ..ModelConfig::default()
        }
    }

    fn bank2(p0: Vec<f64>, p1: Vec<f64>) -> PrototypeBank<f64> {
        PrototypeBank::from_parts(vec![p0, p1], vec![true, true], 0.9).unwrap()
    }

    #[test]
    fn correction_hand_example() {
        let a = correct_mediator(&[1.0f64, 1.0], &[3.0, 1.0], &[1.0, 3.0], &cfg(0.5, 0.1)).unwrap();
        assert!((a.0[0] - 2.0).abs() < 1e-12);
        assert!((a.0[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn correction_degenerate_coefficients() {
        let a = [0.3, -1.7, 2.5];
        let s = [1.0, 2.0, 3.0];
        let o = [-4.0, 0.5, 9.0];
        assert_eq!(correct_mediator(&a, &s, &o, &cfg(0.0, 0.0)).unwrap().0, a.to_vec());
        assert_eq!(correct_mediator(&a, &s, &o, &cfg(1.0, 0.0)).unwrap().0, s.to_vec());
    }

    #[test]
    fn correction_rejects_dimension_mismatch() {
        assert!(correct_mediator(&[1.0, 2.0], &[1.0], &[1.0, 2.0], &cfg(0.5, 0.1)).is_err());
    }

    #[test]
    fn ema_one_step() {
        let mut bank = bank2(vec![1.0, 0.0], vec![5.0, 5.0]);
        update_prototypes(&mut bank, &[(&[0.0, 1.0][..], 0)]).unwrap();
        assert!((bank.prototype(0)[0] - 0.9).abs() < 1e-15);
        assert!((bank.prototype(0)[1] - 0.1).abs() < 1e-15);
        assert_eq!(bank.prototype(1), &[5.0, 5.0]);
    }

    #[test]
    fn ema_degenerate_momenta() {
        let mut frozen = PrototypeBank::from_parts(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![true, true], 1.0).unwrap();
        update_prototypes(&mut frozen, &[(&[9.0, 9.0][..], 0), (&[7.0, 7.0][..], 1)]).unwrap();
        assert_eq!(frozen.prototype(0), &[1.0, 2.0]);
        assert_eq!(frozen.prototype(1), &[3.0, 4.0]);

        let mut follow = PrototypeBank::from_parts(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![true, true], 0.0).unwrap();
        update_prototypes(&mut follow, &[(&[2.0, 0.0][..], 1), (&[4.0, 2.0][..], 1)]).unwrap();
        assert_eq!(follow.prototype(1), &[3.0, 1.0]);
    }

    #[test]
    fn first_batch_initializes_with_class_mean() {
        let mut bank = PrototypeBank::<f64>::new(2, 2, 0.9);
        update_prototypes(&mut bank, &[(&[1.0, 3.0][..], 1), (&[3.0, 5.0][..], 1)]).unwrap();
        assert!(bank.is_initialized(1) && !bank.is_initialized(0));
        assert_eq!(bank.prototype(1), &[2.0, 4.0]);
        assert!(!bank.is_ready());
    }

    #[test]
    fn update_rejects_wrong_dimension() {
        let mut bank = PrototypeBank::<f64>::new(2, 3, 0.9);
        assert!(update_prototypes(&mut bank, &[(&[1.0, 3.0][..], 0)]).is_err());
    }

    #[test]
    fn retrieval_cases() {
        let bank = bank2(vec![1.0, 0.0], vec![0.0, 1.0]);
        let m = Mediator::from_views(&[vec![1.0, 0.0]]).unwrap();
        let (s, o) = retrieve_prototypes(&m, &bank, Some(1)).unwrap();
        assert_eq!((s, o), (bank.prototype(1), bank.prototype(0)));
        let (s, _) = retrieve_prototypes(&m, &bank, None).unwrap();
        assert_eq!(s, bank.prototype(0));
        let tie = Mediator::from_views(&[vec![2.0, 2.0]]).unwrap();
        assert_eq!(retrieve_classes(&tie.concatenated, &bank, None).unwrap(), (0, 1));
        let near1 = Mediator::from_views(&[vec![0.1, 2.0]]).unwrap();
        assert_eq!(retrieve_classes(&near1.concatenated, &bank, None).unwrap(), (1, 0));
    }

    #[test]
    fn unlabeled_retrieval_requires_initialized_bank() {
        let bank = PrototypeBank::<f64>::new(2, 2, 0.9);
        let err = retrieve_classes(&[1.0, 0.0], &bank, None).unwrap_err();
        assert!(matches!(err, Error::UninitializedBank(_)));
    }

    proptest! {
        #[test]
        fn ema_contracts_toward_constant_mean(
            start in prop::collection::vec(-10.0f64..10.0, 4),
            target in prop::collection::vec(-10.0f64..10.0, 4),
            m in 0.0f64..1.0,
            steps in 1usize..50,
        ) {
            let mut bank = PrototypeBank::from_parts(vec![start.clone(), start.clone()], vec![true, true], m).unwrap();
            let d0: f64 = start.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            for _ in 0..steps {
                update_prototypes(&mut bank, &[(&target[..], 0)]).unwrap();
            }
            let dn: f64 = bank.prototype(0).iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dn <= m.powi(steps as i32) * d0 + 1e-9);
        }
    }
}
