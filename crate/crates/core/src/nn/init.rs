use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::scalar::{lit, Scalar};

/// He-normal initialization with fan-out scaling, as used for ReLU conv stacks.
pub fn kaiming_normal_fan_out<T: Scalar, R: Rng + ?Sized>(
    len: usize,
    fan_out: usize,
    rng: &mut R,
) -> Vec<T> {
    let std = (2.0 / fan_out as f64).sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            lit(z * std)
        })
        .collect()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..len).map(|_| lit(dist.sample(rng))).collect()
}
