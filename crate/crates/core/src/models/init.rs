use rand::rngs::SmallRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Element, Tensor};

/// `U(−1/√fan_in, 1/√fan_in)`, the default for conv and linear weights and biases.
pub(crate) fn kaiming_uniform<T: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    // The parent stream seeds a fast generator for the bulk draw; each u64 yields two values.
    let mut fast = SmallRng::seed_from_u64(rng.gen());
    let n: usize = shape.iter().product();
    let step = 2.0 * bound / (1u32 << 24) as f64;
    // Midpoint of one of 2^24 cells, so the interval stays open.
    let value = |bits: u64| T::lit(-bound + ((bits & 0xff_ffff) as f64 + 0.5) * step);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let r = fast.next_u64();
        data.push(value(r >> 8));
        data.push(value(r >> 40));
    }
    if n % 2 == 1 {
        data.push(value(fast.next_u64() >> 8));
    }
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Normal with standard deviation `std`, redrawn outside ±2σ.
pub(crate) fn truncated_normal<T: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::lit(v);
        }
    })
}

pub(crate) fn normal<T: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape.to_vec(), |_| T::lit(normal.sample(rng)))
}
