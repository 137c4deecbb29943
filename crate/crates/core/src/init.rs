//! Seeded parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::{Scalar, Tensor};

/// Glorot-uniform `rows×cols` matrix.
pub fn xavier<F: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<F> {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let u = Uniform::new_inclusive(-a, a).expect("finite bounds");
    Tensor::from_fn(&[rows, cols], |_| F::of(u.sample(rng)))
}

pub fn normal<F: Scalar>(shape: &[usize], sd: f64, rng: &mut impl Rng) -> Tensor<F> {
    let d = Normal::new(0.0, sd).expect("non-negative sd");
    Tensor::from_fn(shape, |_| F::of(d.sample(rng)))
}

pub fn constant<F: Scalar>(shape: &[usize], v: f64) -> Tensor<F> {
    Tensor::from_fn(shape, |_| F::of(v))
}
