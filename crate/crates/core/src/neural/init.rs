use rand::Rng;

use super::{cast, Real, Tensor};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| cast(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data)
}
