use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Xavier (Glorot) uniform initialization of a 2-D tensor: samples drawn
/// from `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
/// Deterministic for a fixed seed.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::invalid(
            "xavier_init",
            format!("zero fan: ({fan_in}, {fan_out})"),
        ));
    }
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data)
}
