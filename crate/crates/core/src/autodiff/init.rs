use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Tensor};

/// Half-width of the Kaiming uniform interval, `gain * sqrt(6 / fan_in)`.
pub fn kaiming_uniform_bound(fan_in: usize, gain: f64) -> Result<f64, AutodiffError> {
    if fan_in == 0 {
        return Err(AutodiffError::ZeroFanIn);
    }
    Ok(gain * (6.0 / fan_in as f64).sqrt())
}

/// I.i.d. uniform samples on `[-bound, bound]`, see [`kaiming_uniform_bound`].
///
/// GELU layers use `gain = 1`.
pub fn kaiming_uniform(
    shape: &[usize],
    fan_in: usize,
    gain: f64,
    seed: u64,
) -> Result<Tensor, AutodiffError> {
    let bound = kaiming_uniform_bound(fan_in, gain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data)
}
