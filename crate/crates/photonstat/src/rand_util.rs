//! Inverse-CDF sampling helpers shared by the simulation and resampling
//! code. All transcendentals go through `libm` so that seeded runs
//! reproduce bit for bit on every platform.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Uniform draw in (0, 1], from the top 53 bits of one u64.
#[inline]
pub(crate) fn unit_open(rng: &mut ChaCha12Rng) -> f64 {
    ((rng.random::<u64>() >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal draw via Box-Muller.
#[inline]
pub(crate) fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1 = unit_open(rng);
    let u2 = unit_open(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
}
