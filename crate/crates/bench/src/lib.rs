//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subcoupling::bridge::BlockConfig;
use subcoupling::reflection::ReflectionConfig;
use subcoupling::sde::SdeConfig;
use subcoupling::Curvature;

pub fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream)
}

/// One unit of time on the sphere in `n` radial steps.
pub fn radial_config(n: usize) -> SdeConfig {
    SdeConfig::new(Curvature::Spherical, 1.0 / n as f64).expect("positive step")
}

/// Equatorial block of length `t_block` with `n` steps.
pub fn block(t_block: f64, n: usize) -> BlockConfig {
    BlockConfig::equatorial(t_block, n).expect("valid block")
}

pub fn mirror() -> ReflectionConfig {
    ReflectionConfig::new(1e-3, 50.0).expect("valid mirror config")
}

pub const START_PHI: f64 = 0.5 * PI;
