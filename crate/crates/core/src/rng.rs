//! Seeded, splittable random streams.
//!
//! Every agent draws from its own stream keyed by `(seed, stream, block)`, so
//! results do not depend on scheduling or thread count. Keys are hashed with
//! the SplitMix64 finalizer and expanded into a xoshiro256++ state.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};

pub type StreamRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStreams {
    pub seed: u64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Independent generator for `(stream, block)`. Deriving it touches no
    /// shared state.
    #[inline]
    pub fn stream(&self, stream: u64, block: u64) -> StreamRng {
        let k = mix64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let k = mix64(k ^ stream.wrapping_mul(0xd1b5_4a32_d192_ed03));
        let k = mix64(k ^ block.wrapping_mul(0xaef1_7502_108e_f2d9));
        Xoshiro256PlusPlus::seed_from_u64(k)
    }

    /// Derives a child seed family, e.g. one per repeat of an experiment.
    pub fn fork(&self, salt: u64) -> RngStreams {
        RngStreams::new(mix64(self.seed ^ mix64(salt.wrapping_add(0x632b_e59b_d9b4_e019))))
    }
}

/// Uniform direction on the unit sphere.
pub fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f32 = rng.random_range(-1.0..=1.0);
    let phi: f32 = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Direction uniform over the solid angle of the cone of half-angle
/// `half_angle` around `axis`.
pub fn cone_uniform_solid<R: Rng + ?Sized>(rng: &mut R, axis: Vec3, half_angle: f32) -> Vec3 {
    let cos_min = half_angle.cos();
    let cos_t: f32 = rng.random_range(cos_min..=1.0);
    let theta = cos_t.clamp(-1.0, 1.0).acos();
    let phi: f32 = rng.random_range(0.0..TAU);
    geom::direction_in_cone(axis, theta, phi)
}

/// Uniform point in the unit cube.
pub fn unit_cube_point<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    [rng.random(), rng.random(), rng.random()]
}
