//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ripnerf_core::geometry::{cone_cast_gaussian, FrustumInterval, Gaussian3, Ray, Vec3};
use ripnerf_core::ripmap::{FeatureGrid, Ripmap, RipmapQuery};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_ripmap(size: usize, channels: usize, seed: u64) -> Ripmap {
    Ripmap::build(FeatureGrid::uniform(size, size, channels, 1.0, &mut rng(seed)).expect("valid grid"))
}

pub fn random_queries(n: usize, levels: usize, seed: u64) -> Vec<RipmapQuery> {
    let mut r = rng(seed);
    let max = (levels - 1) as f64;
    (0..n)
        .map(|_| RipmapQuery { pos: [r.random(), r.random()], level: [r.random_range(0.0..max), r.random_range(0.0..max)] })
        .collect()
}

/// Cone-cast Gaussians along random rays through the scene.
pub fn random_gaussians(n: usize, seed: u64) -> Vec<Gaussian3> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let origin = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 4.0);
            let target = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 0.0);
            let ray = Ray::new(origin, target - origin, 1e-3).expect("valid ray");
            let t = r.random_range(2.0..5.0);
            cone_cast_gaussian(&ray, &FrustumInterval::new(t, t + 0.01).expect("valid interval"))
        })
        .collect()
}
