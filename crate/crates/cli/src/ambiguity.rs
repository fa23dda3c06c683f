//! Distinguishability of Gaussian pairs under plane projections.
//!
//! Two Gaussians that share a mean and are mirror images through a
//! coordinate plane have identical per-axis extents, so every axis-aligned
//! plane sees the same footprint box. Planes in general orientation see
//! different boxes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ripnerf_core::field::{plane_queries, FieldConfig};
use ripnerf_core::geometry::{platonic_plane_set, Gaussian3, Mat3, PlatonicSolid, Vec3};
use ripnerf_core::ripmap::RipmapQuery;
use serde::Serialize;

/// Level difference above which two queries count as distinct.
pub const LEVEL_TOLERANCE: f64 = 0.05;
pub const POSITION_TOLERANCE: f64 = 1e-9;
/// Minimum relative Frobenius distance for a pair to count as two
/// genuinely different Gaussians.
pub const MIN_COV_DISTANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct GaussianPair {
    pub a: Gaussian3,
    pub b: Gaussian3,
}

/// A thin ellipsoid elongated along `axis` (std `major`, cross-section std
/// `minor`).
pub fn elongated(mean: Vec3, axis: Vec3, major: f64, minor: f64) -> Gaussian3 {
    let a = axis.normalize();
    Gaussian3 { mean, cov: Mat3::identity() * (minor * minor) + a * a.transpose() * (major * major - minor * minor) }
}

/// Two ellipsoids at the origin elongated along the body diagonals
/// `(1, 1, 1)` and `(1, -1, 1)`, covariance `R diag(4, 0.04, 0.04) Rᵀ`.
pub fn body_diagonal_pair() -> GaussianPair {
    GaussianPair {
        a: elongated(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), 2.0, 0.2),
        b: elongated(Vec3::zeros(), Vec3::new(1.0, -1.0, 1.0), 2.0, 0.2),
    }
}

/// Seeded pairs: a random elongated Gaussian and its mirror image through a
/// random coordinate plane. Pairs whose covariances barely differ are
/// skipped.
pub fn random_pairs(seed: u64, count: usize) -> Vec<GaussianPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        let axis = Vec3::new(r * phi.cos(), r * phi.sin(), z);
        let mean = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let major = rng.random_range(2.0..6.0);
        let a = elongated(mean, axis, major, 0.1);
        let mut flip = Mat3::identity();
        let k = rng.random_range(0..3);
        flip[(k, k)] = -1.0;
        let b = Gaussian3 { mean, cov: flip * a.cov * flip };
        if (a.cov - b.cov).norm() / a.cov.norm() > MIN_COV_DISTANCE {
            out.push(GaussianPair { a, b });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairOutcome {
    /// Largest per-axis level difference over all planes.
    pub max_level_diff: f64,
    pub max_pos_diff: f64,
}

impl PairOutcome {
    pub fn collides(&self) -> bool {
        self.max_level_diff <= LEVEL_TOLERANCE && self.max_pos_diff <= POSITION_TOLERANCE
    }
}

pub fn compare(pair: &GaussianPair, solid: PlatonicSolid, cfg: &FieldConfig) -> PairOutcome {
    let planes = platonic_plane_set(solid);
    let qa = plane_queries(&pair.a, &planes, cfg);
    let qb = plane_queries(&pair.b, &planes, cfg);
    let diff = |f: fn(&RipmapQuery) -> [f64; 2]| {
        qa.iter().zip(&qb).flat_map(|(x, y)| {
            let (x, y) = (f(x), f(y));
            [(x[0] - y[0]).abs(), (x[1] - y[1]).abs()]
        })
        .fold(0.0, f64::max)
    };
    PairOutcome { max_level_diff: diff(|q| q.level), max_pos_diff: diff(|q| q.pos) }
}

#[derive(Debug, Clone, Serialize)]
pub struct AmbiguityReport {
    pub candidate: PlatonicSolid,
    pub pairs: usize,
    pub cube_collisions: usize,
    pub candidate_collisions: usize,
    /// Pairs conflated by the cube that the candidate also conflates.
    pub unresolved: usize,
    pub body_diagonal_cube: PairOutcome,
    pub body_diagonal_candidate: PairOutcome,
}

impl AmbiguityReport {
    pub fn passed(&self) -> bool {
        self.unresolved == 0 && !self.body_diagonal_candidate.collides()
    }

    pub fn summary(&self) -> String {
        let frac = |n: usize| n as f64 / self.pairs.max(1) as f64;
        let verdict = |o: &PairOutcome| if o.collides() { "collision" } else { "separated" };
        format!(
            "body-diagonal pair: cube {} (max level diff {:.4}), {} {} (max level diff {:.4})\n\
             random pairs: {}, colliding fraction cube {:.4}, {} {:.4}, unresolved {}\n",
            verdict(&self.body_diagonal_cube),
            self.body_diagonal_cube.max_level_diff,
            self.candidate,
            verdict(&self.body_diagonal_candidate),
            self.body_diagonal_candidate.max_level_diff,
            self.pairs,
            frac(self.cube_collisions),
            self.candidate,
            frac(self.candidate_collisions),
            self.unresolved,
        )
    }
}

pub fn run(candidate: PlatonicSolid, cfg: &FieldConfig, seed: u64, count: usize) -> AmbiguityReport {
    let pairs = random_pairs(seed, count);
    let (mut cube_collisions, mut candidate_collisions, mut unresolved) = (0, 0, 0);
    for p in &pairs {
        let c = compare(p, PlatonicSolid::Cube, cfg).collides();
        let d = compare(p, candidate, cfg).collides();
        cube_collisions += c as usize;
        candidate_collisions += d as usize;
        unresolved += (c && d) as usize;
    }
    let fig = body_diagonal_pair();
    AmbiguityReport {
        candidate,
        pairs: pairs.len(),
        cube_collisions,
        candidate_collisions,
        unresolved,
        body_diagonal_cube: compare(&fig, PlatonicSolid::Cube, cfg),
        body_diagonal_candidate: compare(&fig, candidate, cfg),
    }
}
