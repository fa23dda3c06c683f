//! Binary occupancy grid over the scene's bounding cube, used to skip empty
//! space while marching.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OccupancyConfig {
    pub resolution: usize,
    pub threshold: f64,
    pub decay: f64,
    pub update_every: u64,
    pub warmup: u64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self { resolution: 64, threshold: 0.005, decay: 0.95, update_every: 16, warmup: 256 }
    }
}

/// `resolution³` cells covering `[-radius, radius]³`. Cells that do not
/// touch the bounding sphere are never occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: usize,
    radius: f64,
    eligible: Vec<bool>,
    occupied: Vec<bool>,
    cache: Vec<f64>,
}

impl OccupancyGrid {
    /// A grid with every eligible cell occupied and an empty density cache.
    pub fn new(resolution: usize, radius: f64) -> Self {
        let n = resolution;
        let cell = 2.0 * radius / n as f64;
        let mut eligible = vec![false; n * n * n];
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    // Distance from the origin to the nearest point of the cell.
                    let d2: f64 = [x, y, z]
                        .iter()
                        .map(|&i| {
                            let lo = -radius + i as f64 * cell;
                            let hi = lo + cell;
                            let c = 0.0f64.clamp(lo, hi);
                            c * c
                        })
                        .sum();
                    eligible[(z * n + y) * n + x] = d2 <= radius * radius;
                }
            }
        }
        let occupied = eligible.clone();
        Self { resolution, radius, eligible, occupied, cache: vec![0.0; n * n * n] }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.radius / self.resolution as f64
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn cell_index(&self, p: &Vec3) -> Option<usize> {
        let n = self.resolution;
        let mut idx = [0usize; 3];
        for (k, slot) in idx.iter_mut().enumerate() {
            let u = (p[k] + self.radius) / self.cell_size();
            if !(u >= 0.0 && u < n as f64) {
                return None;
            }
            *slot = (u as usize).min(n - 1);
        }
        Some((idx[2] * n + idx[1]) * n + idx[0])
    }

    pub fn cell_min_corner(&self, index: usize) -> Vec3 {
        let n = self.resolution;
        let (x, y, z) = (index % n, (index / n) % n, index / (n * n));
        let c = self.cell_size();
        Vec3::new(x as f64 * c, y as f64 * c, z as f64 * c) - Vec3::repeat(self.radius)
    }

    pub fn is_eligible(&self, index: usize) -> bool {
        self.eligible[index]
    }

    pub fn is_occupied(&self, index: usize) -> bool {
        self.occupied[index]
    }

    pub fn occupied_at(&self, p: &Vec3) -> bool {
        self.cell_index(p).is_some_and(|i| self.occupied[i])
    }

    pub fn occupied_fraction(&self) -> f64 {
        let eligible = self.eligible.iter().filter(|&&e| e).count();
        self.occupied.iter().filter(|&&o| o).count() as f64 / eligible.max(1) as f64
    }

    pub fn cache(&self) -> &[f64] {
        &self.cache
    }

    pub fn occupied_flags(&self) -> &[bool] {
        &self.occupied
    }

    /// Restore serialized state.
    pub fn set_state(&mut self, occupied: Vec<bool>, cache: Vec<f64>) -> Result<(), String> {
        if occupied.len() != self.len() || cache.len() != self.len() {
            return Err("occupancy state length mismatch".into());
        }
        self.occupied = occupied.iter().zip(&self.eligible).map(|(&o, &e)| o && e).collect();
        self.cache = cache;
        Ok(())
    }

    pub fn mark_all_occupied(&mut self) {
        self.occupied.copy_from_slice(&self.eligible);
    }

    /// One full refresh: each eligible cell's cache becomes
    /// `max(decay · cache, density(jittered point))` and the cell is occupied
    /// iff the cache exceeds `threshold`.
    ///
    /// `density` evaluates a batch of world points; it is called on chunks in
    /// parallel, with the jitter drawn sequentially from `rng`.
    pub fn refresh<R, F>(&mut self, density: F, decay: f64, threshold: f64, rng: &mut R)
    where
        R: Rng + ?Sized,
        F: Fn(&[Vec3]) -> Vec<f64> + Sync,
    {
        let c = self.cell_size();
        let cells: Vec<usize> = (0..self.len()).filter(|&i| self.eligible[i]).collect();
        let points: Vec<Vec3> = cells
            .iter()
            .map(|&i| self.cell_min_corner(i) + Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()) * c)
            .collect();
        #[allow(clippy::redundant_closure)]
        let values: Vec<f64> = points.par_chunks(4096).flat_map_iter(|chunk| density(chunk)).collect();
        for (&i, v) in cells.iter().zip(values) {
            let v = if v.is_finite() { v } else { f64::INFINITY };
            self.cache[i] = (self.cache[i] * decay).max(v);
            self.occupied[i] = self.cache[i] > threshold;
        }
    }
}

/// Apply the occupancy schedule at training step `step`: everything is
/// occupied during warmup, then the grid is refreshed every
/// `update_every` steps. Returns whether the field was evaluated.
pub fn update_occupancy<R, F>(grid: &mut OccupancyGrid, density: F, step: u64, cfg: &OccupancyConfig, rng: &mut R) -> bool
where
    R: Rng + ?Sized,
    F: Fn(&[Vec3]) -> Vec<f64> + Sync,
{
    if step < cfg.warmup {
        grid.mark_all_occupied();
        return false;
    }
    if !(step - cfg.warmup).is_multiple_of(cfg.update_every.max(1)) {
        return false;
    }
    grid.refresh(density, cfg.decay, cfg.threshold, rng);
    true
}
