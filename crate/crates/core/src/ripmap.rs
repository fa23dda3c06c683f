//! Learnable ripmap encoding.
//!
//! A ripmap is an anisotropic mip pyramid: level `(i, j)` of a `W × H` grid
//! has been halved `i` times along x and `j` times along y, so a footprint
//! that is long in one direction and short in the other can be pre-filtered
//! with a matching rectangle. Only the base grid is learnable; every other
//! level is derived from it by 2-tap average pooling, and gradients flow back
//! to the base through the transpose of that pooling.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::geometry::Gaussian2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RipmapError {
    #[error("grid dimensions must be positive powers of two, got {height}x{width}x{channels}")]
    BadDimensions { height: usize, width: usize, channels: usize },
    #[error("expected {expected} values, got {actual}")]
    BadLength { expected: usize, actual: usize },
    #[error("grid contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("ripmap pyramid is stale; call refresh() after editing the base grid")]
    Stale,
}

/// An `H × W × C` grid stored row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self, RipmapError> {
        check_dims(height, width, channels)?;
        Ok(Self { height, width, channels, values: vec![0.0; height * width * channels] })
    }

    pub fn from_values(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self, RipmapError> {
        check_dims(height, width, channels)?;
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(RipmapError::BadLength { expected, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RipmapError::NonFinite(i));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn uniform<R: Rng + ?Sized>(height: usize, width: usize, channels: usize, bound: f64, rng: &mut R) -> Result<Self, RipmapError> {
        let mut g = Self::zeros(height, width, channels)?;
        for v in &mut g.values {
            *v = rng.random_range(-bound..=bound);
        }
        Ok(g)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.values[i..i + self.channels]
    }

    /// Halve the width by averaging horizontally adjacent cells.
    pub fn pool_x(&self) -> FeatureGrid {
        let (w, h, c) = (self.width / 2, self.height, self.channels);
        let mut out = vec![0.0; w * h * c];
        pool_x_into(&self.values, self.width, h, c, &mut out);
        FeatureGrid { height: h, width: w, channels: c, values: out }
    }

    /// Halve the height by averaging vertically adjacent cells.
    pub fn pool_y(&self) -> FeatureGrid {
        let (w, h, c) = (self.width, self.height / 2, self.channels);
        let mut out = vec![0.0; w * h * c];
        pool_y_into(&self.values, w, self.height, c, &mut out);
        FeatureGrid { height: h, width: w, channels: c, values: out }
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.channels];
        for cell in self.values.chunks_exact(self.channels) {
            for (a, v) in m.iter_mut().zip(cell) {
                *a += v;
            }
        }
        let n = (self.width * self.height) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<(), RipmapError> {
    if height.is_power_of_two() && width.is_power_of_two() && channels > 0 {
        Ok(())
    } else {
        Err(RipmapError::BadDimensions { height, width, channels })
    }
}

fn pool_x_into(src: &[f64], src_w: usize, h: usize, c: usize, dst: &mut [f64]) {
    let dst_w = src_w / 2;
    for y in 0..h {
        for x in 0..dst_w {
            let a = (y * src_w + 2 * x) * c;
            let o = (y * dst_w + x) * c;
            for k in 0..c {
                dst[o + k] = 0.5 * (src[a + k] + src[a + c + k]);
            }
        }
    }
}

fn pool_y_into(src: &[f64], w: usize, src_h: usize, c: usize, dst: &mut [f64]) {
    let row = w * c;
    for y in 0..src_h / 2 {
        let a = 2 * y * row;
        let o = y * row;
        for k in 0..row {
            dst[o + k] = 0.5 * (src[a + k] + src[a + row + k]);
        }
    }
}

/// A point in the 4D (position, level) space of a ripmap. Positions are
/// normalized texture coordinates, levels are fractional pyramid indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipmapQuery {
    pub pos: [f64; 2],
    pub level: [f64; 2],
}

/// Constants mapping a projected Gaussian to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelParams {
    /// Radius of the scene's bounding sphere.
    pub scene_radius: f64,
    /// How much of the footprint's probability mass the sampled cell covers.
    pub mass_factor: f64,
    /// Added to every raw level before clamping.
    pub level_offset: f64,
}

/// `log2(w σ / r)`; `-inf` for a zero-width footprint.
pub fn raw_level(sigma: f64, params: &LevelParams) -> f64 {
    (params.mass_factor * sigma / params.scene_radius).log2()
}

/// Plane coordinate to normalized texture coordinate, clamped to `[0, 1]`.
pub fn texture_coord(plane_coord: f64, scene_radius: f64) -> f64 {
    (plane_coord / (2.0 * scene_radius) + 0.5).clamp(0.0, 1.0)
}

fn clamp_level(l: f64, levels: usize) -> f64 {
    let max = (levels - 1) as f64;
    if l.is_nan() {
        0.0
    } else {
        l.clamp(0.0, max)
    }
}

/// Query for an anisotropic footprint: one level per axis, each from that
/// axis' standard deviation.
pub fn derive_query(g2: &Gaussian2, params: &LevelParams, levels_x: usize, levels_y: usize) -> RipmapQuery {
    let [sx, sy] = g2.std_devs();
    RipmapQuery {
        pos: [texture_coord(g2.mean.x, params.scene_radius), texture_coord(g2.mean.y, params.scene_radius)],
        level: [
            clamp_level(raw_level(sx, params) + params.level_offset, levels_x),
            clamp_level(raw_level(sy, params) + params.level_offset, levels_y),
        ],
    }
}

/// Query for an isotropic (mipmap) footprint: a single level from the mean
/// of the two variances, applied to both axes.
pub fn derive_isotropic_query(g2: &Gaussian2, params: &LevelParams, levels_x: usize, levels_y: usize) -> RipmapQuery {
    let var = 0.5 * (g2.cov[(0, 0)].max(0.0) + g2.cov[(1, 1)].max(0.0));
    let l = clamp_level(raw_level(var.sqrt(), params) + params.level_offset, levels_x.min(levels_y));
    RipmapQuery {
        pos: [texture_coord(g2.mean.x, params.scene_radius), texture_coord(g2.mean.y, params.scene_radius)],
        level: [l, l],
    }
}

/// The 16 weighted pyramid cells touched by one query. `offsets` are flat
/// indices of channel 0 of each cell inside the pyramid buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub offsets: [usize; 16],
    pub weights: [f64; 16],
}

struct AxisSplit {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn split_level(l: f64, levels: usize) -> AxisSplit {
    if levels == 1 {
        return AxisSplit { lo: 0, hi: 0, frac: 0.0 };
    }
    let l = clamp_level(l, levels);
    let lo = (l.floor() as usize).min(levels - 2);
    AxisSplit { lo, hi: lo + 1, frac: l - lo as f64 }
}

fn split_pos(u: f64, size: usize) -> AxisSplit {
    // Cell k holds the sample at (k + 0.5) / size; clamp half a texel in.
    let x = (u.clamp(0.0, 1.0) * size as f64 - 0.5).clamp(0.0, (size - 1) as f64);
    let lo = (x.floor() as usize).min(size - 1);
    let hi = (lo + 1).min(size - 1);
    AxisSplit { lo, hi, frac: x - lo as f64 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ripmap {
    base: FeatureGrid,
    levels_x: usize,
    levels_y: usize,
    offsets: Vec<usize>,
    pyramid: Vec<f64>,
    dirty: bool,
}

impl Ripmap {
    /// Wrap `base` and build its full pyramid.
    pub fn build(base: FeatureGrid) -> Self {
        let levels_x = base.width.trailing_zeros() as usize + 1;
        let levels_y = base.height.trailing_zeros() as usize + 1;
        let mut offsets = Vec::with_capacity(levels_x * levels_y);
        let mut total = 0;
        for i in 0..levels_x {
            for j in 0..levels_y {
                offsets.push(total);
                total += (base.width >> i) * (base.height >> j) * base.channels;
            }
        }
        let mut rm = Self { base, levels_x, levels_y, offsets, pyramid: vec![0.0; total], dirty: true };
        rm.refresh();
        rm
    }

    pub fn base(&self) -> &FeatureGrid {
        &self.base
    }

    /// Mutable access to the learnable values; marks the pyramid stale.
    pub fn base_values_mut(&mut self) -> &mut [f64] {
        self.dirty = true;
        &mut self.base.values
    }

    pub fn levels_x(&self) -> usize {
        self.levels_x
    }

    pub fn levels_y(&self) -> usize {
        self.levels_y
    }

    pub fn channels(&self) -> usize {
        self.base.channels
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn pyramid_len(&self) -> usize {
        self.pyramid.len()
    }

    pub fn level_dims(&self, i: usize, j: usize) -> (usize, usize) {
        (self.base.width >> i, self.base.height >> j)
    }

    fn level_range(&self, i: usize, j: usize) -> std::ops::Range<usize> {
        let (w, h) = self.level_dims(i, j);
        let o = self.offsets[i * self.levels_y + j];
        o..o + w * h * self.base.channels
    }

    /// A copy of pyramid level `(i, j)`.
    pub fn level(&self, i: usize, j: usize) -> FeatureGrid {
        let (w, h) = self.level_dims(i, j);
        FeatureGrid { height: h, width: w, channels: self.base.channels, values: self.pyramid[self.level_range(i, j)].to_vec() }
    }

    /// Rebuild the pyramid if the base changed since the last build.
    pub fn refresh(&mut self) {
        if !self.dirty {
            return;
        }
        let c = self.base.channels;
        let r00 = self.level_range(0, 0);
        self.pyramid[r00].copy_from_slice(&self.base.values);
        for i in 1..self.levels_x {
            let (w, h) = self.level_dims(i - 1, 0);
            let src = self.level_range(i - 1, 0);
            let dst = self.level_range(i, 0);
            let (head, tail) = self.pyramid.split_at_mut(dst.start);
            pool_x_into(&head[src], w, h, c, &mut tail[..dst.len()]);
        }
        for i in 0..self.levels_x {
            for j in 1..self.levels_y {
                let (w, h) = self.level_dims(i, j - 1);
                let src = self.level_range(i, j - 1);
                let dst = self.level_range(i, j);
                let (head, tail) = self.pyramid.split_at_mut(dst.start);
                pool_y_into(&head[src], w, h, c, &mut tail[..dst.len()]);
            }
        }
        self.dirty = false;
    }

    /// Cells and weights of the tetra-linear interpolation for `q`.
    pub fn stencil(&self, q: &RipmapQuery) -> Stencil {
        let c = self.base.channels;
        let lx = split_level(q.level[0], self.levels_x);
        let ly = split_level(q.level[1], self.levels_y);
        let mut offsets = [0usize; 16];
        let mut weights = [0f64; 16];
        let mut n = 0;
        for (i, wi) in [(lx.lo, 1.0 - lx.frac), (lx.hi, lx.frac)] {
            for (j, wj) in [(ly.lo, 1.0 - ly.frac), (ly.hi, ly.frac)] {
                let (w, h) = self.level_dims(i, j);
                let base = self.offsets[i * self.levels_y + j];
                let px = split_pos(q.pos[0], w);
                let py = split_pos(q.pos[1], h);
                for (y, wy) in [(py.lo, 1.0 - py.frac), (py.hi, py.frac)] {
                    for (x, wx) in [(px.lo, 1.0 - px.frac), (px.hi, px.frac)] {
                        offsets[n] = base + (y * w + x) * c;
                        weights[n] = wi * wj * wy * wx;
                        n += 1;
                    }
                }
            }
        }
        Stencil { offsets, weights }
    }

    /// Interpolate into `out` (length `channels`) without checking staleness.
    pub fn query_into(&self, q: &RipmapQuery, out: &mut [f64]) -> Stencil {
        debug_assert!(!self.dirty);
        let st = self.stencil(q);
        self.gather(&st, out);
        st
    }

    pub fn gather(&self, st: &Stencil, out: &mut [f64]) {
        let c = self.base.channels;
        out[..c].fill(0.0);
        for (&o, &w) in st.offsets.iter().zip(&st.weights) {
            if w == 0.0 {
                continue;
            }
            for (acc, v) in out[..c].iter_mut().zip(&self.pyramid[o..o + c]) {
                *acc += w * v;
            }
        }
    }

    pub fn query(&self, q: &RipmapQuery) -> Result<Vec<f64>, RipmapError> {
        if self.dirty {
            return Err(RipmapError::Stale);
        }
        let mut out = vec![0.0; self.base.channels];
        self.query_into(q, &mut out);
        Ok(out)
    }

    /// Gradient of `upstream · query(q)` with respect to the base grid, as
    /// sorted `(flat base index, value)` pairs.
    pub fn query_backward(&self, q: &RipmapQuery, upstream: &[f64]) -> Result<Vec<(usize, f64)>, RipmapError> {
        if self.dirty {
            return Err(RipmapError::Stale);
        }
        let c = self.base.channels;
        let st = self.stencil(q);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (&o, &w) in st.offsets.iter().zip(&st.weights) {
            if w == 0.0 {
                continue;
            }
            let (i, j, x, y) = self.locate(o);
            let (bx, by) = (1usize << i, 1usize << j);
            let share = w / (bx * by) as f64;
            for yy in y * by..(y + 1) * by {
                for xx in x * bx..(x + 1) * bx {
                    let b = self.base.index(xx, yy);
                    for k in 0..c {
                        *acc.entry(b + k).or_insert(0.0) += share * upstream[k];
                    }
                }
            }
        }
        Ok(acc.into_iter().collect())
    }

    fn locate(&self, offset: usize) -> (usize, usize, usize, usize) {
        let slot = self.offsets.partition_point(|&o| o <= offset) - 1;
        let (i, j) = (slot / self.levels_y, slot % self.levels_y);
        let (w, _) = self.level_dims(i, j);
        let cell = (offset - self.offsets[slot]) / self.base.channels;
        (i, j, cell % w, cell / w)
    }

    /// Scatter `weights * upstream` into a pyramid-shaped gradient buffer.
    pub fn scatter(&self, st: &Stencil, upstream: &[f64], grad: &mut [f64]) {
        let c = self.base.channels;
        for (&o, &w) in st.offsets.iter().zip(&st.weights) {
            if w == 0.0 {
                continue;
            }
            for (g, u) in grad[o..o + c].iter_mut().zip(upstream) {
                *g += w * u;
            }
        }
    }

    /// Push a pyramid-shaped gradient through the pooling chain in place.
    /// Afterwards the level-(0, 0) slice, `grad[..base_len]`, holds the
    /// gradient with respect to the base grid.
    pub fn reduce_pyramid_grad(&self, grad: &mut [f64]) {
        let c = self.base.channels;
        for j in (1..self.levels_y).rev() {
            for i in 0..self.levels_x {
                let (w, h) = self.level_dims(i, j);
                let src = self.level_range(i, j);
                let dst = self.level_range(i, j - 1);
                let row = w * c;
                let (head, tail) = grad.split_at_mut(src.start);
                let s = &tail[..src.len()];
                let d = &mut head[dst];
                for y in 0..h {
                    for k in 0..row {
                        let g = 0.5 * s[y * row + k];
                        d[2 * y * row + k] += g;
                        d[(2 * y + 1) * row + k] += g;
                    }
                }
            }
        }
        for i in (1..self.levels_x).rev() {
            let (w, h) = self.level_dims(i, 0);
            let src = self.level_range(i, 0);
            let dst = self.level_range(i - 1, 0);
            let (head, tail) = grad.split_at_mut(src.start);
            let s = &tail[..src.len()];
            let d = &mut head[dst];
            for y in 0..h {
                for x in 0..w {
                    for k in 0..c {
                        let g = 0.5 * s[(y * w + x) * c + k];
                        d[(y * 2 * w + 2 * x) * c + k] += g;
                        d[(y * 2 * w + 2 * x + 1) * c + k] += g;
                    }
                }
            }
        }
    }

    pub fn base_len(&self) -> usize {
        self.base.values.len()
    }
}
