//! Cone marching through an occupancy grid and differentiable compositing.

pub mod camera;
pub mod composite;
pub mod occupancy;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{sh_encode, FieldForward, FieldGrad, RadianceField, SH_DIM};
use crate::geometry::{cone_cast_gaussian, FrustumInterval, Gaussian3, Ray};
use crate::raster::Image;
pub use camera::{generate_rays, Camera, CameraError, Intrinsics};
pub use composite::{composite, composite_backward, retained_count, Composite};
pub use occupancy::{update_occupancy, OccupancyConfig, OccupancyGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Marching resolution: the step is `2√3 r / steps`.
    pub steps: usize,
    pub max_samples: usize,
    /// Stop compositing once transmittance falls below this.
    pub early_stop: f64,
    pub background: [f64; 3],
    /// Smallest ray parameter considered.
    pub near: f64,
    pub occupancy: OccupancyConfig,
    /// Rays per parallel work item.
    pub chunk_rays: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            steps: 1024,
            max_samples: 1024,
            early_stop: 1e-4,
            background: [1.0; 3],
            near: 1e-3,
            occupancy: OccupancyConfig::default(),
            chunk_rays: 256,
        }
    }
}

impl RenderConfig {
    pub fn step_size(&self, scene_radius: f64) -> f64 {
        2.0 * 3f64.sqrt() * scene_radius / self.steps as f64
    }
}

/// Ray parameters where the ray enters and leaves the sphere of `radius`
/// around the origin.
pub fn ray_sphere(ray: &Ray, radius: f64) -> Option<(f64, f64)> {
    let d = &ray.direction;
    let a = d.norm_squared();
    let b = 2.0 * ray.origin.dot(d);
    let c = ray.origin.norm_squared() - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-b - s) / (2.0 * a), (-b + s) / (2.0 * a)))
}

/// Uniform slabs of world length `step` tiling the ray's chord through the
/// bounding sphere, keeping those whose midpoint lies in an occupied cell.
pub fn march(ray: &Ray, grid: &OccupancyGrid, step: f64, max_samples: usize, near: f64) -> Vec<FrustumInterval> {
    let Some((t0, t1)) = ray_sphere(ray, grid.radius()) else { return Vec::new() };
    let t_enter = t0.max(near);
    if t1 <= t_enter {
        return Vec::new();
    }
    let dt = step / ray.direction.norm();
    let n = ((t1 - t_enter) / dt).ceil() as usize;
    let mut out = Vec::new();
    for k in 0..n {
        if out.len() >= max_samples {
            break;
        }
        let a = t_enter + k as f64 * dt;
        let b = (t_enter + (k + 1) as f64 * dt).min(t1);
        let Ok(iv) = FrustumInterval::new(a, b) else { continue };
        if grid.occupied_at(&ray.at(iv.mid())) {
            out.push(iv);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedPixel {
    pub color: [f64; 3],
    pub opacity: f64,
}

/// A batch of rays traced with cached state for the reverse pass.
#[derive(Debug, Clone)]
pub struct TracedRays {
    /// Ray `r` owns retained samples `offsets[r]..offsets[r + 1]`.
    pub offsets: Vec<usize>,
    pub intervals: Vec<FrustumInterval>,
    pub gaussians: Vec<Gaussian3>,
    /// World-space step length per retained sample.
    pub delta: Vec<f64>,
    pub forward: FieldForward,
    pub composites: Vec<Composite>,
}

impl TracedRays {
    pub fn pixels(&self) -> Vec<RenderedPixel> {
        self.composites.iter().map(|c| RenderedPixel { color: c.color, opacity: c.opacity }).collect()
    }

    pub fn sample_count(&self) -> usize {
        self.delta.len()
    }
}

/// March, featurize, decode and composite `rays` on the current thread.
///
/// Densities of every marched sample are evaluated first; only the samples
/// in front of the early-termination point are decoded fully and cached.
pub fn trace_rays(field: &RadianceField, grid: &OccupancyGrid, rays: &[Ray], cfg: &RenderConfig) -> TracedRays {
    let step = cfg.step_size(grid.radius());
    let mut marched: Vec<(Vec<FrustumInterval>, Vec<Gaussian3>, Vec<f64>)> = Vec::with_capacity(rays.len());
    let mut all_gaussians = Vec::new();
    for ray in rays {
        let ivs = march(ray, grid, step, cfg.max_samples, cfg.near);
        let gs: Vec<Gaussian3> = ivs.iter().map(|iv| cone_cast_gaussian(ray, iv)).collect();
        let dn = ray.direction.norm();
        let delta: Vec<f64> = ivs.iter().map(|iv| iv.width() * dn).collect();
        all_gaussians.extend_from_slice(&gs);
        marched.push((ivs, gs, delta));
    }
    let (all_features, all_stencils) = field.featurize_batch(&all_gaussians);
    let density = field.density_from_features(all_features.view());
    let density = density.as_slice().expect("contiguous");
    let planes = field.planes().len();

    let mut offsets = Vec::with_capacity(rays.len() + 1);
    offsets.push(0);
    let mut intervals = Vec::new();
    let mut gaussians = Vec::new();
    let mut delta = Vec::new();
    let mut sh_rows: Vec<f64> = Vec::new();
    let mut kept_rows = Vec::new();
    let mut cursor = 0;
    for (ray, (ivs, gs, dl)) in rays.iter().zip(&marched) {
        let n = ivs.len();
        let keep = retained_count(&density[cursor..cursor + n], dl, cfg.early_stop);
        let sh = sh_encode(&ray.direction).expect("ray directions are nonzero");
        for _ in 0..keep {
            sh_rows.extend_from_slice(&sh);
        }
        kept_rows.extend(cursor..cursor + keep);
        cursor += n;
        intervals.extend_from_slice(&ivs[..keep]);
        gaussians.extend_from_slice(&gs[..keep]);
        delta.extend_from_slice(&dl[..keep]);
        offsets.push(gaussians.len());
    }
    let features = all_features.select(Axis(0), &kept_rows);
    let stencils = kept_rows.iter().flat_map(|&r| all_stencils[r * planes..(r + 1) * planes].iter().copied()).collect();
    let sh = Array2::from_shape_vec((gaussians.len(), SH_DIM), sh_rows).expect("shape");
    let forward = field.forward_from_features(features, stencils, sh.view());

    let composites = (0..rays.len())
        .map(|r| {
            let (a, b) = (offsets[r], offsets[r + 1]);
            let dens = &forward.mlp.density.as_slice().expect("contiguous")[a..b];
            let cols: Vec<[f64; 3]> = (a..b).map(|i| [forward.mlp.color[[i, 0]], forward.mlp.color[[i, 1]], forward.mlp.color[[i, 2]]]).collect();
            composite(dens, &delta[a..b], &cols, cfg.background, cfg.early_stop)
        })
        .collect();
    TracedRays { offsets, intervals, gaussians, delta, forward, composites }
}

/// Reverse pass for a traced batch given per-ray `dL/dcolor` and
/// `dL/dopacity`; accumulates into `grad`.
pub fn backward_rays(
    field: &RadianceField,
    traced: &TracedRays,
    d_color: &[[f64; 3]],
    d_opacity: &[f64],
    background: [f64; 3],
    grad: &mut FieldGrad,
) {
    let n = traced.sample_count();
    let mut dd = Array1::zeros(n);
    let mut dc = Array2::zeros((n, 3));
    let color = &traced.forward.mlp.color;
    for (r, comp) in traced.composites.iter().enumerate() {
        let a = traced.offsets[r];
        let used = comp.used();
        let cols: Vec<[f64; 3]> = (a..a + used).map(|i| [color[[i, 0]], color[[i, 1]], color[[i, 2]]]).collect();
        let (g_tau, g_col) = composite_backward(comp, &traced.delta[a..a + used], &cols, background, d_color[r], d_opacity[r]);
        for k in 0..used {
            dd[a + k] = g_tau[k];
            for c in 0..3 {
                dc[[a + k, c]] = g_col[k][c];
            }
        }
    }
    field.backward_batch(&traced.forward, &dd, &dc, grad);
}

/// Render rays in parallel chunks; output order matches `rays`.
pub fn render_rays(field: &RadianceField, grid: &OccupancyGrid, rays: &[Ray], cfg: &RenderConfig) -> Vec<RenderedPixel> {
    rays.par_chunks(cfg.chunk_rays.max(1)).flat_map_iter(|chunk| trace_rays(field, grid, chunk, cfg).pixels()).collect()
}

/// Render a full frame as RGBA: composited color plus opacity.
pub fn render_image(field: &RadianceField, grid: &OccupancyGrid, camera: &Camera, cfg: &RenderConfig) -> Image {
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    let rays: Vec<Ray> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).map(|(r, c)| camera.pixel_ray(r, c)).collect();
    let px = render_rays(field, grid, &rays, cfg);
    let mut img = Image::new(w as usize, h as usize, 4);
    for (dst, p) in img.data.chunks_exact_mut(4).zip(px) {
        dst[..3].copy_from_slice(&p.color);
        dst[3] = p.opacity;
    }
    img
}
