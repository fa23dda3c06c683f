//! Procedural scenes of constant-density primitives with exact ground truth.
//!
//! Density and color are piecewise constant along any ray, so the volume
//! rendering integral is evaluated exactly segment by segment instead of by
//! sampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, ScaledDataset, Split, ViewRecord};
use crate::geometry::{Ray, Vec3};
use crate::raster::Image;
use crate::render::{Camera, Intrinsics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        color: [f64; 3],
        density: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
        color: [f64; 3],
        density: f64,
    },
    /// Box whose color alternates between `colors` in slabs of
    /// `stripe_width` along `axis`.
    StripedBox {
        center: [f64; 3],
        half_extents: [f64; 3],
        colors: [[f64; 3]; 2],
        stripe_width: f64,
        axis: usize,
        density: f64,
    },
}

impl Primitive {
    fn center(&self) -> Vec3 {
        let c = match self {
            Primitive::Sphere { center, .. } | Primitive::Box { center, .. } | Primitive::StripedBox { center, .. } => center,
        };
        Vec3::from(*c)
    }

    pub fn density(&self) -> f64 {
        match self {
            Primitive::Sphere { density, .. } | Primitive::Box { density, .. } | Primitive::StripedBox { density, .. } => *density,
        }
    }

    fn bounding_radius(&self) -> f64 {
        let c = self.center().norm();
        match self {
            Primitive::Sphere { radius, .. } => c + radius,
            Primitive::Box { half_extents, .. } | Primitive::StripedBox { half_extents, .. } => c + Vec3::from(*half_extents).norm(),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let d = p - self.center();
        match self {
            Primitive::Sphere { radius, .. } => d.norm_squared() <= radius * radius,
            Primitive::Box { half_extents: h, .. } | Primitive::StripedBox { half_extents: h, .. } => {
                (0..3).all(|k| d[k].abs() <= h[k])
            }
        }
    }

    pub fn color_at(&self, p: &Vec3) -> [f64; 3] {
        match self {
            Primitive::Sphere { color, .. } | Primitive::Box { color, .. } => *color,
            Primitive::StripedBox { center, half_extents, colors, stripe_width, axis, .. } => {
                let lo = center[*axis] - half_extents[*axis];
                let k = ((p[*axis] - lo) / stripe_width).floor() as i64;
                colors[k.rem_euclid(2) as usize]
            }
        }
    }

    /// Parameter range where the ray is inside the primitive.
    fn hit(&self, ray: &Ray) -> Option<(f64, f64)> {
        let o = ray.origin - self.center();
        let d = &ray.direction;
        match self {
            Primitive::Sphere { radius, .. } => {
                let a = d.norm_squared();
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
            Primitive::Box { half_extents: h, .. } | Primitive::StripedBox { half_extents: h, .. } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k].abs() > h[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-h[k] - o[k]) / d[k];
                    let b = (h[k] - o[k]) / d[k];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 < t1).then_some((t0, t1))
            }
        }
    }

    fn validate(&self, scene_radius: f64) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Toy(m.to_string()));
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !(self.density() >= 0.0 && self.density().is_finite()) {
            return bad("density must be finite and nonnegative");
        }
        match self {
            Primitive::Sphere { radius, color, .. } => {
                if !(*radius > 0.0) || !in_unit(color) {
                    return bad("sphere needs a positive radius and colors in [0, 1]");
                }
            }
            Primitive::Box { half_extents, color, .. } => {
                if !half_extents.iter().all(|&h| h > 0.0) || !in_unit(color) {
                    return bad("box needs positive half extents and colors in [0, 1]");
                }
            }
            Primitive::StripedBox { half_extents, colors, stripe_width, axis, .. } => {
                if !half_extents.iter().all(|&h| h > 0.0) || !colors.iter().all(in_unit) || !(*stripe_width > 0.0) || *axis > 2 {
                    return bad("striped box needs positive extents and stripe width, an axis in 0..3 and colors in [0, 1]");
                }
            }
        }
        if self.bounding_radius() > scene_radius {
            return Err(DataError::Toy(format!(
                "primitive extends to radius {:.4}, outside the scene radius {scene_radius}",
                self.bounding_radius()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub seed: u64,
    pub scene_radius: f64,
    pub primitives: Vec<Primitive>,
    pub train_views: usize,
    pub eval_views: usize,
    /// Square image side at full resolution.
    pub resolution: u32,
    pub fov_deg: f64,
    pub camera_distance: f64,
    /// Subpixel grid side used when rendering ground truth.
    pub supersample: u32,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_radius: 1.5,
            primitives: vec![
                Primitive::Sphere { center: [-0.45, 0.3, 0.25], radius: 0.4, color: [0.9, 0.15, 0.1], density: 50.0 },
                Primitive::Box {
                    center: [0.45, 0.35, -0.15],
                    half_extents: [0.3, 0.25, 0.35],
                    color: [0.1, 0.3, 0.85],
                    density: 50.0,
                },
                Primitive::StripedBox {
                    center: [0.0, -0.5, -0.1],
                    half_extents: [0.6, 0.2, 0.3],
                    colors: [[0.95, 0.85, 0.2], [0.1, 0.1, 0.1]],
                    stripe_width: 0.1,
                    axis: 0,
                    density: 50.0,
                },
            ],
            train_views: 16,
            eval_views: 8,
            resolution: 64,
            fov_deg: 40.0,
            camera_distance: 4.0,
            supersample: 2,
        }
    }
}

impl ToySpec {
    /// A single finely striped box filling most of the view, for aliasing
    /// experiments across scales.
    pub fn striped() -> Self {
        Self {
            primitives: vec![Primitive::StripedBox {
                center: [0.0, 0.0, 0.0],
                half_extents: [0.75, 0.75, 0.25],
                colors: [[0.95, 0.95, 0.95], [0.05, 0.05, 0.05]],
                stripe_width: 0.06,
                axis: 0,
                density: 50.0,
            }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.scene_radius > 0.0) || self.resolution == 0 || self.supersample == 0 {
            return Err(DataError::Toy("scene radius, resolution and supersample must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.camera_distance > self.scene_radius) {
            return Err(DataError::Toy("cameras need 0 < fov < 180 and must sit outside the scene sphere".into()));
        }
        self.primitives.iter().try_for_each(|p| p.validate(self.scene_radius))
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let w = self.resolution;
        let f = 0.5 * w as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Intrinsics { fx: f, fy: f, cx: w as f64 / 2.0, cy: w as f64 / 2.0, width: w, height: w }
    }

    /// Cameras on the upper hemisphere looking at the origin. Elevations are
    /// stratified, azimuths follow a golden-angle spiral with a seeded
    /// offset; eval cameras are interleaved between train cameras.
    pub fn cameras(&self, split: Split) -> Result<Vec<Camera>, DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let phase: f64 = rng.random::<f64>() * 2.0 * PI;
        let (n, shift) = match split {
            Split::Train => (self.train_views, 0.0),
            Split::Eval => (self.eval_views, 0.5),
        };
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) / n as f64;
                let z = 0.1 + 0.75 * s;
                let az = phase + (i as f64 + shift) * golden + shift * PI;
                let rho = (1.0 - z * z).sqrt();
                let eye = self.camera_distance * Vec3::new(rho * az.cos(), rho * az.sin(), z);
                Ok(Camera::look_at(self.intrinsics(), eye, Vec3::zeros(), Vec3::z())?)
            })
            .collect()
    }
}

/// The analytic field of a validated [`ToySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub spec: ToySpec,
}

impl ToyScene {
    pub fn new(spec: ToySpec) -> Result<Self, DataError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn density(&self, p: &Vec3) -> f64 {
        self.spec.primitives.iter().filter(|q| q.contains(p)).map(Primitive::density).sum()
    }

    /// Density-weighted mean color of the primitives covering `p`.
    pub fn color(&self, p: &Vec3) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for q in self.spec.primitives.iter().filter(|q| q.contains(p)) {
            let (s, c) = (q.density(), q.color_at(p));
            total += s;
            for k in 0..3 {
                acc[k] += s * c[k];
            }
        }
        if total > 0.0 {
            acc.iter_mut().for_each(|v| *v /= total);
        }
        acc
    }

    /// Ray parameters where density or color may change.
    fn breakpoints(&self, ray: &Ray) -> Vec<f64> {
        let mut ts = Vec::new();
        for q in &self.spec.primitives {
            let Some((t0, t1)) = q.hit(ray) else { continue };
            let (t0, t1) = (t0.max(0.0), t1.max(0.0));
            if t1 <= t0 {
                continue;
            }
            ts.push(t0);
            ts.push(t1);
            if let Primitive::StripedBox { center, half_extents, stripe_width, axis, .. } = q {
                let (o, d) = (ray.origin[*axis], ray.direction[*axis]);
                if d != 0.0 {
                    let lo = center[*axis] - half_extents[*axis];
                    let count = (2.0 * half_extents[*axis] / stripe_width).ceil() as usize;
                    for k in 1..count {
                        let t = (lo + k as f64 * stripe_width - o) / d;
                        if t > t0 && t < t1 {
                            ts.push(t);
                        }
                    }
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Exact premultiplied color and opacity along `ray`.
    pub fn trace(&self, ray: &Ray) -> ([f64; 3], f64) {
        let ts = self.breakpoints(ray);
        let dn = ray.direction.norm();
        let mut rgb = [0.0; 3];
        let mut trans = 1.0;
        for w in ts.windows(2) {
            let p = ray.at(0.5 * (w[0] + w[1]));
            let sigma = self.density(&p);
            if sigma == 0.0 {
                continue;
            }
            let alpha = -(-sigma * (w[1] - w[0]) * dn).exp_m1();
            let c = self.color(&p);
            for k in 0..3 {
                rgb[k] += trans * alpha * c[k];
            }
            trans *= 1.0 - alpha;
        }
        (rgb, 1.0 - trans)
    }

    /// Premultiplied RGBA render with a `supersample × supersample` grid of
    /// rays per pixel.
    pub fn render(&self, camera: &Camera, supersample: u32) -> Image {
        let (w, h) = (camera.intrinsics.width as usize, camera.intrinsics.height as usize);
        let n = supersample.max(1);
        let norm = 1.0 / (n * n) as f64;
        let mut img = Image::new(w, h, 4);
        img.data.par_chunks_mut(w * 4).enumerate().for_each(|(row, line)| {
            for col in 0..w {
                let px = &mut line[col * 4..col * 4 + 4];
                for sy in 0..n {
                    for sx in 0..n {
                        let u = col as f64 + (sx as f64 + 0.5) / n as f64;
                        let v = row as f64 + (sy as f64 + 0.5) / n as f64;
                        let (rgb, a) = self.trace(&camera.ray_through(u, v));
                        for k in 0..3 {
                            px[k] += rgb[k] * norm;
                        }
                        px[3] += a * norm;
                    }
                }
            }
        });
        img
    }

    pub fn dataset(&self, split: Split) -> Result<ScaledDataset, DataError> {
        let views = self
            .spec
            .cameras(split)?
            .into_iter()
            .enumerate()
            .map(|(i, camera)| ViewRecord {
                name: format!("{}_{i:03}", split.file_stem()),
                image: self.render(&camera, self.spec.supersample),
                camera,
                scale: 1,
            })
            .collect();
        Ok(ScaledDataset { views, scene_radius: self.spec.scene_radius, split })
    }
}

/// Generate the full-resolution train and eval splits of `spec` plus its
/// analytic oracle.
pub fn toy_scene(spec: &ToySpec) -> Result<(ScaledDataset, ScaledDataset, ToyScene), DataError> {
    let scene = ToyScene::new(spec.clone())?;
    Ok((scene.dataset(Split::Train)?, scene.dataset(Split::Eval)?, scene))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(spec: ToySpec) -> ToySpec {
        ToySpec { train_views: 2, eval_views: 1, resolution: 16, ..spec }
    }

    #[test]
    fn empty_scene_is_background() {
        let (train, eval, _) = toy_scene(&small(ToySpec { primitives: vec![], ..ToySpec::default() })).unwrap();
        for v in train.views.iter().chain(&eval.views) {
            assert!(v.image.data.iter().all(|&x| x == 0.0));
            assert!(v.composited([1.0; 3]).data.iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn red_sphere_seen_from_above() {
        let spec = ToySpec {
            primitives: vec![Primitive::Sphere { center: [0.0; 3], radius: 0.5, color: [1.0, 0.0, 0.0], density: 1e4 }],
            ..small(ToySpec::default())
        };
        let scene = ToyScene::new(spec.clone()).unwrap();
        let cam = Camera::look_at(spec.intrinsics(), Vec3::new(0.0, 0.0, 4.0), Vec3::zeros(), Vec3::y()).unwrap();
        let img = scene.render(&cam, 2);
        let center = img.pixel(8, 8);
        assert!((center[0] - 1.0).abs() < 1e-9 && center[1] == 0.0 && (center[3] - 1.0).abs() < 1e-9);
        assert_eq!(img.pixel(0, 0), &[0.0; 4]);
    }

    #[test]
    fn exact_slab_opacity() {
        let spec = ToySpec {
            primitives: vec![Primitive::Box { center: [0.0; 3], half_extents: [0.5; 3], color: [0.2, 0.4, 0.6], density: 2.0 }],
            ..ToySpec::default()
        };
        let scene = ToyScene::new(spec).unwrap();
        let ray = Ray::new(Vec3::new(0.1, 0.2, -3.0), Vec3::new(0.0, 0.0, 2.0), 0.001).unwrap();
        let (rgb, a) = scene.trace(&ray);
        let expect = 1.0 - (-2.0f64).exp();
        assert!((a - expect).abs() < 1e-14);
        assert!((rgb[1] - 0.4 * expect).abs() < 1e-14);
    }

    #[test]
    fn stripes_alternate() {
        let p = Primitive::StripedBox {
            center: [0.0; 3],
            half_extents: [0.5; 3],
            colors: [[1.0; 3], [0.0; 3]],
            stripe_width: 0.25,
            axis: 0,
            density: 1.0,
        };
        let at = |x: f64| p.color_at(&Vec3::new(x, 0.0, 0.0))[0];
        assert_eq!([at(-0.4), at(-0.2), at(0.1), at(0.3)], [1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn primitives_outside_sphere_are_rejected() {
        let spec = ToySpec {
            primitives: vec![Primitive::Sphere { center: [1.2, 0.0, 0.0], radius: 0.5, color: [1.0; 3], density: 1.0 }],
            ..ToySpec::default()
        };
        assert!(matches!(toy_scene(&spec), Err(DataError::Toy(_))));
        let json = r#"{"primitives": [{"kind": "sphere", "center": [0,0,0], "radius": 0.3, "color": [1,1,1], "density": 1, "extra": 1}]}"#;
        assert!(serde_json::from_str::<ToySpec>(json).is_err());
    }

    #[test]
    fn cameras_see_the_sphere_and_are_seeded() {
        let spec = ToySpec::default();
        let a = spec.cameras(Split::Train).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, spec.cameras(Split::Train).unwrap());
        assert_ne!(a, ToySpec { seed: 1, ..spec.clone() }.cameras(Split::Train).unwrap());
        for cam in a.iter().chain(&spec.cameras(Split::Eval).unwrap()) {
            let ray = cam.ray_through(32.0, 32.0);
            let closest = ray.origin + ray.direction * (-ray.origin.dot(&ray.direction) / ray.direction.norm_squared());
            assert!(closest.norm() < 1e-9);
        }
    }
}
