//! Cone casting, conical-frustum Gaussians and Platonic-solid plane sets.
//!
//! A pixel's cone is cut into frustums along the ray; each frustum is
//! approximated by a 3D Gaussian whose moments match the frustum's. Those
//! Gaussians are then projected orthogonally onto the unparalleled face planes
//! of a Platonic solid, where a 2D encoding can area-sample them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("ray direction must have positive norm")]
    ZeroDirection,
    #[error("pixel radius must be positive and finite, got {0}")]
    BadPixelRadius(f64),
    #[error("invalid frustum interval [{t_near}, {t_far}]: need 0 < t_near < t_far")]
    BadInterval { t_near: f64, t_far: f64 },
    #[error("unknown Platonic solid `{0}`")]
    UnknownSolid(String),
}

/// A cone around a ray. `pixel_radius` is the cone radius at `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel_radius: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, pixel_radius: f64) -> Result<Self, GeometryError> {
        if !(direction.norm() > 0.0) {
            return Err(GeometryError::ZeroDirection);
        }
        if !(pixel_radius > 0.0 && pixel_radius.is_finite()) {
            return Err(GeometryError::BadPixelRadius(pixel_radius));
        }
        Ok(Self { origin, direction, pixel_radius })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// The slab `[t_near, t_far]` of a cone, in ray-parameter units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumInterval {
    pub t_near: f64,
    pub t_far: f64,
}

impl FrustumInterval {
    pub fn new(t_near: f64, t_far: f64) -> Result<Self, GeometryError> {
        // The moment formulas degenerate to 0/0 when the slab has no thickness.
        let ok = t_near > 0.0 && t_far > t_near && (t_far - t_near) > 1e-8 * t_near && t_far.is_finite();
        if ok {
            Ok(Self { t_near, t_far })
        } else {
            Err(GeometryError::BadInterval { t_near, t_far })
        }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.t_near + self.t_far)
    }

    pub fn width(&self) -> f64 {
        self.t_far - self.t_near
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3 {
    pub mean: Vec3,
    pub cov: Mat3,
}

impl Gaussian3 {
    pub fn isotropic(mean: Vec3, variance: f64) -> Self {
        Self { mean, cov: Mat3::identity() * variance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl Gaussian2 {
    /// Per-axis standard deviations, `sqrt(diag(cov))`.
    pub fn std_devs(&self) -> [f64; 2] {
        [self.cov[(0, 0)].max(0.0).sqrt(), self.cov[(1, 1)].max(0.0).sqrt()]
    }
}

/// Moments of a conical frustum in its local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumMoments {
    /// Mean ray parameter.
    pub mean_t: f64,
    /// Variance along the ray, in ray-parameter units squared.
    pub var_t: f64,
    /// Variance perpendicular to the ray, per axis, in world units squared.
    pub var_r: f64,
}

/// Mean and variances of a uniformly filled conical frustum.
///
/// Evaluated in the midpoint/half-width form, which equals the closed-form
/// power-difference ratios algebraically but does not cancel catastrophically
/// for thin slabs far from the apex.
pub fn frustum_moments(interval: &FrustumInterval, pixel_radius: f64) -> FrustumMoments {
    let mid = interval.mid();
    let half = 0.5 * interval.width();
    let mid2 = mid * mid;
    let half2 = half * half;
    let denom = 3.0 * mid2 + half2;
    let mean_t = mid + 2.0 * mid * half2 / denom;
    let var_t = half2 / 3.0 - (4.0 / 15.0) * (half2 * half2 * (12.0 * mid2 - half2)) / (denom * denom);
    let var_r = pixel_radius * pixel_radius * (mid2 / 4.0 + (5.0 / 12.0) * half2 - (4.0 / 15.0) * half2 * half2 / denom);
    FrustumMoments { mean_t, var_t, var_r }
}

/// Gaussian approximation of the conical frustum `interval` cut from `ray`.
pub fn cone_cast_gaussian(ray: &Ray, interval: &FrustumInterval) -> Gaussian3 {
    let m = frustum_moments(interval, ray.pixel_radius);
    let d = ray.direction;
    let ddt = d * d.transpose();
    let perp = Mat3::identity() - ddt / d.norm_squared();
    let mut cov = ddt * m.var_t + perp * m.var_r;
    // Symmetrize against round-off so downstream invariants hold exactly.
    cov = (cov + cov.transpose()) * 0.5;
    Gaussian3 { mean: ray.origin + d * m.mean_t, cov }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatonicSolid {
    Tetrahedron,
    Cube,
    Octahedron,
    Dodecahedron,
    Icosahedron,
}

impl PlatonicSolid {
    pub const ALL: [PlatonicSolid; 5] = [
        PlatonicSolid::Tetrahedron,
        PlatonicSolid::Cube,
        PlatonicSolid::Octahedron,
        PlatonicSolid::Dodecahedron,
        PlatonicSolid::Icosahedron,
    ];

    /// Number of pairwise non-parallel face planes.
    pub fn plane_count(self) -> usize {
        match self {
            PlatonicSolid::Tetrahedron => 4,
            PlatonicSolid::Cube => 3,
            PlatonicSolid::Octahedron => 4,
            PlatonicSolid::Dodecahedron => 6,
            PlatonicSolid::Icosahedron => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlatonicSolid::Tetrahedron => "tetrahedron",
            PlatonicSolid::Cube => "cube",
            PlatonicSolid::Octahedron => "octahedron",
            PlatonicSolid::Dodecahedron => "dodecahedron",
            PlatonicSolid::Icosahedron => "icosahedron",
        }
    }
}

impl fmt::Display for PlatonicSolid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlatonicSolid {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tetrahedron" | "ps4t" => Ok(PlatonicSolid::Tetrahedron),
            "cube" | "hexahedron" | "ps3" => Ok(PlatonicSolid::Cube),
            "octahedron" | "ps4" => Ok(PlatonicSolid::Octahedron),
            "dodecahedron" | "ps6" => Ok(PlatonicSolid::Dodecahedron),
            "icosahedron" | "ps10" => Ok(PlatonicSolid::Icosahedron),
            _ => Err(GeometryError::UnknownSolid(s.to_string())),
        }
    }
}

/// A projection plane: unit normal plus the in-plane axes used to lay out
/// its feature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneBasis {
    pub normal: Vec3,
    pub axis_x: Vec3,
    pub axis_y: Vec3,
}

impl PlaneBasis {
    pub fn from_normal(normal: Vec3) -> Self {
        let normal = normal.normalize();
        let (axis_x, axis_y) = plane_axes(&normal);
        Self { normal, axis_x, axis_y }
    }

    /// The 3×2 matrix with columns `(axis_x, axis_y)`.
    pub fn projection(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[self.axis_x, self.axis_y])
    }

    /// `det[x y n]`; ±1 for an orthonormal frame.
    pub fn handedness(&self) -> f64 {
        Mat3::from_columns(&[self.axis_x, self.axis_y, self.normal]).determinant()
    }
}

/// In-plane axes for a plane with unit normal `normal`.
///
/// `x = Z × n` (normalized) and `y = x × n`, except on the poles: `n = Z`
/// maps to `(X, Y)` and `n = -Z` to `(X, -Y)`.
pub fn plane_axes(normal: &Vec3) -> (Vec3, Vec3) {
    let z = Vec3::z();
    let cross = z.cross(normal);
    if cross.norm() < 1e-9 {
        return if normal.z > 0.0 {
            (Vec3::x(), Vec3::y())
        } else {
            (Vec3::x(), -Vec3::y())
        };
    }
    let x = cross.normalize();
    let y = x.cross(normal);
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSet {
    pub solid: PlatonicSolid,
    pub planes: Vec<PlaneBasis>,
}

impl PlaneSet {
    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
}

/// One normal per antipodal pair, flipped so the last nonzero component is
/// positive.
fn canonical_half(normals: impl IntoIterator<Item = Vec3>) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = Vec::new();
    for n in normals {
        let n = n.normalize();
        let last = if n.z.abs() > 1e-12 {
            n.z
        } else if n.y.abs() > 1e-12 {
            n.y
        } else {
            n.x
        };
        let n = if last < 0.0 { -n } else { n };
        if !out.iter().any(|m| (m - n).norm() < 1e-9) {
            out.push(n);
        }
    }
    out
}

fn face_normals(solid: PlatonicSolid) -> Vec<Vec3> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let inv = 1.0 / phi;
    match solid {
        PlatonicSolid::Cube => vec![Vec3::x(), Vec3::y(), Vec3::z()],
        // Outward normals of the tetrahedron with vertices
        // (1,1,1), (1,-1,-1), (-1,1,-1), (-1,-1,1): each face is opposite a
        // vertex, so its normal is the negated vertex. No antipodal pairs.
        PlatonicSolid::Tetrahedron => [
            Vec3::new(-1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, 1.0),
            Vec3::new(1.0, 1.0, -1.0),
        ]
        .iter()
        .map(|v| v.normalize())
        .collect(),
        PlatonicSolid::Octahedron => {
            let mut v = Vec::new();
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    for sz in [1.0, -1.0] {
                        v.push(Vec3::new(sx, sy, sz));
                    }
                }
            }
            canonical_half(v)
        }
        // Dodecahedron face normals point at the vertices of the dual
        // icosahedron: cyclic permutations of (0, ±1, ±φ).
        PlatonicSolid::Dodecahedron => {
            let mut v = Vec::new();
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    v.push(Vec3::new(0.0, s1, s2 * phi));
                    v.push(Vec3::new(s1, s2 * phi, 0.0));
                    v.push(Vec3::new(s2 * phi, 0.0, s1));
                }
            }
            canonical_half(v)
        }
        // Icosahedron face normals point at the vertices of the dual
        // dodecahedron: (±1, ±1, ±1) and cyclic permutations of (0, ±1/φ, ±φ).
        PlatonicSolid::Icosahedron => {
            let mut v = Vec::new();
            for sx in [1.0, -1.0] {
                for sy in [1.0, -1.0] {
                    v.push(Vec3::new(sx, sy, 1.0));
                    v.push(Vec3::new(sx, sy, -1.0));
                    v.push(Vec3::new(0.0, sx * inv, sy * phi));
                    v.push(Vec3::new(sx * inv, sy * phi, 0.0));
                    v.push(Vec3::new(sx * phi, 0.0, sy * inv));
                }
            }
            canonical_half(v)
        }
    }
}

/// The unparalleled face planes of `solid` in its canonical orientation.
pub fn platonic_plane_set(solid: PlatonicSolid) -> PlaneSet {
    let planes: Vec<PlaneBasis> = face_normals(solid).into_iter().map(PlaneBasis::from_normal).collect();
    debug_assert_eq!(planes.len(), solid.plane_count());
    PlaneSet { solid, planes }
}

/// Orthogonal projection of a 3D Gaussian into plane coordinates.
pub fn project_gaussian(g: &Gaussian3, plane: &PlaneBasis) -> Gaussian2 {
    let m = plane.projection();
    let mt = m.transpose();
    let cov = mt * g.cov * m;
    let cov = (cov + cov.transpose()) * 0.5;
    Gaussian2 { mean: mt * g.mean, cov }
}
