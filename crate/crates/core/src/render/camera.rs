//! Pinhole cameras and per-pixel cone generation.
//!
//! Camera frame follows the computer-vision convention: +x right, +y down,
//! +z forward. Rays keep an unnormalized direction whose camera-frame z
//! component is 1, so the ray parameter `t` is depth along the optical axis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Ray, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive, got ({0}, {1})")]
    BadFocal(f64, f64),
    #[error("rotation is not orthonormal with det +1 (error {0:.3e})")]
    BadRotation(f64),
    #[error("scale {scale} does not divide image size {width}x{height}")]
    BadScale { scale: u32, width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    /// Camera-to-world rotation.
    pub rotation: Mat3,
    /// Camera center in world coordinates.
    pub translation: Vec3,
}

/// Deviation of `r` from a proper rotation, `max(|RᵀR - I|, |det R - 1|)`.
pub fn rotation_error(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    ortho.max((r.determinant() - 1.0).abs())
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, rotation: Mat3, translation: Vec3) -> Result<Self, CameraError> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(CameraError::BadFocal(intrinsics.fx, intrinsics.fy));
        }
        let err = rotation_error(&rotation);
        if !(err <= 1e-9) {
            return Err(CameraError::BadRotation(err));
        }
        Ok(Self { intrinsics, rotation, translation })
    }

    /// Camera at `eye` looking at `target` with world `up`.
    pub fn look_at(intrinsics: Intrinsics, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        Self::new(intrinsics, Mat3::from_columns(&[right, down, forward]), eye)
    }

    /// Intrinsics divided by `scale` (image downsampled by that factor).
    pub fn scaled(&self, scale: u32) -> Result<Self, CameraError> {
        let k = &self.intrinsics;
        if scale == 0 || !k.width.is_multiple_of(scale) || !k.height.is_multiple_of(scale) {
            return Err(CameraError::BadScale { scale, width: k.width, height: k.height });
        }
        let s = scale as f64;
        Ok(Self {
            intrinsics: Intrinsics {
                fx: k.fx / s,
                fy: k.fy / s,
                cx: k.cx / s,
                cy: k.cy / s,
                width: k.width / scale,
                height: k.height / scale,
            },
            ..*self
        })
    }

    /// Cone radius at unit depth: the pixel pitch on the `z = 1` plane
    /// scaled by `2/√12`, so the disc matches the pixel's variance.
    pub fn pixel_radius(&self) -> f64 {
        2.0 / 12f64.sqrt() / (self.intrinsics.fx * self.intrinsics.fy).sqrt()
    }

    /// Ray through continuous image coordinates `(u, v)` (pixel corners at
    /// integers).
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let k = &self.intrinsics;
        let local = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        Ray { origin: self.translation, direction: self.rotation * local, pixel_radius: self.pixel_radius() }
    }

    pub fn pixel_ray(&self, row: u32, col: u32) -> Ray {
        self.ray_through(col as f64 + 0.5, row as f64 + 0.5)
    }
}

/// Rays through the centers of `pixels` (row, col) at image scale `scale`
/// relative to `camera`.
pub fn generate_rays(camera: &Camera, pixels: &[(u32, u32)], scale: u32) -> Result<Vec<Ray>, CameraError> {
    let cam = camera.scaled(scale)?;
    Ok(pixels.iter().map(|&(r, c)| cam.pixel_ray(r, c)).collect())
}
