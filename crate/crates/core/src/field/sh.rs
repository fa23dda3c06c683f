//! Real spherical-harmonics direction encoding, bands 0..=3 (16 values).

use crate::geometry::Vec3;

pub const SH_DIM: usize = 16;

/// Evaluate the 16 real SH basis functions at `direction`, which is
/// normalized first. Returns `None` for a zero vector.
#[allow(clippy::excessive_precision)]
pub fn sh_encode(direction: &Vec3) -> Option<[f64; SH_DIM]> {
    let n = direction.norm();
    if !(n > 0.0) || !n.is_finite() {
        return None;
    }
    let (x, y, z) = (direction.x / n, direction.y / n, direction.z / n);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    Some([
        0.28209479177387814,
        -0.48860251190291987 * y,
        0.48860251190291987 * z,
        -0.48860251190291987 * x,
        1.0925484305920792 * xy,
        -1.0925484305920792 * yz,
        0.94617469575755997 * zz - 0.31539156525251999,
        -1.0925484305920792 * xz,
        0.54627421529603959 * (xx - yy),
        0.59004358992664352 * y * (-3.0 * xx + yy),
        2.8906114426405538 * xy * z,
        0.45704579946446572 * y * (1.0 - 5.0 * zz),
        0.3731763325901154 * z * (5.0 * zz - 3.0),
        0.45704579946446572 * x * (1.0 - 5.0 * zz),
        1.4453057213202769 * z * (xx - yy),
        0.59004358992664352 * x * (-xx + 3.0 * yy),
    ])
}
