//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ripnerf_core::raster::Image;
use ripnerf_core::ripmap::{FeatureGrid, RipmapQuery};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Level `(i, j)` of a ripmap as explicit `2^i × 2^j` block means of the
/// base grid, row-major with channels innermost.
pub fn block_mean_level(base: &FeatureGrid, i: usize, j: usize) -> (usize, usize, Vec<f64>) {
    let (bx, by) = (1usize << i, 1usize << j);
    let (w, h, c) = (base.width() / bx, base.height() / by, base.channels());
    let mut out = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut s = 0.0;
                for yy in 0..by {
                    for xx in 0..bx {
                        s += base.cell(x * bx + xx, y * by + yy)[k];
                    }
                }
                out[(y * w + x) * c + k] = s / (bx * by) as f64;
            }
        }
    }
    (w, h, out)
}

fn levels(n: usize) -> usize {
    let mut l = 1;
    while (1 << (l - 1)) < n {
        l += 1;
    }
    l
}

/// Bracketing integer levels and the weight of the upper one.
fn level_pair(l: f64, count: usize) -> (usize, usize, f64) {
    if count == 1 {
        return (0, 0, 0.0);
    }
    let top = (count - 1) as f64;
    let l = if l.is_nan() { 0.0 } else { l.max(0.0).min(top) };
    let mut lo = l.floor() as usize;
    if lo == count - 1 {
        lo -= 1;
    }
    (lo, lo + 1, l - lo as f64)
}

/// Texel-centre linear interpolation weights along one axis of `size`
/// cells: `[(cell, weight); 2]`.
fn texel_pair(u: f64, size: usize) -> [(usize, f64); 2] {
    let x = u.max(0.0).min(1.0) * size as f64 - 0.5;
    let x = x.max(0.0).min((size - 1) as f64);
    let lo = x.floor() as usize;
    let hi = if lo + 1 < size { lo + 1 } else { lo };
    let f = x - lo as f64;
    [(lo, 1.0 - f), (hi, f)]
}

/// Query by enumerating the 16 vertices of the 4D cell around `q`,
/// sampling block-mean levels built from scratch. Returns the features
/// and the sum of vertex weights.
pub fn tetralinear_oracle(base: &FeatureGrid, q: &RipmapQuery) -> (Vec<f64>, f64) {
    let c = base.channels();
    let (lix, hix, fx) = level_pair(q.level[0], levels(base.width()));
    let (liy, hiy, fy) = level_pair(q.level[1], levels(base.height()));
    let mut out = vec![0.0; c];
    let mut total = 0.0;
    for (i, wi) in [(lix, 1.0 - fx), (hix, fx)] {
        for (j, wj) in [(liy, 1.0 - fy), (hiy, fy)] {
            let (w, h, level) = block_mean_level(base, i, j);
            for (x, wx) in texel_pair(q.pos[0], w) {
                for (y, wy) in texel_pair(q.pos[1], h) {
                    let wt = wi * wj * wx * wy;
                    total += wt;
                    for k in 0..c {
                        out[k] += wt * level[(y * w + x) * c + k];
                    }
                }
            }
        }
    }
    (out, total)
}

/// Empirical `(mean t, var t, per-axis radial variance)` of points drawn
/// uniformly from the cone `|x_perp| <= r t` between `t0` and `t1`, with a
/// unit axis.
pub fn mc_frustum_moments(t0: f64, t1: f64, r: f64, n: usize, seed: u64) -> [f64; 3] {
    let mut g = rng(seed);
    let (a, b) = (t0.powi(3), t1.powi(3));
    let (mut s1, mut s2, mut sr) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        // Cross-section area grows with t², so the CDF of t is cubic.
        let t = (a + g.random::<f64>() * (b - a)).cbrt();
        let rho = r * t * g.random::<f64>().sqrt();
        let phi = g.random::<f64>() * std::f64::consts::TAU;
        let x = rho * phi.cos();
        s1 += t;
        s2 += t * t;
        sr += x * x;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    [mean, s2 / nf - mean * mean, sr / nf]
}

/// Real spherical harmonics from associated Legendre polynomials
/// (Condon-Shortley phase), ordered by band then `m = -l..=l`.
pub fn sh_oracle(d: [f64; 3]) -> Vec<f64> {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let (x, y, z) = (d[0] / n, d[1] / n, d[2] / n);
    let theta = z.max(-1.0).min(1.0).acos();
    let phi = y.atan2(x);
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    let legendre = |l: u32, m: u32, t: f64| -> f64 {
        // P_m^m, then upward recurrence in l.
        let s = (1.0 - t * t).max(0.0).sqrt();
        let mut pmm = 1.0;
        for i in 0..m {
            pmm *= -((2 * i + 1) as f64) * s;
        }
        if l == m {
            return pmm;
        }
        let mut pm1 = t * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pm1;
        }
        let mut pl = 0.0;
        for ll in (m + 2)..=l {
            pl = ((2 * ll - 1) as f64 * t * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pm1;
            pm1 = pl;
        }
        pl
    };
    let mut out = Vec::new();
    for l in 0..4u32 {
        for m in -(l as i32)..=(l as i32) {
            let am = m.unsigned_abs();
            let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * fact(l - am) / fact(l + am)).sqrt();
            let p = legendre(l, am, theta.cos());
            let v = match m.cmp(&0) {
                std::cmp::Ordering::Equal => k * p,
                std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * p * (m as f64 * phi).cos(),
                std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).sin(),
            };
            out.push(v);
        }
    }
    out
}

/// SSIM with an explicit 2D Gaussian window evaluated at every valid
/// position, averaged over positions and then channels.
pub fn reference_ssim(a: &Image, b: &Image) -> f64 {
    const WIN: usize = 11;
    let sigma: f64 = 1.5;
    let mut kernel = [[0.0; WIN]; WIN];
    let mut norm = 0.0;
    for (dy, row) in kernel.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (u, w) = (dx as f64 - 5.0, dy as f64 - 5.0);
            *v = (-(u * u + w * w) / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let ch = a.channels;
    let mut per_channel = 0.0;
    for k in 0..ch {
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=a.height - WIN {
            for x0 in 0..=a.width - WIN {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let w = kernel[dy][dx] / norm;
                        let pa = a.pixel(y0 + dy, x0 + dx)[k];
                        let pb = b.pixel(y0 + dy, x0 + dx)[k];
                        ma += w * pa;
                        mb += w * pb;
                        saa += w * pa * pa;
                        sbb += w * pb * pb;
                        sab += w * pa * pb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        per_channel += total / count as f64;
    }
    per_channel / ch as f64
}

/// `(f(x0 + h) - f(x0 - h)) / 2h`.
pub fn central_diff(mut eval: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (eval(x0 + h) - eval(x0 - h)) / (2.0 * h)
}
