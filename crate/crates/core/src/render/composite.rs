//! Volume-rendering composition along a ray and its exact reverse pass.

/// Forward result for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub opacity: f64,
    /// Per-sample weights `T_k α_k`, over the samples actually used.
    pub weights: Vec<f64>,
    /// Transmittance before each used sample, `T_k`.
    pub transmittance: Vec<f64>,
    /// Transmittance left after the last used sample.
    pub t_final: f64,
}

impl Composite {
    pub fn used(&self) -> usize {
        self.weights.len()
    }
}

/// Number of leading samples that contribute before transmittance drops
/// below `early_stop` (all of them when `early_stop` is 0).
pub fn retained_count(density: &[f64], delta: &[f64], early_stop: f64) -> usize {
    let mut t = 1.0;
    for (k, (&tau, &d)) in density.iter().zip(delta).enumerate() {
        let alpha = -(-tau * d).exp_m1();
        t -= t * alpha;
        if t < early_stop {
            return k + 1;
        }
    }
    density.len()
}

/// `α_k = 1 - exp(-τ_k δ_k)`, `T_k = Π_{j<k} (1 - α_j)`,
/// `color = Σ T_k α_k c_k + T_final · background`.
///
/// Samples after the transmittance falls below `early_stop` are ignored.
pub fn composite(density: &[f64], delta: &[f64], color: &[[f64; 3]], background: [f64; 3], early_stop: f64) -> Composite {
    let n = density.len().min(delta.len()).min(color.len());
    let mut out = [0.0; 3];
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut t = 1.0;
    for k in 0..n {
        let alpha = -(-density[k] * delta[k]).exp_m1();
        let w = t * alpha;
        transmittance.push(t);
        weights.push(w);
        for c in 0..3 {
            out[c] += w * color[k][c];
        }
        t -= w;
        if t < early_stop {
            break;
        }
    }
    for c in 0..3 {
        out[c] += t * background[c];
    }
    Composite { color: out, opacity: 1.0 - t, weights, transmittance, t_final: t }
}

/// Gradients of a scalar loss with respect to each used sample's density and
/// color, given `d_color = dL/dcolor` and `d_opacity = dL/dopacity`.
pub fn composite_backward(
    fwd: &Composite,
    delta: &[f64],
    color: &[[f64; 3]],
    background: [f64; 3],
    d_color: [f64; 3],
    d_opacity: f64,
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = fwd.used();
    let mut d_density = vec![0.0; n];
    let mut d_sample_color = vec![[0.0; 3]; n];
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    // Suffix S_k = Σ_{j>k} w_j c_j + T_final · background, projected on d_color.
    let mut suffix = fwd.t_final * dot(&d_color, &background);
    for k in (0..n).rev() {
        let w = fwd.weights[k];
        let t_next = fwd.transmittance[k] - w;
        let ck = dot(&d_color, &color[k]);
        d_density[k] = delta[k] * (t_next * ck - suffix + d_opacity * fwd.t_final);
        for c in 0..3 {
            d_sample_color[k][c] = d_color[c] * w;
        }
        suffix += w * ck;
    }
    (d_density, d_sample_color)
}
