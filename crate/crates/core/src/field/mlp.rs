//! The tiny two-branch MLP decoding features into density and color.
//!
//! Density branch: `feature -> width (ReLU) -> 1 + GEO_DIM`. The first output
//! goes through a truncated exponential, the rest form the geometric feature.
//! Color branch: `[geo, sh(dir)] -> width (ReLU) -> width (ReLU) -> 3`, then
//! a sigmoid. All batch operations work on row-major `N × dim` matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::sh::SH_DIM;

pub const GEO_DIM: usize = 15;
pub const COLOR_IN: usize = GEO_DIM + SH_DIM;

/// A dense layer `y = x W^T + b`, with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound));
        Self { weight, bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), self.outputs()));
        y += &self.bias;
        general_mat_mul(1.0, &x, &self.weight.t(), 1.0, &mut y);
        y
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense, want_dx: bool) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        want_dx.then(|| dy.dot(&self.weight))
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Layers in fixed order: density hidden, density out, color hidden 1,
/// color hidden 2, color out.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn glorot<R: Rng + ?Sized>(feature_dim: usize, width: usize, rng: &mut R) -> Self {
        Self {
            layers: vec![
                Dense::glorot(feature_dim, width, rng),
                Dense::glorot(width, 1 + GEO_DIM, rng),
                Dense::glorot(COLOR_IN, width, rng),
                Dense::glorot(width, width, rng),
                Dense::glorot(width, 3, rng),
            ],
        }
    }

    pub fn zeros(feature_dim: usize, width: usize) -> Self {
        Self {
            layers: vec![
                Dense::zeros(feature_dim, width),
                Dense::zeros(width, 1 + GEO_DIM),
                Dense::zeros(COLOR_IN, width),
                Dense::zeros(width, width),
                Dense::zeros(width, 3),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect() }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn width(&self) -> usize {
        self.layers[0].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Every parameter tensor as a flat slice, weights before biases, in
    /// layer order.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_slice_mut().expect("standard layout"), l.bias.as_slice_mut().expect("standard layout")])
            .collect()
    }

    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cached activations of a batch forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub features: Array2<f64>,
    pub h0: Array2<f64>,
    pub raw_density: Array1<f64>,
    pub color_in: Array2<f64>,
    pub h2: Array2<f64>,
    pub h3: Array2<f64>,
    pub density: Array1<f64>,
    pub color: Array2<f64>,
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Density-only pass; `features` is `N × feature_dim`.
pub fn density_batch(params: &MlpParams, features: ArrayView2<f64>, clamp: f64) -> Array1<f64> {
    let mut h0 = params.layers[0].forward(features);
    relu_inplace(&mut h0);
    let z1 = params.layers[1].forward(h0.view());
    z1.column(0).mapv(|v| v.clamp(-clamp, clamp).exp())
}

/// Full forward with cached activations. `sh` is `N × SH_DIM`.
pub fn forward_batch(params: &MlpParams, features: Array2<f64>, sh: ArrayView2<f64>, clamp: f64) -> MlpCache {
    let n = features.nrows();
    let mut h0 = params.layers[0].forward(features.view());
    relu_inplace(&mut h0);
    let z1 = params.layers[1].forward(h0.view());
    let raw_density = z1.column(0).to_owned();
    let density = raw_density.mapv(|v| v.clamp(-clamp, clamp).exp());
    let mut color_in = Array2::zeros((n, COLOR_IN));
    color_in.slice_mut(s![.., ..GEO_DIM]).assign(&z1.slice(s![.., 1..]));
    color_in.slice_mut(s![.., GEO_DIM..]).assign(&sh);
    let mut h2 = params.layers[2].forward(color_in.view());
    relu_inplace(&mut h2);
    let mut h3 = params.layers[3].forward(h2.view());
    relu_inplace(&mut h3);
    let color = params.layers[4].forward(h3.view()).mapv(sigmoid);
    MlpCache { features, h0, raw_density, color_in, h2, h3, density, color }
}

fn relu_mask(dy: &mut Array2<f64>, act: &Array2<f64>) {
    dy.zip_mut_with(act, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

/// Reverse pass. Accumulates into `grad` and returns `dL/dfeatures`.
pub fn backward_batch(
    params: &MlpParams,
    cache: &MlpCache,
    d_density: &Array1<f64>,
    d_color: &Array2<f64>,
    clamp: f64,
    grad: &mut MlpParams,
) -> Array2<f64> {
    let n = cache.features.nrows();
    let dz4 = d_color * &cache.color.mapv(|c| c * (1.0 - c));
    let [g0, g1, g2, g3, g4] = grad.layers.as_mut_slice() else { unreachable!("five layers") };
    let mut dh3 = params.layers[4].backward(cache.h3.view(), dz4.view(), g4, true).unwrap();
    relu_mask(&mut dh3, &cache.h3);
    let mut dh2 = params.layers[3].backward(cache.h2.view(), dh3.view(), g3, true).unwrap();
    relu_mask(&mut dh2, &cache.h2);
    let dx2 = params.layers[2].backward(cache.color_in.view(), dh2.view(), g2, true).unwrap();

    let mut dz1 = Array2::zeros((n, 1 + GEO_DIM));
    for r in 0..n {
        let raw = cache.raw_density[r];
        // The clamp is flat outside (-clamp, clamp).
        dz1[[r, 0]] = if raw > -clamp && raw < clamp { d_density[r] * cache.density[r] } else { 0.0 };
    }
    dz1.slice_mut(s![.., 1..]).assign(&dx2.slice(s![.., ..GEO_DIM]));
    let mut dh0 = params.layers[1].backward(cache.h0.view(), dz1.view(), g1, true).unwrap();
    relu_mask(&mut dh0, &cache.h0);
    params.layers[0].backward(cache.features.view(), dh0.view(), g0, true).unwrap()
}
