//! The radiance field: Platonic-solid projection, per-plane ripmap queries,
//! and the tiny MLP decoder, with a batched reverse pass.

pub mod mlp;
pub mod sh;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{platonic_plane_set, project_gaussian, Gaussian3, PlaneSet, PlatonicSolid, Vec3};
use crate::ripmap::{derive_isotropic_query, derive_query, FeatureGrid, LevelParams, Ripmap, RipmapError, RipmapQuery, Stencil};
use mlp::MlpParams;
pub use mlp::{MlpCache, GEO_DIM};
pub use sh::{sh_encode, SH_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error(transparent)]
    Ripmap(#[from] RipmapError),
    #[error("unsupported SH degree {0}; only 4 (16 coefficients) is implemented")]
    ShDegree(u32),
    #[error("invalid field config: {0}")]
    Config(String),
    #[error("feature has {actual} entries, expected {expected}")]
    FeatureDim { expected: usize, actual: usize },
    #[error("direction must be a nonzero finite vector")]
    ZeroDirection,
}

/// How a projected footprint selects pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    /// Independent level per axis (anisotropic).
    Ripmap,
    /// One level from the mean variance on both axes; the ablation without
    /// ripmap encoding.
    IsotropicMipmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub solid: PlatonicSolid,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    pub mlp_width: usize,
    pub sh_degree: u32,
    pub density_clamp: f64,
    pub mass_factor: f64,
    pub scene_radius: f64,
    /// Added to `log2(w σ / r)` before clamping; 0 uses the level formula
    /// verbatim.
    pub level_offset: f64,
    pub encoding_mode: EncodingMode,
    /// Half-width of the uniform ripmap initialization.
    pub grid_init: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            solid: PlatonicSolid::Icosahedron,
            grid_h: 64,
            grid_w: 64,
            channels: 8,
            mlp_width: 128,
            sh_degree: 4,
            density_clamp: 15.0,
            mass_factor: 2.0,
            scene_radius: 1.5,
            level_offset: 0.0,
            encoding_mode: EncodingMode::Ripmap,
            grid_init: 0.01,
        }
    }
}

impl FieldConfig {
    pub fn feature_dim(&self) -> usize {
        self.channels * self.solid.plane_count()
    }

    pub fn level_params(&self) -> LevelParams {
        LevelParams { scene_radius: self.scene_radius, mass_factor: self.mass_factor, level_offset: self.level_offset }
    }

    pub fn levels(&self) -> (usize, usize) {
        (self.grid_w.trailing_zeros() as usize + 1, self.grid_h.trailing_zeros() as usize + 1)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.sh_degree != 4 {
            return Err(FieldError::ShDegree(self.sh_degree));
        }
        FeatureGrid::zeros(self.grid_h, self.grid_w, self.channels)?;
        let positive = [self.density_clamp, self.mass_factor, self.scene_radius];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || self.mlp_width == 0 || !self.level_offset.is_finite() {
            return Err(FieldError::Config("density_clamp, mass_factor, scene_radius and mlp_width must be positive".into()));
        }
        if !(self.grid_init >= 0.0 && self.grid_init.is_finite()) {
            return Err(FieldError::Config("grid_init must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-plane ripmap queries for a Gaussian.
pub fn plane_queries(g: &Gaussian3, planes: &PlaneSet, cfg: &FieldConfig) -> Vec<RipmapQuery> {
    let params = cfg.level_params();
    let (lx, ly) = cfg.levels();
    planes
        .planes
        .iter()
        .map(|p| {
            let g2 = project_gaussian(g, p);
            match cfg.encoding_mode {
                EncodingMode::Ripmap => derive_query(&g2, &params, lx, ly),
                EncodingMode::IsotropicMipmap => derive_isotropic_query(&g2, &params, lx, ly),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub color: [f64; 3],
    pub geo_feature: [f64; GEO_DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceField {
    config: FieldConfig,
    planes: PlaneSet,
    ripmaps: Vec<Ripmap>,
    mlp: MlpParams,
}

/// Gradients for every learnable parameter. Ripmap gradients are kept
/// pyramid-shaped until [`FieldGrad::base_grads`] pushes them through the
/// pooling chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub mlp: MlpParams,
    pub pyramids: Vec<Vec<f64>>,
}

impl FieldGrad {
    pub fn zeros(field: &RadianceField) -> Self {
        Self { mlp: field.mlp.zeros_like(), pyramids: field.ripmaps.iter().map(|r| vec![0.0; r.pyramid_len()]).collect() }
    }

    pub fn clear(&mut self) {
        for s in self.mlp.slices_mut() {
            s.fill(0.0);
        }
        for p in &mut self.pyramids {
            p.fill(0.0);
        }
    }

    /// Gradient with respect to each plane's base grid.
    pub fn base_grads(&self, field: &RadianceField) -> Vec<Vec<f64>> {
        self.pyramids
            .iter()
            .zip(&field.ripmaps)
            .map(|(p, rm)| {
                let mut g = p.clone();
                rm.reduce_pyramid_grad(&mut g);
                g.truncate(rm.base_len());
                g
            })
            .collect()
    }
}

/// Cached state of a batched forward pass.
#[derive(Debug, Clone)]
pub struct FieldForward {
    /// `N × planes` stencils, sample-major.
    pub stencils: Vec<Stencil>,
    pub mlp: MlpCache,
}

impl FieldForward {
    pub fn len(&self) -> usize {
        self.mlp.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> FieldSample {
        let mut geo = [0.0; GEO_DIM];
        for (k, g) in geo.iter_mut().enumerate() {
            *g = self.mlp.color_in[[i, k]];
        }
        FieldSample {
            density: self.mlp.density[i],
            color: [self.mlp.color[[i, 0]], self.mlp.color[[i, 1]], self.mlp.color[[i, 2]]],
            geo_feature: geo,
        }
    }
}

impl RadianceField {
    /// Fresh field: ripmaps uniform in `±grid_init`, Glorot MLP.
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Result<Self, FieldError> {
        config.validate()?;
        let planes = platonic_plane_set(config.solid);
        let ripmaps = (0..planes.len())
            .map(|_| FeatureGrid::uniform(config.grid_h, config.grid_w, config.channels, config.grid_init, rng).map(Ripmap::build))
            .collect::<Result<Vec<_>, _>>()?;
        let mlp = MlpParams::glorot(config.feature_dim(), config.mlp_width, rng);
        Ok(Self { config, planes, ripmaps, mlp })
    }

    pub fn from_parts(config: FieldConfig, ripmaps: Vec<Ripmap>, mlp: MlpParams) -> Result<Self, FieldError> {
        config.validate()?;
        let planes = platonic_plane_set(config.solid);
        if ripmaps.len() != planes.len() {
            return Err(FieldError::Config(format!("{} ripmaps for {} planes", ripmaps.len(), planes.len())));
        }
        for rm in &ripmaps {
            let b = rm.base();
            if (b.height(), b.width(), b.channels()) != (config.grid_h, config.grid_w, config.channels) {
                return Err(FieldError::Config("ripmap shape does not match config".into()));
            }
        }
        if mlp.feature_dim() != config.feature_dim() || mlp.width() != config.mlp_width {
            return Err(FieldError::Config("MLP shape does not match config".into()));
        }
        Ok(Self { config, planes, ripmaps, mlp })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn planes(&self) -> &PlaneSet {
        &self.planes
    }

    pub fn ripmaps(&self) -> &[Ripmap] {
        &self.ripmaps
    }

    pub fn ripmaps_mut(&mut self) -> &mut [Ripmap] {
        &mut self.ripmaps
    }

    pub fn mlp(&self) -> &MlpParams {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpParams {
        &mut self.mlp
    }

    /// Rebuild any stale pyramids.
    pub fn refresh(&mut self) {
        for rm in &mut self.ripmaps {
            rm.refresh();
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp.param_count() + self.ripmaps.iter().map(Ripmap::base_len).sum::<usize>()
    }

    /// Concatenated per-plane features of `g` written to `out`; returns the
    /// stencils used, one per plane.
    pub fn featurize_into(&self, g: &Gaussian3, out: &mut [f64], stencils: &mut Vec<Stencil>) {
        let c = self.config.channels;
        for ((q, rm), chunk) in plane_queries(g, &self.planes, &self.config).iter().zip(&self.ripmaps).zip(out.chunks_exact_mut(c)) {
            stencils.push(rm.query_into(q, chunk));
        }
    }

    pub fn featurize(&self, g: &Gaussian3) -> Vec<f64> {
        let mut out = vec![0.0; self.config.feature_dim()];
        let mut st = Vec::with_capacity(self.planes.len());
        self.featurize_into(g, &mut out, &mut st);
        out
    }

    pub fn featurize_batch(&self, gaussians: &[Gaussian3]) -> (Array2<f64>, Vec<Stencil>) {
        let f = self.config.feature_dim();
        let mut features = Array2::zeros((gaussians.len(), f));
        let mut stencils = Vec::with_capacity(gaussians.len() * self.planes.len());
        for (g, mut row) in gaussians.iter().zip(features.rows_mut()) {
            self.featurize_into(g, row.as_slice_mut().expect("contiguous row"), &mut stencils);
        }
        (features, stencils)
    }

    pub fn density_batch(&self, gaussians: &[Gaussian3]) -> Array1<f64> {
        if gaussians.is_empty() {
            return Array1::zeros(0);
        }
        let (features, _) = self.featurize_batch(gaussians);
        mlp::density_batch(&self.mlp, features.view(), self.config.density_clamp)
    }

    /// Forward pass over samples whose SH-encoded view directions are the
    /// rows of `sh`.
    pub fn forward_batch(&self, gaussians: &[Gaussian3], sh: ArrayView2<f64>) -> FieldForward {
        let (features, stencils) = self.featurize_batch(gaussians);
        FieldForward { stencils, mlp: mlp::forward_batch(&self.mlp, features, sh, self.config.density_clamp) }
    }

    pub fn density_from_features(&self, features: ArrayView2<f64>) -> Array1<f64> {
        if features.nrows() == 0 {
            return Array1::zeros(0);
        }
        mlp::density_batch(&self.mlp, features, self.config.density_clamp)
    }

    /// Forward pass from already computed features and their stencils.
    pub fn forward_from_features(&self, features: Array2<f64>, stencils: Vec<Stencil>, sh: ArrayView2<f64>) -> FieldForward {
        FieldForward { stencils, mlp: mlp::forward_batch(&self.mlp, features, sh, self.config.density_clamp) }
    }

    /// Decode a feature vector into a sample.
    pub fn decode(&self, feature: &[f64], direction: &Vec3) -> Result<FieldSample, FieldError> {
        let f = self.config.feature_dim();
        if feature.len() != f {
            return Err(FieldError::FeatureDim { expected: f, actual: feature.len() });
        }
        let sh = sh_encode(direction).ok_or(FieldError::ZeroDirection)?;
        let features = Array2::from_shape_vec((1, f), feature.to_vec()).expect("shape");
        let sh = Array2::from_shape_vec((1, SH_DIM), sh.to_vec()).expect("shape");
        let cache = mlp::forward_batch(&self.mlp, features, sh.view(), self.config.density_clamp);
        Ok(FieldForward { stencils: Vec::new(), mlp: cache }.sample(0))
    }

    /// Reverse pass for a recorded forward: accumulates into `grad`.
    pub fn backward_batch(&self, fwd: &FieldForward, d_density: &Array1<f64>, d_color: &Array2<f64>, grad: &mut FieldGrad) {
        if fwd.is_empty() {
            return;
        }
        let d_feat = mlp::backward_batch(&self.mlp, &fwd.mlp, d_density, d_color, self.config.density_clamp, &mut grad.mlp);
        self.scatter_feature_grads(&fwd.stencils, d_feat.view(), grad);
    }

    /// Like [`Self::backward_batch`] but also returns `dL/dfeature`.
    pub fn backward_with_features(&self, fwd: &FieldForward, d_density: &Array1<f64>, d_color: &Array2<f64>, grad: &mut FieldGrad) -> Array2<f64> {
        let d_feat = mlp::backward_batch(&self.mlp, &fwd.mlp, d_density, d_color, self.config.density_clamp, &mut grad.mlp);
        self.scatter_feature_grads(&fwd.stencils, d_feat.view(), grad);
        d_feat
    }

    fn scatter_feature_grads(&self, stencils: &[Stencil], d_feat: ArrayView2<f64>, grad: &mut FieldGrad) {
        let c = self.config.channels;
        let p = self.planes.len();
        for (row, d) in d_feat.rows().into_iter().enumerate() {
            let d = d.as_slice().expect("contiguous row");
            for plane in 0..p {
                self.ripmaps[plane].scatter(&stencils[row * p + plane], &d[plane * c..(plane + 1) * c], &mut grad.pyramids[plane]);
            }
        }
    }
}
