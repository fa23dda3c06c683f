//! Optimization of a [`RadianceField`] against posed images.
//!
//! Each iteration samples a fixed number of training pixels uniformly over
//! every view and scale, traces them in fixed-size chunks (possibly in
//! parallel), reduces chunk gradients in chunk order and applies one AdamW
//! step. Results are therefore independent of the worker count.

pub mod checkpoint;
pub mod loss;
pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ScaledDataset, ViewRecord};
use crate::field::{FieldConfig, FieldError, FieldGrad, RadianceField};
use crate::geometry::{Gaussian3, Ray, Vec3};
use crate::metrics::{self, MetricError};
use crate::raster::Image;
use crate::render::{backward_rays, render_image, trace_rays, update_occupancy, Camera, OccupancyGrid, RenderConfig};
use crate::ripmap::Ripmap;
pub use checkpoint::{Checkpoint, CheckpointError, OccupancyState, RngState};
pub use loss::{area_weighted_loss, LossKind};
pub use optim::{adamw_step, scaled_milestones, scheduled_lr, AdamWConfig, Moments};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { iteration: u64, what: String },
    #[error("training set has no pixels")]
    EmptyDataset,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_rays: usize,
    /// When set, the ray count is rescaled after every step so that the
    /// number of marched samples approaches this target.
    pub target_samples: Option<usize>,
    pub lr_base: f64,
    pub lr_ripmap_multiplier: f64,
    pub weight_decay: f64,
    /// Defaults to [`scaled_milestones`] of `iterations`.
    pub lr_milestones: Option<Vec<u64>>,
    pub lr_gamma: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Weight of an extra squared opacity error against the target alpha.
    pub alpha_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_rays: 4096,
            target_samples: None,
            lr_base: 2e-3,
            lr_ripmap_multiplier: 10.0,
            weight_decay: 1e-5,
            lr_milestones: None,
            lr_gamma: 0.6,
            seed: 0,
            loss: LossKind::AreaWeightedL2,
            alpha_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn milestones(&self) -> Vec<u64> {
        self.lr_milestones.clone().unwrap_or_else(|| scaled_milestones(self.iterations))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_rays == 0 {
            return bad("batch_rays must be positive");
        }
        if !(self.lr_base > 0.0 && self.lr_ripmap_multiplier > 0.0 && self.lr_gamma > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and gamma must be positive, weight decay nonnegative");
        }
        if !(self.alpha_weight >= 0.0) {
            return bad("alpha_weight must be nonnegative");
        }
        if let Some(ms) = &self.lr_milestones {
            if ms.windows(2).any(|w| w[0] >= w[1]) || ms.iter().any(|&m| m >= self.iterations) {
                return bad("lr_milestones must be strictly increasing and below iterations");
            }
        }
        Ok(())
    }

    pub fn lr(&self, iteration: u64) -> f64 {
        scheduled_lr(self.lr_base, self.lr_gamma, &self.milestones(), iteration)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

struct TrainView {
    camera: Camera,
    scale: u32,
    rgb: Image,
    alpha: Vec<f64>,
}

/// Training targets: every view composited over the background.
pub struct TrainSet {
    views: Vec<TrainView>,
    /// `cumulative[v]` = pixels in views before `v`.
    cumulative: Vec<usize>,
}

impl TrainSet {
    pub fn new(dataset: &ScaledDataset, background: [f64; 3]) -> Self {
        let mut cumulative = Vec::with_capacity(dataset.views.len() + 1);
        cumulative.push(0);
        let views: Vec<TrainView> = dataset
            .views
            .iter()
            .map(|v: &ViewRecord| {
                cumulative.push(cumulative.last().expect("nonempty") + v.image.width * v.image.height);
                TrainView {
                    camera: v.camera,
                    scale: v.scale,
                    rgb: v.composited(background),
                    alpha: v.image.data.chunks_exact(4).map(|p| p[3]).collect(),
                }
            })
            .collect();
        Self { views, cumulative }
    }

    pub fn pixel_count(&self) -> usize {
        *self.cumulative.last().expect("nonempty")
    }

    fn locate(&self, index: usize) -> (usize, u32, u32) {
        let v = self.cumulative.partition_point(|&c| c <= index) - 1;
        let local = index - self.cumulative[v];
        let w = self.views[v].rgb.width;
        (v, (local / w) as u32, (local % w) as u32)
    }
}

/// Rays with their targets and loss weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub rays: Vec<Ray>,
    pub targets: Vec<[f64; 3]>,
    pub alphas: Vec<f64>,
    /// Per-ray footprint radius relative to a full-resolution pixel.
    pub ratios: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    /// Weighted batch loss (mean over rays).
    pub loss: f64,
    /// Unweighted per-channel mean squared error.
    pub mse: f64,
    pub samples: usize,
}

/// Batch loss and its gradient with respect to every field parameter.
///
/// Rays are processed in chunks of `render.chunk_rays`; chunk results are
/// summed in chunk order.
pub fn loss_and_grad(
    field: &RadianceField,
    grid: &OccupancyGrid,
    batch: &Batch,
    render: &RenderConfig,
    loss: LossKind,
    alpha_weight: f64,
) -> (LossEval, FieldGrad) {
    let n = batch.len().max(1) as f64;
    let chunk = render.chunk_rays.max(1);
    let starts: Vec<usize> = (0..batch.len()).step_by(chunk).collect();
    let parts: Vec<(f64, f64, usize, FieldGrad)> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + chunk).min(batch.len());
            let traced = trace_rays(field, grid, &batch.rays[s..e], render);
            let mut loss_sum = 0.0;
            let mut se_sum = 0.0;
            let mut d_color = Vec::with_capacity(e - s);
            let mut d_opacity = Vec::with_capacity(e - s);
            for (k, comp) in traced.composites.iter().enumerate() {
                let i = s + k;
                let w = loss.weight(batch.ratios[i]);
                let t = batch.targets[i];
                let se = loss::squared_error(comp.color, t);
                let da = comp.opacity - batch.alphas[i];
                loss_sum += w * se + alpha_weight * w * da * da;
                se_sum += se;
                d_color.push([0, 1, 2].map(|c| 2.0 * w * (comp.color[c] - t[c]) / n));
                d_opacity.push(2.0 * alpha_weight * w * da / n);
            }
            let mut grad = FieldGrad::zeros(field);
            backward_rays(field, &traced, &d_color, &d_opacity, render.background, &mut grad);
            (loss_sum, se_sum, traced.sample_count(), grad)
        })
        .collect();

    let mut total = FieldGrad::zeros(field);
    let (mut loss_sum, mut se_sum, mut samples) = (0.0, 0.0, 0);
    for (l, se, s, g) in parts {
        loss_sum += l;
        se_sum += se;
        samples += s;
        total.mlp.add_assign(&g.mlp);
        for (dst, src) in total.pyramids.iter_mut().zip(&g.pyramids) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
    (LossEval { loss: loss_sum / n, mse: se_sum / (3.0 * n), samples }, total)
}

/// Point density for occupancy updates: an isotropic Gaussian matching the
/// variance of a uniform cell of side `cell`.
pub fn point_density(field: &RadianceField, points: &[Vec3], cell: f64) -> Vec<f64> {
    let var = cell * cell / 12.0;
    let gs: Vec<Gaussian3> = points.iter().map(|p| Gaussian3::isotropic(*p, var)).collect();
    field.density_batch(&gs).to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub loss: f64,
    pub mse: f64,
    pub rays: usize,
    pub samples: usize,
    pub lr: f64,
}

impl StepStats {
    pub fn psnr(&self) -> f64 {
        metrics::psnr_from_mse(self.mse)
    }
}

/// Field, occupancy grid, optimizer state and RNG of one training run.
pub struct Trainer {
    pub train: TrainConfig,
    pub render: RenderConfig,
    field: RadianceField,
    grid: OccupancyGrid,
    moments: Vec<Moments>,
    iteration: u64,
    batch_rays: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Seeded initialization: the field is drawn from the same stream that
    /// later samples batches.
    pub fn new(field_config: FieldConfig, train: TrainConfig, render: RenderConfig) -> Result<Self, TrainError> {
        train.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let field = RadianceField::new(field_config, &mut rng)?;
        Ok(Self::assemble(field, train, render, rng))
    }

    fn assemble(field: RadianceField, train: TrainConfig, render: RenderConfig, rng: ChaCha8Rng) -> Self {
        let grid = OccupancyGrid::new(render.occupancy.resolution, field.config().scene_radius);
        let mut moments: Vec<Moments> = field.mlp().slices().iter().map(|s| Moments::zeros(s.len())).collect();
        moments.extend(field.ripmaps().iter().map(|r| Moments::zeros(r.base_len())));
        let batch_rays = train.batch_rays;
        Self { train, render, field, grid, moments, iteration: 0, batch_rays, rng }
    }

    pub fn field(&self) -> &RadianceField {
        &self.field
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn batch_rays(&self) -> usize {
        self.batch_rays
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    /// Draw `batch_rays` pixels uniformly over all views and scales.
    pub fn sample_batch(&mut self, set: &TrainSet) -> Result<Batch, TrainError> {
        let total = set.pixel_count();
        if total == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let mut b = Batch::default();
        for _ in 0..self.batch_rays {
            let (v, row, col) = set.locate(self.rng.random_range(0..total));
            let view = &set.views[v];
            let px = view.rgb.pixel(row as usize, col as usize);
            b.rays.push(view.camera.pixel_ray(row, col));
            b.targets.push([px[0], px[1], px[2]]);
            b.alphas.push(view.alpha[row as usize * view.rgb.width + col as usize]);
            b.ratios.push(view.scale as f64);
        }
        Ok(b)
    }

    /// Apply the occupancy schedule for the current iteration.
    pub fn update_occupancy(&mut self) -> bool {
        let field = &self.field;
        let cell = self.grid.cell_size();
        update_occupancy(&mut self.grid, |p| point_density(field, p, cell), self.iteration, &self.render.occupancy, &mut self.rng)
    }

    /// One full iteration: occupancy schedule, batch sampling, update.
    pub fn step(&mut self, set: &TrainSet) -> Result<StepStats, TrainError> {
        self.update_occupancy();
        let batch = self.sample_batch(set)?;
        self.step_batch(&batch)
    }

    /// One optimizer update on a given batch.
    pub fn step_batch(&mut self, batch: &Batch) -> Result<StepStats, TrainError> {
        let it = self.iteration;
        let (eval, grad) = loss_and_grad(&self.field, &self.grid, batch, &self.render, self.train.loss, self.train.alpha_weight);
        if !eval.loss.is_finite() {
            return Err(TrainError::NonFinite { iteration: it, what: "loss".into() });
        }
        if !grad.mlp.is_finite() {
            return Err(TrainError::NonFinite { iteration: it, what: "MLP gradient".into() });
        }
        let base_grads = grad.base_grads(&self.field);
        if let Some(p) = base_grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFinite { iteration: it, what: format!("ripmap gradient on plane {p}") });
        }

        let lr = self.train.lr(it);
        let lr_rip = lr * self.train.lr_ripmap_multiplier;
        let cfg = self.train.adamw();
        let step = it + 1;
        let n_mlp = self.field.mlp().slices().len();
        let (mlp_moments, rip_moments) = self.moments.split_at_mut(n_mlp);
        for ((p, g), m) in self.field.mlp_mut().slices_mut().into_iter().zip(grad.mlp.slices()).zip(mlp_moments) {
            adamw_step(p, g, m, lr, step, &cfg);
        }
        for ((rm, g), m) in self.field.ripmaps_mut().iter_mut().zip(&base_grads).zip(rip_moments) {
            adamw_step(rm.base_values_mut(), g, m, lr_rip, step, &cfg);
        }
        self.field.refresh();
        if !self.field.mlp().is_finite() || self.field.ripmaps().iter().any(|r| r.base().values().iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFinite { iteration: it, what: "parameters after update".into() });
        }

        if let Some(target) = self.train.target_samples {
            let per_ray = eval.samples as f64 / batch.len().max(1) as f64;
            let next = (target as f64 / per_ray.max(1.0)).round() as usize;
            self.batch_rays = next.clamp(64, 1 << 16);
        }
        self.iteration += 1;
        Ok(StepStats { iteration: it, loss: eval.loss, mse: eval.mse, rays: batch.len(), samples: eval.samples, lr })
    }

    /// Snapshot for [`Checkpoint::save`]. `config_json` must be a JSON
    /// object whose `field` key holds the field config; see
    /// [`Trainer::config_json`].
    pub fn checkpoint(&self, config_json: String) -> Checkpoint {
        Checkpoint {
            config_json,
            field_config: self.field.config().clone(),
            iteration: self.iteration,
            batch_rays: self.batch_rays as u64,
            ripmaps: self.field.ripmaps().iter().map(|r| r.base().clone()).collect(),
            mlp: self.field.mlp().clone(),
            moments: self.moments.clone(),
            occupancy: OccupancyState {
                resolution: self.grid.resolution() as u64,
                radius: self.grid.radius(),
                occupied: self.grid.occupied_flags().to_vec(),
                cache: self.grid.cache().to_vec(),
            },
            rng: RngState { seed: self.rng.get_seed(), stream: self.rng.get_stream(), word_pos: self.rng.get_word_pos() },
        }
    }

    /// The minimal config document accepted by [`Trainer::checkpoint`].
    pub fn config_json(&self) -> String {
        serde_json::json!({ "field": self.field.config(), "train": self.train, "render": self.render }).to_string()
    }

    /// Rebuild a trainer from a checkpoint with possibly different training
    /// and render settings (e.g. a longer budget).
    pub fn from_checkpoint(ck: &Checkpoint, train: TrainConfig, render: RenderConfig) -> Result<Self, TrainError> {
        train.validate()?;
        let cfg = ck.field_config.clone();
        let ripmaps = ck.ripmaps.iter().cloned().map(Ripmap::build).collect();
        let field = RadianceField::from_parts(cfg, ripmaps, ck.mlp.clone())?;
        let mut rng = ChaCha8Rng::from_seed(ck.rng.seed);
        rng.set_stream(ck.rng.stream);
        rng.set_word_pos(ck.rng.word_pos);
        let mut t = Self::assemble(field, train, render, rng);
        let corrupt = |msg: &str| TrainError::Checkpoint(CheckpointError::Corrupt { section: "occupancy".into(), msg: msg.into() });
        if ck.occupancy.resolution as usize != t.grid.resolution() || ck.occupancy.radius != t.grid.radius() {
            return Err(corrupt("grid does not match the render config"));
        }
        t.grid.set_state(ck.occupancy.occupied.clone(), ck.occupancy.cache.clone()).map_err(|e| corrupt(&e))?;
        if ck.moments.len() != t.moments.len() || ck.moments.iter().zip(&t.moments).any(|(a, b)| a.m.len() != b.m.len()) {
            return Err(TrainError::Checkpoint(CheckpointError::Corrupt { section: "moments".into(), msg: "shape mismatch".into() }));
        }
        t.moments = ck.moments.clone();
        t.iteration = ck.iteration;
        t.batch_rays = ck.batch_rays as usize;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    pub name: String,
    pub scale: u32,
    pub psnr: f64,
    pub ssim: Option<f64>,
}

/// Render every view and score its RGB against the target composited over
/// the background. SSIM is omitted for views smaller than its window.
pub fn evaluate_views(
    field: &RadianceField,
    grid: &OccupancyGrid,
    dataset: &ScaledDataset,
    render: &RenderConfig,
) -> Result<Vec<ViewMetric>, TrainError> {
    dataset
        .views
        .iter()
        .map(|v| {
            let pred = render_image(field, grid, &v.camera, render).take_channels(3);
            let target = v.composited(render.background);
            let ssim = match metrics::ssim(&pred, &target) {
                Ok(s) => Some(s),
                Err(MetricError::TooSmall(..)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(ViewMetric { name: v.name.clone(), scale: v.scale, psnr: metrics::psnr(&pred, &target)?, ssim })
        })
        .collect()
}
