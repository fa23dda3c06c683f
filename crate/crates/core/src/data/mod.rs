//! Multi-view datasets: Blender-convention IO, multi-scale pyramids and
//! procedurally generated toy scenes.

pub mod blender;
pub mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Image, RasterError};
use crate::render::{Camera, CameraError};

pub use blender::{load_blender, write_blender};
pub use toy::{toy_scene, Primitive, ToyScene, ToySpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed transforms file {path}: {msg}")]
    Transforms { path: String, msg: String },
    #[error("missing frame image {0}")]
    MissingFrame(String),
    #[error("frame {frame}: pose is not invertible")]
    NonInvertiblePose { frame: String },
    #[error("frame {frame}: pose is not a rigid transform (rotation error {error:.3e})")]
    NonRigidPose { frame: String, error: f64 },
    #[error("frame {frame}: resolution {got:?} does not match {expected:?} at scale {scale}")]
    Resolution { frame: String, got: (usize, usize), expected: (usize, usize), scale: u32 },
    #[error("downsampling factor {factor} does not divide {width}x{height}")]
    BadFactor { factor: u32, width: u32, height: u32 },
    #[error("invalid toy scene: {0}")]
    Toy(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    /// Stem used in `transforms_{stem}.json`.
    pub fn file_stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "test",
        }
    }
}

/// One calibrated image. `image` is RGBA with color premultiplied by alpha,
/// so box filtering and compositing commute.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
    pub scale: u32,
}

impl ViewRecord {
    /// Color composited over `background`.
    pub fn composited(&self, background: [f64; 3]) -> Image {
        let mut out = Image::new(self.image.width, self.image.height, 3);
        for (dst, src) in out.data.chunks_exact_mut(3).zip(self.image.data.chunks_exact(4)) {
            let a = src[3];
            for c in 0..3 {
                dst[c] = src[c] + (1.0 - a) * background[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledDataset {
    pub views: Vec<ViewRecord>,
    pub scene_radius: f64,
    pub split: Split,
}

impl ScaledDataset {
    pub fn scales(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.views.iter().map(|v| v.scale).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn pixel_count(&self) -> usize {
        self.views.iter().map(|v| v.image.width * v.image.height).sum()
    }
}

/// Add box-downsampled copies of every scale-1 view for each factor.
/// Factor 1 keeps the original view; the output is ordered factor-major.
pub fn make_multiscale(dataset: &ScaledDataset, factors: &[u32]) -> Result<ScaledDataset, DataError> {
    let mut views = Vec::new();
    for &f in factors {
        for v in dataset.views.iter().filter(|v| v.scale == 1) {
            let k = &v.camera.intrinsics;
            if f == 0 || k.width % f != 0 || k.height % f != 0 {
                return Err(DataError::BadFactor { factor: f, width: k.width, height: k.height });
            }
            views.push(ViewRecord {
                name: if f == 1 { v.name.clone() } else { format!("{}_d{}", v.name, f) },
                camera: v.camera.scaled(f)?,
                image: v.image.box_downsample(f as usize)?,
                scale: f,
            });
        }
    }
    Ok(ScaledDataset { views, scene_radius: dataset.scene_radius, split: dataset.split })
}
