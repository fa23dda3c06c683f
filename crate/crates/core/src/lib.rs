//! Anti-aliased radiance fields built from cone casting, Platonic-solid plane
//! projection and learnable ripmap encodings.
//!
//! The crate is organized bottom-up: [`geometry`] turns pixel cones into 3D
//! Gaussians and projects them onto planes, [`ripmap`] area-samples the
//! projected footprints, [`field`] decodes the features into density and
//! color, [`render`] marches and composites rays, [`train`] fits everything
//! to images, and [`data`] supplies datasets. [`metrics`] scores renders.

pub mod data;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod raster;
pub mod render;
pub mod ripmap;
pub mod train;

pub use field::{EncodingMode, FieldConfig, FieldGrad, FieldSample, RadianceField};
pub use geometry::{
    cone_cast_gaussian, platonic_plane_set, project_gaussian, FrustumInterval, Gaussian2, Gaussian3, PlaneBasis, PlaneSet,
    PlatonicSolid, Ray, Vec2, Vec3,
};
pub use ripmap::{FeatureGrid, Ripmap, RipmapQuery};
