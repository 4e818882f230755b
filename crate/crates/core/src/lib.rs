//! Neural-texture scene representation: training from posed images, a
//! deterministic CPU deferred rasterizer, and export to a real-time bundle.

pub mod bake;
pub mod blob;
pub mod error;
pub mod geom;
pub mod gradcheck;
pub mod grad;
pub mod image;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod real;
pub mod scene;
pub mod shader;
pub mod synthetic;
pub mod train;
pub mod vq;

pub use error::{Error, Result};
pub use real::Real;
