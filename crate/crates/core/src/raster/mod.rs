//! Deterministic CPU deferred rasterizer.

mod buffer;
mod dump;
mod sample;
mod sky;
mod triangle;
mod view;

pub use dump::{dump_buffers, BufferDump, DumpedBuffer, BUFFERS_MANIFEST};
pub use buffer::{rasterize_mesh, rasterize_skybox, view_directions, FeatureBuffer};
pub use sample::{bilinear_footprint, bilinear_sample, gather, Footprint, Texels};
pub use sky::{exit_hit, ExitHit};
pub(crate) use triangle::{tile_count, tile_rect};
pub use triangle::{rasterize_fragments, Fragment, RasterOptions, NEAR_PLANE, TILE};
pub use view::{SkySample, SurfaceSample, ViewGeometry};
