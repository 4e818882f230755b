//! Camera-dependent geometry of a view, computed once and reused by every
//! forward and backward pass over that view.

use rayon::prelude::*;

use crate::error::Result;
use crate::geom::Vec3;
use crate::raster::buffer::view_directions;
use crate::raster::sample::{bilinear_footprint, Footprint};
use crate::raster::sky::{check_inside, exit_hit};
use crate::raster::triangle::{rasterize_fragments, RasterOptions};
use crate::real::Real;
use crate::scene::{Camera, SkyboxStack, TexturedMesh};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub face: u32,
    pub depth: f64,
    pub uv: [f64; 2],
    pub footprint: Footprint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkySample {
    /// [`crate::scene::CubeFace::index`] of the exit face.
    pub face: u8,
    pub footprint: Footprint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewGeometry {
    pub width: usize,
    pub height: usize,
    pub dirs: Vec<Vec3>,
    /// Nearest mesh sample per pixel.
    pub surface: Vec<Option<SurfaceSample>>,
    /// `[layer][pixel]` exit samples.
    pub sky: Vec<Vec<SkySample>>,
    /// Sorted unique atlas texels read by covered pixels.
    pub surface_texels: Vec<u32>,
    /// Per skybox slot (see [`SkyboxStack::slot`]), sorted unique texels read
    /// by pixels the mesh leaves uncovered.
    pub sky_texels: Vec<Vec<u32>>,
}

impl ViewGeometry {
    pub fn build<T: Real>(
        mesh: &TexturedMesh,
        atlas_dims: (usize, usize),
        skybox: &SkyboxStack<T>,
        cam: &Camera,
        opts: &RasterOptions,
    ) -> Result<Self> {
        let origin = cam.center();
        for (l, layer) in skybox.layers.iter().enumerate() {
            check_inside(&layer.bounds, origin, l)?;
        }
        let dirs = view_directions(cam);
        let (ah, aw) = atlas_dims;
        let surface: Vec<Option<SurfaceSample>> = rasterize_fragments(mesh, cam, opts)
            .into_iter()
            .map(|f| {
                f.map(|f| SurfaceSample {
                    face: f.face,
                    depth: f.depth,
                    uv: f.uv,
                    footprint: bilinear_footprint(ah, aw, f.uv[0], f.uv[1]),
                })
            })
            .collect();
        let sky: Vec<Vec<SkySample>> = skybox
            .layers
            .iter()
            .map(|layer| {
                dirs.par_iter()
                    .map(|&d| {
                        let hit = exit_hit(&layer.bounds, origin, d);
                        let atlas = &layer.faces[hit.face.index()];
                        SkySample {
                            face: hit.face.index() as u8,
                            footprint: bilinear_footprint(atlas.height(), atlas.width(), hit.uv[0], hit.uv[1]),
                        }
                    })
                    .collect()
            })
            .collect();

        let mut surface_texels: Vec<u32> = surface.iter().flatten().flat_map(|s| s.footprint.texels).collect();
        surface_texels.sort_unstable();
        surface_texels.dedup();
        let mut sky_texels = vec![Vec::new(); skybox.len() * 6];
        for (l, samples) in sky.iter().enumerate() {
            for (p, s) in samples.iter().enumerate() {
                if surface[p].is_none() {
                    sky_texels[SkyboxStack::<T>::slot(l, s.face as usize)].extend_from_slice(&s.footprint.texels);
                }
            }
        }
        for t in &mut sky_texels {
            t.sort_unstable();
            t.dedup();
        }
        Ok(ViewGeometry {
            width: cam.width() as usize,
            height: cam.height() as usize,
            dirs,
            surface,
            sky,
            surface_texels,
            sky_texels,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn coverage(&self) -> Vec<bool> {
        self.surface.iter().map(Option::is_some).collect()
    }
}
