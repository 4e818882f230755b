//! Per-pixel feature buffers for the foreground mesh and skybox layers.

use rayon::prelude::*;

use crate::error::Result;
use crate::geom::Vec3;
use crate::raster::sample::{bilinear_footprint, gather, Footprint, Texels};
use crate::raster::sky::{check_inside, exit_hit};
use crate::raster::triangle::{rasterize_fragments, RasterOptions};
use crate::real::Real;
use crate::scene::{Camera, SkyboxStack, TexturedMesh};

/// Screen-space features of one layer. Uncovered pixels hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `H x W x D`.
    pub features: Vec<T>,
    pub coverage: Vec<bool>,
    /// Unit world-space view directions.
    pub dirs: Vec<Vec3>,
    /// View-space depth for mesh buffers, exit distance for skybox buffers,
    /// infinity where uncovered.
    pub depth: Vec<f64>,
    pub footprints: Vec<Option<Footprint>>,
}

impl<T: Real> FeatureBuffer<T> {
    pub fn feature(&self, pixel: usize) -> &[T] {
        &self.features[pixel * self.channels..(pixel + 1) * self.channels]
    }
}

/// Unit view directions through every pixel center, row-major.
pub fn view_directions(cam: &Camera) -> Vec<Vec3> {
    let (w, h) = (cam.width(), cam.height());
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| (0..w).map(move |x| cam.pixel_ray(x, y)))
        .collect()
}

/// Deferred rasterization of the mesh: bilinear atlas features at the
/// perspective-correct UV of the nearest fragment.
pub fn rasterize_mesh<T: Real>(
    mesh: &TexturedMesh,
    texels: Texels<'_, T>,
    atlas_height: usize,
    atlas_width: usize,
    cam: &Camera,
    opts: &RasterOptions,
) -> FeatureBuffer<T> {
    let frags = rasterize_fragments(mesh, cam, opts);
    let d = texels.channels();
    let n = frags.len();
    let mut buf = FeatureBuffer {
        width: cam.width() as usize,
        height: cam.height() as usize,
        channels: d,
        features: vec![T::zero(); n * d],
        coverage: vec![false; n],
        dirs: view_directions(cam),
        depth: vec![f64::INFINITY; n],
        footprints: vec![None; n],
    };
    for (p, f) in frags.iter().enumerate() {
        if let Some(f) = f {
            let fp = bilinear_footprint(atlas_height, atlas_width, f.uv[0], f.uv[1]);
            gather(&texels, &fp, &mut buf.features[p * d..(p + 1) * d]);
            buf.coverage[p] = true;
            buf.depth[p] = f.depth;
            buf.footprints[p] = Some(fp);
        }
    }
    buf
}

/// Features of skybox layer `layer` where each pixel ray exits its cuboid.
/// Also returns the exit face index per pixel; footprint texel ids refer to
/// that face's atlas.
pub fn rasterize_skybox<T: Real>(
    stack: &SkyboxStack<T>,
    codebook: Option<&crate::vq::Codebook<T>>,
    layer: usize,
    cam: &Camera,
) -> Result<(FeatureBuffer<T>, Vec<u8>)> {
    let bounds = &stack.layers[layer].bounds;
    let origin = cam.center();
    check_inside(bounds, origin, layer)?;
    let dirs = view_directions(cam);
    let n = dirs.len();
    let d = stack.layers[layer].faces[0].channels();
    let mut buf = FeatureBuffer {
        width: cam.width() as usize,
        height: cam.height() as usize,
        channels: d,
        features: vec![T::zero(); n * d],
        coverage: vec![true; n],
        dirs,
        depth: vec![0.0; n],
        footprints: vec![None; n],
    };
    let mut faces = vec![0u8; n];
    for p in 0..n {
        let hit = exit_hit(bounds, origin, buf.dirs[p]);
        let atlas = &stack.layers[layer].faces[hit.face.index()];
        let fp = bilinear_footprint(atlas.height(), atlas.width(), hit.uv[0], hit.uv[1]);
        gather(&Texels::of(atlas, codebook), &fp, &mut buf.features[p * d..(p + 1) * d]);
        buf.depth[p] = hit.t;
        buf.footprints[p] = Some(fp);
        faces[p] = hit.face.index() as u8;
    }
    Ok((buf, faces))
}
