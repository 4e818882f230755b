//! Removal of faces no training camera can see.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{rasterize_fragments, RasterOptions};
use crate::scene::{Camera, Intrinsics, Mesh, TexturedMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CullOptions {
    /// Visibility is tested on a grid this many times finer per axis than
    /// the camera's pixels, so thin faces between pixel centers survive.
    pub supersample: u32,
    pub backface_culling: bool,
}

impl Default for CullOptions {
    fn default() -> Self {
        CullOptions {
            supersample: 2,
            backface_culling: true,
        }
    }
}

fn supersampled(cam: &Camera, s: u32) -> Result<Camera> {
    let k = cam.intrinsics();
    let f = s as f64;
    Camera::new(
        cam.world_to_camera(),
        Intrinsics {
            fx: k.fx * f,
            fy: k.fy * f,
            cx: k.cx * f,
            cy: k.cy * f,
        },
        cam.width() * s,
        cam.height() * s,
    )
}

/// Per face: whether it wins the depth test at some sample of some camera.
pub fn visible_faces(mesh: &Mesh, cameras: &[Camera], opts: &CullOptions) -> Result<Vec<bool>> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("visibility culling needs at least one camera".into()));
    }
    if opts.supersample == 0 {
        return Err(Error::InvalidArgument("supersampling factor must be >= 1".into()));
    }
    mesh.validate()?;
    let textured = TexturedMesh {
        positions: mesh.positions.clone(),
        uvs: vec![[0.0; 2]; mesh.positions.len()],
        faces: mesh.faces.clone(),
    };
    let raster = RasterOptions {
        backface_culling: opts.backface_culling,
    };
    let cams = cameras
        .iter()
        .map(|c| supersampled(c, opts.supersample))
        .collect::<Result<Vec<_>>>()?;
    let n = mesh.faces.len();
    Ok(cams
        .par_iter()
        .map(|cam| {
            let mut seen = vec![false; n];
            for f in rasterize_fragments(&textured, cam, &raster).into_iter().flatten() {
                seen[f.face as usize] = true;
            }
            seen
        })
        .reduce(
            || vec![false; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x |= y;
                }
                a
            },
        ))
}

/// The sub-mesh of visible faces, in input order, with unused vertices
/// dropped.
pub fn cull_invisible(mesh: &Mesh, cameras: &[Camera], opts: &CullOptions) -> Result<Mesh> {
    let keep = visible_faces(mesh, cameras, opts)?;
    let faces = mesh
        .faces
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(f, _)| *f)
        .collect();
    Ok(Mesh {
        positions: mesh.positions.clone(),
        faces,
    }
    .compact())
}
