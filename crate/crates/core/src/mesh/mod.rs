//! Preprocessing that turns an arbitrary triangle mesh into the scaffold the
//! renderer trains on: vertex clustering, quadric decimation, visibility
//! culling and UV atlas generation.

mod atlas;
mod cluster;
mod cull;
mod decimate;
mod obj;
mod prep;

pub use atlas::{generate_uv_atlas, AtlasOptions};
pub use cluster::cluster_vertices;
pub use cull::{cull_invisible, visible_faces, CullOptions};
pub use decimate::{decimate, DecimationConfig, DecimationOutcome};
pub use obj::{read_obj, write_obj, ObjMesh};
pub use prep::{prepare_mesh, PrepOptions, PrepReport, StageCounts};

use crate::geom;
use crate::scene::Mesh;

/// Twice the area below which a face counts as degenerate, relative to the
/// squared bounding-box diagonal.
pub(crate) const DEGENERATE_REL_AREA: f64 = 1e-14;

pub(crate) fn bbox_diagonal_sq(positions: &[[f32; 3]]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a] as f64);
            hi[a] = hi[a].max(p[a] as f64);
        }
    }
    if positions.is_empty() {
        return 0.0;
    }
    (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum()
}

/// True when the face repeats a vertex or spans (numerically) no area.
pub(crate) fn is_degenerate(mesh: &Mesh, f: [u32; 3], diag_sq: f64) -> bool {
    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
        return true;
    }
    let [a, b, c] = f.map(|v| mesh.position(v));
    let n = geom::cross(geom::sub(b, a), geom::sub(c, a));
    geom::norm(n) <= DEGENERATE_REL_AREA * diag_sq
}
