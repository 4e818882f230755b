//! Uniform-grid vertex clustering.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::mesh::{bbox_diagonal_sq, is_degenerate};
use crate::scene::Mesh;

/// Merges all vertices falling in the same `cell`-sized grid cube into their
/// centroid, then drops degenerate faces and duplicates (faces over the same
/// vertex set, first occurrence kept). Faces keep their relative order.
pub fn cluster_vertices(mesh: &Mesh, cell: f64) -> Result<Mesh> {
    if !(cell.is_finite() && cell > 0.0) {
        return Err(Error::InvalidArgument(format!("cluster cell size must be > 0, got {cell}")));
    }
    mesh.validate()?;
    let mut cells: BTreeMap<[i64; 3], u32> = BTreeMap::new();
    let mut sums: Vec<([f64; 3], usize)> = Vec::new();
    let mut remap = Vec::with_capacity(mesh.positions.len());
    for p in &mesh.positions {
        let key = p.map(|c| (c as f64 / cell).floor() as i64);
        let id = *cells.entry(key).or_insert_with(|| {
            sums.push(([0.0; 3], 0));
            (sums.len() - 1) as u32
        });
        let s = &mut sums[id as usize];
        for a in 0..3 {
            s.0[a] += p[a] as f64;
        }
        s.1 += 1;
        remap.push(id);
    }
    let positions: Vec<[f32; 3]> = sums
        .iter()
        .map(|(s, n)| s.map(|c| (c / *n as f64) as f32))
        .collect();
    let merged = Mesh {
        positions,
        faces: Vec::new(),
    };
    let diag = bbox_diagonal_sq(&merged.positions);
    let mut seen = BTreeSet::new();
    let mut faces = Vec::new();
    for f in &mesh.faces {
        let g = f.map(|v| remap[v as usize]);
        if is_degenerate(&merged, g, diag) {
            continue;
        }
        let mut key = g;
        key.sort_unstable();
        if seen.insert(key) {
            faces.push(g);
        }
    }
    let out = Mesh {
        positions: merged.positions,
        faces,
    };
    Ok(out.compact())
}
