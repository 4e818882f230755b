//! Wavefront OBJ input and output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::{Mesh, TexturedMesh};

/// An OBJ file's geometry, plus its texture coordinates when every face
/// vertex carries one (an externally parameterized mesh).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjMesh {
    pub mesh: Mesh,
    pub textured: Option<TexturedMesh>,
}

fn parse_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: 0,
        reason: reason.into(),
    }
}

/// Reads all objects of an OBJ file into one mesh; polygons are
/// fan-triangulated. OBJ texture coordinates have `v` pointing up, so they
/// are flipped into the atlas convention (row 0 at `v = 0`).
pub fn read_obj(path: &Path) -> Result<ObjMesh> {
    if !path.exists() {
        return Err(Error::MissingFile { path: path.into() });
    }
    let opts = tobj::LoadOptions {
        triangulate: true,
        single_index: true,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, _) = tobj::load_obj(path, &opts).map_err(|e| parse_error(path, e.to_string()))?;
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut all_uv = true;
    for m in &models {
        let mesh = &m.mesh;
        let base = positions.len() as u32;
        let n = mesh.positions.len() / 3;
        positions.extend(mesh.positions.chunks_exact(3).map(|p| [p[0], p[1], p[2]]));
        if mesh.texcoords.len() == 2 * n {
            uvs.extend(mesh.texcoords.chunks_exact(2).map(|t| [t[0], 1.0 - t[1]]));
        } else {
            all_uv = false;
        }
        faces.extend(mesh.indices.chunks_exact(3).map(|f| [base + f[0], base + f[1], base + f[2]]));
    }
    let mesh = Mesh::new(positions.clone(), faces.clone()).map_err(|e| parse_error(path, e.to_string()))?;
    let textured = if all_uv && !faces.is_empty() {
        Some(TexturedMesh::new(positions, uvs, faces).map_err(|e| parse_error(path, e.to_string()))?)
    } else {
        None
    };
    Ok(ObjMesh { mesh, textured })
}

/// Writes positions, optional texture coordinates and triangles.
pub fn write_obj(path: &Path, positions: &[[f32; 3]], uvs: Option<&[[f32; 2]]>, faces: &[[u32; 3]]) -> Result<()> {
    let mut out = Vec::new();
    let io = |e| Error::io(path, e);
    for p in positions {
        writeln!(out, "v {} {} {}", p[0], p[1], p[2]).map_err(io)?;
    }
    if let Some(uvs) = uvs {
        for t in uvs {
            writeln!(out, "vt {} {}", t[0], 1.0 - t[1]).map_err(io)?;
        }
    }
    for f in faces {
        let [a, b, c] = f.map(|v| v + 1);
        if uvs.is_some() {
            writeln!(out, "f {a}/{a} {b}/{b} {c}/{c}").map_err(io)?;
        } else {
            writeln!(out, "f {a} {b} {c}").map_err(io)?;
        }
    }
    std::fs::write(path, out).map_err(io)
}
