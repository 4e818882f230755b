use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Triangle mesh without texture coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mesh {
    pub positions: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
}

/// Triangle mesh whose vertex `i` owns texture coordinate `uvs[i]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TexturedMesh {
    pub positions: Vec<[f32; 3]>,
    pub uvs: Vec<[f32; 2]>,
    pub faces: Vec<[u32; 3]>,
}

fn validate_faces(faces: &[[u32; 3]], vertex_count: usize) -> Result<()> {
    for (i, f) in faces.iter().enumerate() {
        if f.iter().any(|&v| v as usize >= vertex_count) {
            return Err(Error::invariant(
                format!("mesh.faces[{i}]"),
                format!("index out of range for {vertex_count} vertices: {f:?}"),
            ));
        }
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::invariant(
                format!("mesh.faces[{i}]"),
                format!("degenerate face {f:?}"),
            ));
        }
    }
    Ok(())
}

fn validate_positions(positions: &[[f32; 3]]) -> Result<()> {
    if let Some(i) = positions
        .iter()
        .position(|p| p.iter().any(|c| !c.is_finite()))
    {
        return Err(Error::invariant(
            format!("mesh.positions[{i}]"),
            "non-finite coordinate",
        ));
    }
    Ok(())
}

impl Mesh {
    pub fn new(positions: Vec<[f32; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Mesh { positions, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        validate_positions(&self.positions)?;
        validate_faces(&self.faces, self.positions.len())
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    #[inline]
    pub fn position(&self, i: u32) -> Vec3 {
        geom::to_f64(self.positions[i as usize])
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.position(f[0]), self.position(f[1]), self.position(f[2])]
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|i| {
                let [a, b, c] = self.corners(i);
                geom::triangle_area(a, b, c)
            })
            .sum()
    }

    /// Drops vertices no face references and renumbers the rest in first-use order.
    pub fn compact(&self) -> Mesh {
        let (positions, faces, _) = compact_vertices(&self.positions, &self.faces);
        Mesh { positions, faces }
    }
}

impl TexturedMesh {
    pub fn new(positions: Vec<[f32; 3]>, uvs: Vec<[f32; 2]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = TexturedMesh {
            positions,
            uvs,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.uvs.len() {
            return Err(Error::dimension(
                "mesh.uvs",
                self.positions.len(),
                self.uvs.len(),
            ));
        }
        validate_positions(&self.positions)?;
        if let Some(i) = self
            .uvs
            .iter()
            .position(|t| t.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::invariant(
                format!("mesh.uvs[{i}]"),
                format!("{:?} outside [0,1]^2", self.uvs[i]),
            ));
        }
        validate_faces(&self.faces, self.positions.len())
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn geometry(&self) -> Mesh {
        Mesh {
            positions: self.positions.clone(),
            faces: self.faces.clone(),
        }
    }

    /// Keeps only the listed faces (in the given order) and compacts vertices.
    pub fn submesh(&self, keep: &[usize]) -> TexturedMesh {
        let faces: Vec<[u32; 3]> = keep.iter().map(|&i| self.faces[i]).collect();
        let (positions, faces, remap) = compact_vertices(&self.positions, &faces);
        let mut uvs = vec![[0.0f32; 2]; positions.len()];
        for (old, new) in remap.iter().enumerate() {
            if let Some(n) = new {
                uvs[*n as usize] = self.uvs[old];
            }
        }
        TexturedMesh {
            positions,
            uvs,
            faces,
        }
    }
}

/// Returns compacted positions, renumbered faces and the old->new vertex map.
pub(crate) fn compact_vertices(
    positions: &[[f32; 3]],
    faces: &[[u32; 3]],
) -> (Vec<[f32; 3]>, Vec<[u32; 3]>, Vec<Option<u32>>) {
    let mut remap: Vec<Option<u32>> = vec![None; positions.len()];
    let mut out_pos = Vec::new();
    let mut out_faces = Vec::with_capacity(faces.len());
    for f in faces {
        let mut nf = [0u32; 3];
        for (k, &v) in f.iter().enumerate() {
            let slot = &mut remap[v as usize];
            let id = *slot.get_or_insert_with(|| {
                out_pos.push(positions[v as usize]);
                (out_pos.len() - 1) as u32
            });
            nf[k] = id;
        }
        out_faces.push(nf);
    }
    (out_pos, out_faces, remap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_degenerate_faces() {
        let p = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(Mesh::new(p.clone(), vec![[0, 1, 3]]).is_err());
        assert!(Mesh::new(p.clone(), vec![[0, 1, 1]]).is_err());
        assert!(Mesh::new(p, vec![[0, 1, 2]]).is_ok());
    }

    #[test]
    fn rejects_uv_outside_unit_square() {
        let p = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = TexturedMesh::new(p, vec![[0.0, 0.0], [1.5, 0.0], [0.0, 1.0]], vec![[0, 1, 2]])
            .unwrap_err();
        assert!(err.to_string().contains("mesh.uvs[1]"), "{err}");
    }

    #[test]
    fn submesh_compacts_vertices() {
        let m = TexturedMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]],
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let s = m.submesh(&[1]);
        assert_eq!(s.vertex_count(), 3);
        assert_eq!(s.faces, vec![[0, 1, 2]]);
        assert_eq!(s.uvs[1], [1.0, 1.0]);
        s.validate().unwrap();
    }
}
