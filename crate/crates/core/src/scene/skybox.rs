use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::real::Real;
use crate::scene::FeatureAtlas;

/// Cuboid faces in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CubeFace {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::PosX,
        CubeFace::NegX,
        CubeFace::PosY,
        CubeFace::NegY,
        CubeFace::PosZ,
        CubeFace::NegZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> CubeFace {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        ["px", "nx", "py", "ny", "pz", "nz"][self.index()]
    }

    /// Axis (0 = x, 1 = y, 2 = z) and sign of the outward normal.
    pub fn axis(self) -> (usize, f64) {
        let i = self.index();
        (i / 2, if i % 2 == 0 { 1.0 } else { -1.0 })
    }

    /// Major-axis cubemap mapping: `local` is the point in cuboid-normalized
    /// coordinates (each component in [-1, 1], this face's component at ±1).
    /// Returns `(u, v)` in [0, 1]^2 following the usual GPU cubemap table.
    pub fn uv(self, local: Vec3) -> [f64; 2] {
        let [x, y, z] = local;
        let (sc, tc) = match self {
            CubeFace::PosX => (-z, -y),
            CubeFace::NegX => (z, -y),
            CubeFace::PosY => (x, z),
            CubeFace::NegY => (x, -z),
            CubeFace::PosZ => (x, -y),
            CubeFace::NegZ => (-x, -y),
        };
        [
            (0.5 * (sc + 1.0)).clamp(0.0, 1.0),
            (0.5 * (tc + 1.0)).clamp(0.0, 1.0),
        ]
    }

    /// Inverse of [`CubeFace::uv`]: the normalized local point for a face UV.
    pub fn local_point(self, uv: [f64; 2]) -> Vec3 {
        let sc = 2.0 * uv[0] - 1.0;
        let tc = 2.0 * uv[1] - 1.0;
        match self {
            CubeFace::PosX => [1.0, -tc, -sc],
            CubeFace::NegX => [-1.0, -tc, sc],
            CubeFace::PosY => [sc, 1.0, tc],
            CubeFace::NegY => [sc, -1.0, -tc],
            CubeFace::PosZ => [sc, -tc, 1.0],
            CubeFace::NegZ => [-sc, -tc, -1.0],
        }
    }
}

/// Axis-aligned cuboid in world space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl Cuboid {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() < self.half_extents[a])
    }

    /// True when `other` lies strictly inside `self`.
    pub fn strictly_contains(&self, other: &Cuboid) -> bool {
        (0..3).all(|a| {
            let lo = other.center[a] - other.half_extents[a];
            let hi = other.center[a] + other.half_extents[a];
            lo > self.center[a] - self.half_extents[a] && hi < self.center[a] + self.half_extents[a]
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkyLayer<T> {
    pub bounds: Cuboid,
    /// Indexed by [`CubeFace::index`].
    pub faces: Vec<FeatureAtlas<T>>,
}

/// Nested cuboid layers ordered near to far.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SkyboxStack<T> {
    pub layers: Vec<SkyLayer<T>>,
}

impl<T: Real> SkyLayer<T> {
    pub fn zeros(bounds: Cuboid, resolution: usize, channels: usize) -> Result<Self> {
        let faces = (0..6)
            .map(|_| FeatureAtlas::zeros(resolution, resolution, channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(SkyLayer { bounds, faces })
    }
}

impl<T: Real> SkyboxStack<T> {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn face(&self, layer: usize, face: CubeFace) -> &FeatureAtlas<T> {
        &self.layers[layer].faces[face.index()]
    }

    /// Flattened `(layer, face)` index used for per-face bookkeeping.
    #[inline]
    pub fn slot(layer: usize, face: usize) -> usize {
        layer * 6 + face
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let b = &layer.bounds;
            if b.half_extents.iter().any(|&h| !(h > 0.0 && h.is_finite()))
                || b.center.iter().any(|c| !c.is_finite())
            {
                return Err(Error::invariant(
                    format!("skybox.layers[{i}].bounds"),
                    "half extents must be positive and finite",
                ));
            }
            if layer.faces.len() != 6 {
                return Err(Error::dimension(
                    format!("skybox.layers[{i}].faces"),
                    6,
                    layer.faces.len(),
                ));
            }
            for (f, atlas) in layer.faces.iter().enumerate() {
                if atlas.channels() != channels {
                    return Err(Error::dimension(
                        format!("skybox.layers[{i}].faces[{}] channels", CubeFace::from_index(f).name()),
                        channels,
                        atlas.channels(),
                    ));
                }
            }
            if i > 0 && !b.strictly_contains(&self.layers[i - 1].bounds) {
                return Err(Error::invariant(
                    format!("skybox.layers[{i}].bounds"),
                    format!("does not strictly contain layer {}", i - 1),
                ));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> SkyboxStack<U> {
        SkyboxStack {
            layers: self
                .layers
                .iter()
                .map(|l| SkyLayer {
                    bounds: l.bounds,
                    faces: l.faces.iter().map(|f| f.cast()).collect(),
                })
                .collect(),
        }
    }
}
