use crate::error::{Error, Result};
use crate::real::Real;

/// One color + opacity image.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderLayer<T> {
    /// `H x W x 3`.
    pub color: Vec<T>,
    /// `H x W`.
    pub opacity: Vec<T>,
}

/// Layers ordered near to far: index 0 is the foreground mesh, the last one
/// is the farthest skybox layer and must be fully opaque.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderLayers<T> {
    pub width: usize,
    pub height: usize,
    pub layers: Vec<RenderLayer<T>>,
}

impl<T: Real> RenderLayers<T> {
    pub fn new(width: usize, height: usize, layers: Vec<RenderLayer<T>>) -> Result<Self> {
        let n = width * height;
        if layers.is_empty() {
            return Err(Error::invariant("render layers", "at least one layer is required"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.color.len() != 3 * n {
                return Err(Error::dimension(format!("layer {i} color"), 3 * n, l.color.len()));
            }
            if l.opacity.len() != n {
                return Err(Error::dimension(format!("layer {i} opacity"), n, l.opacity.len()));
            }
        }
        Ok(RenderLayers {
            width,
            height,
            layers,
        })
    }
}
