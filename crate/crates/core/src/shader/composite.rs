//! Near-to-far layer compositing and its adjoint.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::RenderLayers;

/// `I = Σ_i I_i O_i Π_{j<i} (1 − O_j)` for one pixel, stopping once the
/// transmittance reaches exactly zero.
#[inline]
pub fn composite_pixel<T: Real>(colors: &[[T; 3]], opacities: &[T]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    let mut trans = T::one();
    for (c, &o) in colors.iter().zip(opacities) {
        let w = trans * o;
        for k in 0..3 {
            out[k] += w * c[k];
        }
        trans *= T::one() - o;
        if trans == T::zero() {
            break;
        }
    }
    out
}

/// Per-layer weights `w_i = O_i Π_{j<i} (1 − O_j)`.
pub fn composite_weights<T: Real>(opacities: &[T]) -> Vec<T> {
    let mut trans = T::one();
    opacities
        .iter()
        .map(|&o| {
            let w = trans * o;
            trans *= T::one() - o;
            w
        })
        .collect()
}

/// Adjoint of [`composite_pixel`] for upstream gradient `g`:
/// `dL/dI_i = w_i g` and `dL/dO_i = T_i g·(I_i − S_i)`, where `S_i` is the
/// composite of the layers behind `i` (zero behind the last one).
pub fn composite_pixel_backward<T: Real>(
    colors: &[[T; 3]],
    opacities: &[T],
    g: [T; 3],
    grad_colors: &mut [[T; 3]],
    grad_opacities: &mut [T],
) {
    let n = colors.len();
    let mut trans = vec![T::one(); n];
    for i in 1..n {
        trans[i] = trans[i - 1] * (T::one() - opacities[i - 1]);
    }
    let mut behind = [T::zero(); 3];
    for i in (0..n).rev() {
        let (c, o, t) = (colors[i], opacities[i], trans[i]);
        let w = t * o;
        let mut go = T::zero();
        for k in 0..3 {
            grad_colors[i][k] = w * g[k];
            go += g[k] * (c[k] - behind[k]);
        }
        grad_opacities[i] = t * go;
        for k in 0..3 {
            behind[k] = c[k] * o + (T::one() - o) * behind[k];
        }
    }
}

fn check<T: Real>(layers: &RenderLayers<T>) -> Result<()> {
    for (i, l) in layers.layers.iter().enumerate() {
        if let Some(p) = l.opacity.iter().position(|o| !(*o >= T::zero() && *o <= T::one())) {
            return Err(Error::invariant(
                format!("layers[{i}].opacity"),
                format!("pixel {p} outside [0, 1]"),
            ));
        }
    }
    let last = layers.layers.last().expect("RenderLayers is non-empty");
    if let Some(p) = last.opacity.iter().position(|o| *o != T::one()) {
        return Err(Error::invariant(
            "farthest layer opacity",
            format!("pixel {p} is not fully opaque"),
        ));
    }
    Ok(())
}

/// Composites a full layer stack near to far into an `H x W x 3` image.
pub fn composite<T: Real>(layers: &RenderLayers<T>) -> Result<Vec<T>> {
    check(layers)?;
    let n = layers.width * layers.height;
    let mut out = vec![T::zero(); 3 * n];
    let mut colors = vec![[T::zero(); 3]; layers.layers.len()];
    let mut ops = vec![T::zero(); layers.layers.len()];
    for p in 0..n {
        for (i, l) in layers.layers.iter().enumerate() {
            colors[i] = [l.color[3 * p], l.color[3 * p + 1], l.color[3 * p + 2]];
            ops[i] = l.opacity[p];
        }
        out[3 * p..3 * p + 3].copy_from_slice(&composite_pixel(&colors, &ops));
    }
    Ok(out)
}

/// The same image by repeated "over" blending from the farthest layer
/// forward: `dst = src·α + dst·(1 − α)`.
pub fn composite_back_to_front<T: Real>(layers: &RenderLayers<T>) -> Result<Vec<T>> {
    check(layers)?;
    let n = layers.width * layers.height;
    let mut dst = vec![T::zero(); 3 * n];
    for l in layers.layers.iter().rev() {
        for p in 0..n {
            let a = l.opacity[p];
            for k in 0..3 {
                dst[3 * p + k] = l.color[3 * p + k] * a + dst[3 * p + k] * (T::one() - a);
            }
        }
    }
    Ok(dst)
}
