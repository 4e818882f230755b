//! Bilinear texel addressing with clamp-to-edge.

use crate::real::Real;
use crate::scene::FeatureAtlas;
use crate::vq::Codebook;

/// The four texels a bilinear lookup reads, ordered
/// `[row0 col0, row0 col1, row1 col0, row1 col1]`, and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub texels: [u32; 4],
    pub weights: [f64; 4],
    /// Fractional offsets `(fx, fy)` between the first and second column/row.
    pub frac: [f64; 2],
}

/// Footprint of `(u, v)` on a `height x width` grid. Texel centers sit at
/// `((col + 0.5) / width, (row + 0.5) / height)`; row 0 is `v = 0`.
#[inline]
pub fn bilinear_footprint(height: usize, width: usize, u: f64, v: f64) -> Footprint {
    let x = u * width as f64 - 0.5;
    let y = v * height as f64 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let clamp = |i: f64, n: usize| -> u32 { i.max(0.0).min((n - 1) as f64) as u32 };
    let c0 = clamp(x0, width);
    let c1 = clamp(x0 + 1.0, width);
    let r0 = clamp(y0, height);
    let r1 = clamp(y0 + 1.0, height);
    let w = width as u32;
    Footprint {
        texels: [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1],
        weights: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        frac: [fx, fy],
    }
}

/// Where texel features come from: the raw atlas, or codebook rows selected
/// by the atlas index map.
#[derive(Clone, Copy, Debug)]
pub enum Texels<'a, T> {
    Raw(&'a FeatureAtlas<T>),
    Quantized {
        indices: &'a [u16],
        codebook: &'a Codebook<T>,
    },
}

impl<'a, T: Real> Texels<'a, T> {
    /// Quantized when both an index map and a codebook are available.
    pub fn of(atlas: &'a FeatureAtlas<T>, codebook: Option<&'a Codebook<T>>) -> Self {
        match (atlas.indices(), codebook) {
            (Some(indices), Some(codebook)) => Texels::Quantized { indices, codebook },
            _ => Texels::Raw(atlas),
        }
    }

    #[inline]
    pub fn texel(&self, i: u32) -> &'a [T] {
        match *self {
            Texels::Raw(a) => a.texel(i as usize),
            Texels::Quantized { indices, codebook } => codebook.code(indices[i as usize] as usize),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Texels::Raw(a) => a.channels(),
            Texels::Quantized { codebook, .. } => codebook.dim(),
        }
    }
}

/// Bilinear blend of the footprint's texels into `out`, as two horizontal
/// lerps followed by a vertical one, so equal texels reproduce exactly.
#[inline]
pub fn gather<T: Real>(src: &Texels<'_, T>, fp: &Footprint, out: &mut [T]) {
    let fx = T::lit(fp.frac[0]);
    let fy = T::lit(fp.frac[1]);
    let [a, b, c, d] = fp.texels.map(|t| src.texel(t));
    for (i, o) in out.iter_mut().enumerate() {
        let top = a[i] + fx * (b[i] - a[i]);
        let bottom = c[i] + fx * (d[i] - c[i]);
        *o = top + fy * (bottom - top);
    }
}

/// Samples `atlas` at `(u, v)` and returns the feature and its footprint.
pub fn bilinear_sample<T: Real>(atlas: &FeatureAtlas<T>, u: f64, v: f64) -> (Vec<T>, Footprint) {
    let fp = bilinear_footprint(atlas.height(), atlas.width(), u, v);
    let mut out = vec![T::zero(); atlas.channels()];
    gather(&Texels::Raw(atlas), &fp, &mut out);
    (out, fp)
}
