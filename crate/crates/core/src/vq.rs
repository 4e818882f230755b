//! Vector quantization of feature atlases: nearest-code assignment, the
//! codebook/commitment loss, straight-through gradient routing and
//! dead-code reseeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::TexelGrad;
use crate::real::{cast_vec, Real};
use crate::scene::FeatureAtlas;

/// Largest codebook addressable by the u16 index maps.
pub const MAX_CODEBOOK_SIZE: usize = 1 << 16;

/// `K` latent codes of width `D`, plus per-code idle counters (steps since
/// the code was last nearest to any texel).
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    dim: usize,
    codes: Vec<T>,
    idle: Vec<u32>,
}

impl<T: Real> Codebook<T> {
    pub fn new(dim: usize, codes: Vec<T>) -> Result<Self> {
        if dim == 0 || codes.is_empty() || codes.len() % dim != 0 {
            return Err(Error::invariant(
                "codebook",
                format!("{} values do not form rows of width {dim}", codes.len()),
            ));
        }
        let k = codes.len() / dim;
        if k > MAX_CODEBOOK_SIZE {
            return Err(Error::invariant(
                "codebook",
                format!("size {k} exceeds {MAX_CODEBOOK_SIZE}"),
            ));
        }
        if codes.iter().any(|c| !c.is_finite()) {
            return Err(Error::invariant("codebook", "non-finite code"));
        }
        Ok(Codebook {
            dim,
            codes,
            idle: vec![0; k],
        })
    }

    /// Samples `k` texel features of `atlas` (all texels when `texels` is
    /// empty), see [`Codebook::sample_rows`].
    pub fn sample_from<R: Rng + ?Sized>(atlas: &FeatureAtlas<T>, texels: &[u32], k: usize, rng: &mut R) -> Result<Self> {
        let rows: Vec<&[T]> = if texels.is_empty() {
            (0..atlas.texel_count()).map(|t| atlas.texel(t)).collect()
        } else {
            texels.iter().map(|&t| atlas.texel(t as usize)).collect()
        };
        Codebook::sample_rows(atlas.channels(), &rows, k, rng)
    }

    /// Draws `k` codes from `rows`: without replacement when there are at
    /// least `k` rows, otherwise every row once and the rest with
    /// replacement.
    pub fn sample_rows<R: Rng + ?Sized>(dim: usize, rows: &[&[T]], k: usize, rng: &mut R) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invariant("codebook", "no features to sample codes from"));
        }
        let picks: Vec<usize> = if rows.len() >= k {
            rand::seq::index::sample(rng, rows.len(), k).into_vec()
        } else {
            (0..rows.len())
                .chain((rows.len()..k).map(|_| rng.gen_range(0..rows.len())))
                .collect()
        };
        let mut codes = Vec::with_capacity(k * dim);
        for p in picks {
            if rows[p].len() != dim {
                return Err(Error::dimension("codebook sample row", dim, rows[p].len()));
            }
            codes.extend_from_slice(rows[p]);
        }
        Codebook::new(dim, codes)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.idle.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.idle.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn code(&self, k: usize) -> &[T] {
        &self.codes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn codes(&self) -> &[T] {
        &self.codes
    }

    pub fn codes_mut(&mut self) -> &mut [T] {
        &mut self.codes
    }

    pub fn idle(&self) -> &[u32] {
        &self.idle
    }

    pub fn set_idle(&mut self, idle: Vec<u32>) -> Result<()> {
        if idle.len() != self.len() {
            return Err(Error::dimension("codebook idle counters", self.len(), idle.len()));
        }
        self.idle = idle;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Codebook<U> {
        Codebook {
            dim: self.dim,
            codes: cast_vec(&self.codes),
            idle: self.idle.clone(),
        }
    }

    /// Adds `extra` codes after the existing ones.
    pub fn extended(&self, extra: &[T]) -> Result<Self> {
        let mut codes = self.codes.clone();
        codes.extend_from_slice(extra);
        let mut out = Codebook::new(self.dim, codes)?;
        out.idle[..self.idle.len()].copy_from_slice(&self.idle);
        Ok(out)
    }
}

/// Nearest code by squared Euclidean distance; ties go to the lowest index.
#[inline]
pub fn nearest_code<T: Real>(feature: &[T], book: &Codebook<T>) -> (usize, T) {
    let d = book.dim;
    let mut best = 0;
    let mut best_dist = T::infinity();
    for (k, code) in book.codes.chunks_exact(d).enumerate() {
        let mut dist = T::zero();
        for (a, b) in feature.iter().zip(code) {
            let diff = *a - *b;
            dist += diff * diff;
            if dist >= best_dist {
                break;
            }
        }
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    (best, best_dist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult<T> {
    pub indices: Vec<u16>,
    /// Codes gathered by index.
    pub quantized: FeatureAtlas<T>,
    /// Number of texels assigned to each code.
    pub histogram: Vec<u64>,
}

fn check_dim<T: Real>(atlas: &FeatureAtlas<T>, book: &Codebook<T>) -> Result<()> {
    if atlas.channels() != book.dim() {
        return Err(Error::dimension("codebook width", atlas.channels(), book.dim()));
    }
    Ok(())
}

/// Maps every texel to its nearest code.
pub fn quantize<T: Real>(atlas: &FeatureAtlas<T>, book: &Codebook<T>) -> Result<QuantizationResult<T>> {
    check_dim(atlas, book)?;
    let indices: Vec<u16> = (0..atlas.texel_count())
        .map(|t| nearest_code(atlas.texel(t), book).0 as u16)
        .collect();
    let quantized = dequantize(&indices, book, atlas.height(), atlas.width())?;
    let mut histogram = vec![0u64; book.len()];
    for &k in &indices {
        histogram[k as usize] += 1;
    }
    Ok(QuantizationResult {
        indices,
        quantized,
        histogram,
    })
}

/// Gathers codebook rows by index into a dense atlas.
pub fn dequantize<T: Real>(indices: &[u16], book: &Codebook<T>, height: usize, width: usize) -> Result<FeatureAtlas<T>> {
    if indices.len() != height * width {
        return Err(Error::dimension("index map", height * width, indices.len()));
    }
    let mut data = Vec::with_capacity(indices.len() * book.dim());
    for &k in indices {
        if k as usize >= book.len() {
            return Err(Error::invariant("index map", format!("code {k} >= {}", book.len())));
        }
        data.extend_from_slice(book.code(k as usize));
    }
    FeatureAtlas::new(height, width, book.dim(), data)
}

/// Recomputes the assignment of the listed texels in place (creating an
/// index map if the atlas has none) and returns the per-code histogram over
/// those texels.
pub fn assign_texels<T: Real>(atlas: &mut FeatureAtlas<T>, book: &Codebook<T>, texels: &[u32]) -> Result<Vec<u64>> {
    check_dim(atlas, book)?;
    if atlas.indices().is_none() {
        let full = quantize(atlas, book)?;
        atlas.set_indices(full.indices, book.len())?;
    }
    let assigned: Vec<u16> = texels
        .iter()
        .map(|&t| nearest_code(atlas.texel(t as usize), book).0 as u16)
        .collect();
    let indices = atlas.indices_mut().expect("index map attached above");
    let mut histogram = vec![0u64; book.len()];
    for (&t, &k) in texels.iter().zip(&assigned) {
        indices[t as usize] = k;
        histogram[k as usize] += 1;
    }
    Ok(histogram)
}

/// How gradients cross the quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Training rule: rendering gradients are copied from the quantized
    /// atlas to the raw atlas, and each half of the codebook loss moves only
    /// one side.
    #[default]
    StraightThrough,
    /// The true derivative of the objective with assignments held fixed:
    /// rendering gradients land on codebook rows, and the codebook loss is
    /// differentiated without stop-gradients.
    Exact,
}

/// Codebook loss over texel subsets of one or more atlases sharing a
/// codebook, normalized by the total number of listed texels:
///
/// `L = mean_t ‖sg[t] − e(t)‖² + β · mean_t ‖sg[e(t)] − t‖²`
///
/// Under [`GradientMode::StraightThrough`] the alignment term only moves
/// codes and the commitment term only moves texel features.
#[derive(Clone, Debug, PartialEq)]
pub struct VqTerms<T> {
    pub alignment: T,
    pub commitment: T,
    /// Gradient w.r.t. codebook rows, `K x D`.
    pub codebook_grad: Vec<T>,
    /// Gradient w.r.t. each raw atlas, in input order.
    pub atlas_grads: Vec<TexelGrad<T>>,
}

impl<T: Real> VqTerms<T> {
    pub fn loss(&self) -> T {
        self.alignment + self.commitment
    }
}

/// Every atlas must carry an index map into `book`.
pub fn vq_loss<T: Real>(
    parts: &[(&FeatureAtlas<T>, &[u32])],
    book: &Codebook<T>,
    beta: T,
    mode: GradientMode,
) -> Result<VqTerms<T>> {
    if beta < T::zero() {
        return Err(Error::InvalidArgument(format!("commitment weight must be >= 0, got {beta}")));
    }
    let d = book.dim();
    let mut codebook_grad = vec![T::zero(); book.codes.len()];
    let mut atlas_grads = Vec::with_capacity(parts.len());
    let n: usize = parts.iter().map(|(_, t)| t.len()).sum();
    let inv_n = if n > 0 { T::one() / T::lit(n as f64) } else { T::zero() };
    let two = T::lit(2.0);
    let (code_scale, texel_scale) = match mode {
        GradientMode::StraightThrough => (two * inv_n, two * beta * inv_n),
        GradientMode::Exact => {
            let s = two * (T::one() + beta) * inv_n;
            (s, s)
        }
    };
    let mut sum_sq = T::zero();
    let mut g = vec![T::zero(); d];
    for (atlas, texels) in parts {
        check_dim(atlas, book)?;
        let indices = atlas
            .indices()
            .ok_or_else(|| Error::invariant("vq_loss", "atlas has no index map"))?;
        let mut grad = TexelGrad::zeros(atlas.texel_count(), d);
        for &t in texels.iter() {
            let k = indices[t as usize] as usize;
            let f = atlas.texel(t as usize);
            let e = book.code(k);
            for c in 0..d {
                let diff = f[c] - e[c];
                sum_sq += diff * diff;
                codebook_grad[k * d + c] -= code_scale * diff;
                g[c] = texel_scale * diff;
            }
            grad.add(t, &g);
        }
        grad.finish();
        atlas_grads.push(grad);
    }
    let mean_sq = sum_sq * inv_n;
    Ok(VqTerms {
        alignment: mean_sq,
        commitment: beta * mean_sq,
        codebook_grad,
        atlas_grads,
    })
}

/// Straight-through estimator: the gradient received by the quantized atlas
/// is handed to the raw atlas unchanged.
pub fn straight_through<T: Real>(quantized_grad: &TexelGrad<T>) -> TexelGrad<T> {
    quantized_grad.clone()
}

/// Exact chain rule through the gather `T_E = E[idx]`: each texel's gradient
/// lands on the code it was assigned.
pub fn scatter_to_codebook<T: Real>(quantized_grad: &TexelGrad<T>, indices: &[u16], book_len: usize) -> Vec<T> {
    let d = quantized_grad.channels;
    let mut out = vec![T::zero(); book_len * d];
    for &t in &quantized_grad.touched {
        let k = indices[t as usize] as usize;
        for (o, g) in out[k * d..(k + 1) * d].iter_mut().zip(quantized_grad.texel(t)) {
            *o += *g;
        }
    }
    out
}

/// Updates idle counters from `histogram` and resets every code idle for at
/// least `window` updates to a randomly chosen row of `candidates` (features
/// of texels currently in use). Returns the reseeded code ids.
pub fn reseed_dead_codes<T: Real, R: Rng + ?Sized>(
    book: &mut Codebook<T>,
    histogram: &[u64],
    candidates: &[&[T]],
    window: u32,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if histogram.len() != book.len() {
        return Err(Error::dimension("usage histogram", book.len(), histogram.len()));
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != book.dim) {
        return Err(Error::dimension("reseed candidate width", book.dim, c.len()));
    }
    for (idle, &h) in book.idle.iter_mut().zip(histogram) {
        *idle = if h > 0 { 0 } else { idle.saturating_add(1) };
    }
    let mut reseeded = Vec::new();
    if candidates.is_empty() || window == 0 {
        return Ok(reseeded);
    }
    let d = book.dim;
    for k in 0..book.len() {
        if book.idle[k] >= window {
            let pick = candidates[rng.gen_range(0..candidates.len())];
            book.codes[k * d..(k + 1) * d].copy_from_slice(pick);
            book.idle[k] = 0;
            reseeded.push(k);
        }
    }
    if !reseeded.is_empty() {
        log::info!("reseeded {} dead codebook entries", reseeded.len());
    }
    Ok(reseeded)
}

/// Sum of squared residuals `Σ_t ‖t − e(t)‖²` under nearest-code assignment.
pub fn quantization_error<T: Real>(atlas: &FeatureAtlas<T>, book: &Codebook<T>, texels: &[u32]) -> T {
    texels
        .iter()
        .map(|&t| nearest_code(atlas.texel(t as usize), book).1)
        .fold(T::zero(), |a, b| a + b)
}
