//! Image-space loss terms. Images are `H x W x 3`, row-major, interleaved.

use crate::error::{Error, Result};
use crate::real::Real;

fn check_shapes<T>(width: usize, height: usize, rendered: &[T], target: &[T], mask: Option<&[bool]>) -> Result<()> {
    let n = width * height;
    if rendered.len() != 3 * n {
        return Err(Error::dimension("rendered image", 3 * n, rendered.len()));
    }
    if target.len() != 3 * n {
        return Err(Error::dimension("target image", 3 * n, target.len()));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::dimension("mask", n, m.len()));
        }
    }
    Ok(())
}

/// Mean squared error over valid pixel-channels and its gradient with
/// respect to `rendered` (`2 (I - target) / N_valid`, zero on masked pixels).
pub fn photometric_loss<T: Real>(
    width: usize,
    height: usize,
    rendered: &[T],
    target: &[T],
    mask: Option<&[bool]>,
) -> Result<(T, Vec<T>)> {
    check_shapes(width, height, rendered, target, mask)?;
    let valid = mask.map_or(width * height, |m| m.iter().filter(|&&v| v).count());
    if valid == 0 {
        return Err(Error::InvalidArgument("photometric loss: mask excludes every pixel".into()));
    }
    let inv = T::one() / T::lit((3 * valid) as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); rendered.len()];
    for p in 0..width * height {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 3 * p..3 * p + 3 {
            let r = rendered[c] - target[c];
            loss += r * r;
            grad[c] = two * r * inv;
        }
    }
    Ok((loss * inv, grad))
}

/// Image-similarity term with a gradient. Implementations may wrap a learned
/// feature network loaded from a user-supplied checkpoint; the built-in
/// [`PyramidProxy`] needs no pretrained weights.
pub trait PerceptualLoss<T: Real>: Send + Sync {
    /// Loss and gradient with respect to `rendered`. Masked-out pixels
    /// contribute a zero residual and receive zero gradient.
    fn evaluate(
        &self,
        width: usize,
        height: usize,
        rendered: &[T],
        target: &[T],
        mask: Option<&[bool]>,
    ) -> Result<(T, Vec<T>)>;
}

/// L1 distance between Gaussian-pyramid levels of the two images plus L1
/// distance between their Sobel gradients at full resolution. Every
/// operator is linear, so the loss is a sum of mean absolute values of
/// linear maps of the residual `rendered - target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidProxy {
    /// Number of pyramid levels including full resolution.
    pub levels: usize,
}

impl Default for PyramidProxy {
    fn default() -> Self {
        PyramidProxy { levels: 4 }
    }
}

/// Loss split by operator, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyTerms<T> {
    /// Mean absolute residual per pyramid level, finest first.
    pub pyramid: Vec<T>,
    pub sobel_x: T,
    pub sobel_y: T,
}

impl<T: Real> ProxyTerms<T> {
    pub fn total(&self) -> T {
        self.pyramid.iter().copied().sum::<T>() + self.sobel_x + self.sobel_y
    }
}

const BLUR: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable binomial blur with clamp-to-edge.
fn blur<T: Real>(src: &[T], w: usize, h: usize) -> Vec<T> {
    let k = BLUR.map(T::lit);
    let mut tmp = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            for (j, &kj) in k.iter().enumerate() {
                let sx = clamp_index(x as isize + j as isize - 2, w);
                for c in 0..3 {
                    tmp[3 * (y * w + x) + c] += kj * src[3 * (y * w + sx) + c];
                }
            }
        }
    }
    let mut out = vec![T::zero(); src.len()];
    for y in 0..h {
        for (j, &kj) in k.iter().enumerate() {
            let sy = clamp_index(y as isize + j as isize - 2, h);
            for x in 0..w {
                for c in 0..3 {
                    out[3 * (y * w + x) + c] += kj * tmp[3 * (sy * w + x) + c];
                }
            }
        }
    }
    out
}

fn blur_adjoint<T: Real>(grad: &[T], w: usize, h: usize) -> Vec<T> {
    let k = BLUR.map(T::lit);
    let mut tmp = vec![T::zero(); grad.len()];
    for y in 0..h {
        for (j, &kj) in k.iter().enumerate() {
            let sy = clamp_index(y as isize + j as isize - 2, h);
            for x in 0..w {
                for c in 0..3 {
                    tmp[3 * (sy * w + x) + c] += kj * grad[3 * (y * w + x) + c];
                }
            }
        }
    }
    let mut out = vec![T::zero(); grad.len()];
    for y in 0..h {
        for x in 0..w {
            for (j, &kj) in k.iter().enumerate() {
                let sx = clamp_index(x as isize + j as isize - 2, w);
                for c in 0..3 {
                    out[3 * (y * w + sx) + c] += kj * tmp[3 * (y * w + x) + c];
                }
            }
        }
    }
    out
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Keeps even rows and columns.
fn downsample<T: Real>(src: &[T], w: usize, h: usize) -> Vec<T> {
    let (w2, h2) = (half(w), half(h));
    let mut out = Vec::with_capacity(3 * w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let s = 3 * (2 * y * w + 2 * x);
            out.extend_from_slice(&src[s..s + 3]);
        }
    }
    out
}

fn downsample_adjoint<T: Real>(grad: &[T], w: usize, h: usize) -> Vec<T> {
    let (w2, h2) = (half(w), half(h));
    let mut out = vec![T::zero(); 3 * w * h];
    for y in 0..h2 {
        for x in 0..w2 {
            let s = 3 * (2 * y * w + 2 * x);
            out[s..s + 3].copy_from_slice(&grad[3 * (y * w2 + x)..3 * (y * w2 + x) + 3]);
        }
    }
    out
}

/// Unnormalized 3x3 Sobel responses with clamp-to-edge. `transpose` swaps
/// the axes so one routine serves both directions.
fn sobel_taps(transpose: bool) -> [(isize, isize, f64); 6] {
    // (dx, dy, weight) for the horizontal derivative
    let taps = [
        (-1, -1, -1.0),
        (-1, 0, -2.0),
        (-1, 1, -1.0),
        (1, -1, 1.0),
        (1, 0, 2.0),
        (1, 1, 1.0),
    ];
    if transpose {
        taps.map(|(dx, dy, wt)| (dy, dx, wt))
    } else {
        taps
    }
}

fn sobel<T: Real>(src: &[T], w: usize, h: usize, transpose: bool) -> Vec<T> {
    let taps = sobel_taps(transpose);
    let mut out = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            for &(dx, dy, wt) in &taps {
                let s = clamp_index(y as isize + dy, h) * w + clamp_index(x as isize + dx, w);
                let wt = T::lit(wt);
                for c in 0..3 {
                    out[3 * (y * w + x) + c] += wt * src[3 * s + c];
                }
            }
        }
    }
    out
}

fn sobel_adjoint<T: Real>(grad: &[T], w: usize, h: usize, transpose: bool, out: &mut [T]) {
    let taps = sobel_taps(transpose);
    for y in 0..h {
        for x in 0..w {
            for &(dx, dy, wt) in &taps {
                let s = clamp_index(y as isize + dy, h) * w + clamp_index(x as isize + dx, w);
                let wt = T::lit(wt);
                for c in 0..3 {
                    out[3 * s + c] += wt * grad[3 * (y * w + x) + c];
                }
            }
        }
    }
}

/// Mean absolute value and its subgradient `sign(v) / N` (zero at zero).
fn mean_abs<T: Real>(v: &[T]) -> (T, Vec<T>) {
    let inv = T::one() / T::lit(v.len() as f64);
    let sum: T = v.iter().map(|x| x.abs()).sum();
    let g = v
        .iter()
        .map(|&x| {
            if x > T::zero() {
                inv
            } else if x < T::zero() {
                -inv
            } else {
                T::zero()
            }
        })
        .collect();
    (sum * inv, g)
}

impl PyramidProxy {
    /// Per-operator terms and the gradient with respect to `rendered`.
    pub fn terms<T: Real>(
        &self,
        width: usize,
        height: usize,
        rendered: &[T],
        target: &[T],
        mask: Option<&[bool]>,
    ) -> Result<(ProxyTerms<T>, Vec<T>)> {
        check_shapes(width, height, rendered, target, mask)?;
        if self.levels == 0 {
            return Err(Error::invariant("pyramid levels", "must be >= 1"));
        }
        let keep = |p: usize| mask.is_none_or(|m| m[p]);
        let residual: Vec<T> = (0..rendered.len())
            .map(|i| if keep(i / 3) { rendered[i] - target[i] } else { T::zero() })
            .collect();

        let mut pyramid = Vec::with_capacity(self.levels);
        let mut level_grads = Vec::with_capacity(self.levels);
        let mut dims = Vec::with_capacity(self.levels);
        let mut level = residual.clone();
        let (mut w, mut h) = (width, height);
        for k in 0..self.levels {
            if k > 0 {
                level = downsample(&blur(&level, w, h), w, h);
                dims.push((w, h));
                w = half(w);
                h = half(h);
            }
            let (v, g) = mean_abs(&level);
            pyramid.push(v);
            level_grads.push(g);
        }
        // Pull level gradients back to full resolution, coarsest first.
        let mut grad = level_grads.pop().expect("at least one level");
        while let Some(g) = level_grads.pop() {
            let (pw, ph) = dims.pop().expect("one size per downsampling");
            grad = blur_adjoint(&downsample_adjoint(&grad, pw, ph), pw, ph);
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
        }

        let (sobel_x, gx) = mean_abs(&sobel(&residual, width, height, false));
        let (sobel_y, gy) = mean_abs(&sobel(&residual, width, height, true));
        sobel_adjoint(&gx, width, height, false, &mut grad);
        sobel_adjoint(&gy, width, height, true, &mut grad);
        for (p, g) in grad.chunks_exact_mut(3).enumerate() {
            if !keep(p) {
                g.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok((
            ProxyTerms {
                pyramid,
                sobel_x,
                sobel_y,
            },
            grad,
        ))
    }
}

impl<T: Real> PerceptualLoss<T> for PyramidProxy {
    fn evaluate(
        &self,
        width: usize,
        height: usize,
        rendered: &[T],
        target: &[T],
        mask: Option<&[bool]>,
    ) -> Result<(T, Vec<T>)> {
        let (terms, grad) = self.terms(width, height, rendered, target, mask)?;
        Ok((terms.total(), grad))
    }
}
