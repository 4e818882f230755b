//! The full training objective for one view and its gradient.

use crate::error::{Error, Result};
use crate::grad::SceneGrads;
use crate::raster::ViewGeometry;
use crate::real::Real;
use crate::scene::{SceneConfig, SceneParams};
use crate::shader::{backward_view, render_view, route_quantized_gradients};
use crate::train::loss::{photometric_loss, PerceptualLoss};
use crate::vq::{vq_loss, GradientMode};

/// Term weights of `L = L_rgb + λ_perc L_perc + λ_vq L_vq`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub photometric: f64,
    pub perceptual: f64,
    pub vq: f64,
    /// Commitment weight inside the codebook loss.
    pub vq_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            photometric: 1.0,
            perceptual: 0.05,
            vq: 1.0,
            vq_beta: 0.25,
        }
    }
}

/// Unweighted term values and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub photometric: f64,
    pub perceptual: f64,
    pub vq: f64,
}

/// One training image with its camera geometry already resolved.
pub struct ObjectiveInput<'a, T> {
    pub geom: &'a ViewGeometry,
    /// `H x W x 3`.
    pub target: &'a [T],
    pub mask: Option<&'a [bool]>,
}

/// Renders the view, evaluates every loss term and backpropagates the
/// weighted total into a gradient for each trainable tensor.
///
/// The codebook term covers the texels this view reads. Terms with zero
/// weight are skipped entirely.
pub fn evaluate<T: Real>(
    params: &SceneParams<T>,
    config: &SceneConfig,
    input: &ObjectiveInput<'_, T>,
    weights: &LossWeights,
    perceptual: &dyn PerceptualLoss<T>,
    mode: GradientMode,
) -> Result<(LossReport, SceneGrads<T>)> {
    let geom = input.geom;
    let (w, h) = (geom.width, geom.height);
    let image = render_view(params, config, geom);

    let (photo, mut grad_image) = photometric_loss(w, h, &image, input.target, input.mask)?;
    let wp = T::lit(weights.photometric);
    grad_image.iter_mut().for_each(|g| *g *= wp);

    let mut perc = T::zero();
    if weights.perceptual != 0.0 {
        let (l, g) = perceptual.evaluate(w, h, &image, input.target, input.mask)?;
        perc = l;
        let s = T::lit(weights.perceptual);
        grad_image.iter_mut().zip(&g).for_each(|(a, b)| *a += s * *b);
    }

    let mut grads = backward_view(params, config, geom, &grad_image);
    route_quantized_gradients(&mut grads, params, mode);

    let mut vq = T::zero();
    if weights.vq != 0.0 {
        vq = add_vq_terms(params, geom, weights, mode, &mut grads)?;
    }

    let report = LossReport {
        total: weights.photometric * photo.as_f64() + weights.perceptual * perc.as_f64() + weights.vq * vq.as_f64(),
        photometric: photo.as_f64(),
        perceptual: perc.as_f64(),
        vq: vq.as_f64(),
    };
    Ok((report, grads))
}

fn add_vq_terms<T: Real>(
    params: &SceneParams<T>,
    geom: &ViewGeometry,
    weights: &LossWeights,
    mode: GradientMode,
    grads: &mut SceneGrads<T>,
) -> Result<T> {
    let scale = T::lit(weights.vq);
    let beta = T::lit(weights.vq_beta);
    let mut total = T::zero();
    if let Some(book) = &params.fg_codebook {
        let terms = vq_loss(&[(&params.atlas, &geom.surface_texels[..])], book, beta, mode)?;
        total += terms.loss();
        let mut g = terms.atlas_grads.into_iter().next().expect("one part");
        g.scale(scale);
        grads.atlas.add_assign(&g);
        accumulate(grads.fg_codebook.as_mut(), &terms.codebook_grad, scale)?;
    }
    if let Some(book) = &params.sky_codebook {
        let mut slots = Vec::new();
        let mut parts = Vec::new();
        for (slot, texels) in geom.sky_texels.iter().enumerate() {
            if !texels.is_empty() {
                slots.push(slot);
                parts.push((&params.skybox.layers[slot / 6].faces[slot % 6], &texels[..]));
            }
        }
        if !parts.is_empty() {
            let terms = vq_loss(&parts, book, beta, mode)?;
            total += terms.loss();
            for (slot, mut g) in slots.into_iter().zip(terms.atlas_grads) {
                g.scale(scale);
                grads.sky[slot].add_assign(&g);
            }
            accumulate(grads.sky_codebook.as_mut(), &terms.codebook_grad, scale)?;
        }
    }
    Ok(total)
}

fn accumulate<T: Real>(dst: Option<&mut Vec<T>>, src: &[T], scale: T) -> Result<()> {
    let dst = dst.ok_or_else(|| Error::invariant("codebook gradient", "missing for present codebook"))?;
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += scale * *b);
    Ok(())
}
