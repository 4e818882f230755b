//! Whole-view forward and backward passes: texel gathering, shading and
//! compositing per pixel, parallel over screen tiles.

use rayon::prelude::*;

use crate::grad::SceneGrads;
use crate::raster::{gather, tile_count, tile_rect, Footprint, Texels, ViewGeometry};
use crate::real::Real;
use crate::scene::{RenderLayer, RenderLayers, SceneConfig, SceneParams, SkyboxStack};
use crate::shader::composite::{composite_pixel, composite_pixel_backward};
use crate::shader::shade::{Scratch, Shaders, SkyTape, SurfaceTape};
use crate::shader::{BackgroundMlp, Mlp};
use crate::vq::{scatter_to_codebook, GradientMode};

struct Frame<'a, T> {
    shaders: Shaders<'a, T>,
    surface: Texels<'a, T>,
    /// Indexed by skybox slot.
    sky: Vec<Texels<'a, T>>,
    channels: usize,
    layers: usize,
}

impl<'a, T: Real> Frame<'a, T> {
    fn new(params: &'a SceneParams<T>, config: &SceneConfig) -> Self {
        let sky = params
            .skybox
            .layers
            .iter()
            .flat_map(|l| l.faces.iter().map(|f| Texels::of(f, params.sky_codebook.as_ref())))
            .collect();
        Frame {
            shaders: Shaders {
                fg: &params.fg_mlp,
                bg: &params.bg_mlp,
                shading: config.shading,
                encoding: config.arch.view_encoding,
            },
            surface: Texels::of(&params.atlas, params.fg_codebook.as_ref()),
            sky,
            channels: config.arch.feature_dim,
            layers: params.skybox.len(),
        }
    }
}

struct Workspace<T> {
    feature: Vec<T>,
    surface: SurfaceTape<T>,
    sky: Vec<SkyTape<T>>,
    colors: Vec<[T; 3]>,
    opacities: Vec<T>,
    grad_colors: Vec<[T; 3]>,
    grad_opacities: Vec<T>,
    grad_feature: Vec<T>,
    scratch: Scratch<T>,
}

impl<T: Real> Workspace<T> {
    fn new(channels: usize, layers: usize) -> Self {
        Workspace {
            feature: vec![T::zero(); channels],
            surface: SurfaceTape::default(),
            sky: vec![SkyTape::default(); layers],
            colors: Vec::with_capacity(layers),
            opacities: Vec::with_capacity(layers),
            grad_colors: vec![[T::zero(); 3]; layers],
            grad_opacities: vec![T::zero(); layers],
            grad_feature: Vec::with_capacity(channels),
            scratch: Scratch::default(),
        }
    }
}

#[inline]
fn dir_of<T: Real>(geom: &ViewGeometry, p: usize) -> [T; 3] {
    geom.dirs[p].map(T::lit)
}

impl<T: Real> Frame<'_, T> {
    /// Evaluates pixel `p`, leaving tapes in `ws` for the backward pass.
    fn pixel(&self, geom: &ViewGeometry, p: usize, ws: &mut Workspace<T>) -> [T; 3] {
        let d = dir_of(geom, p);
        if let Some(s) = &geom.surface[p] {
            gather(&self.surface, &s.footprint, &mut ws.feature);
            return self.shaders.surface_forward(&ws.feature, d, &mut ws.surface);
        }
        ws.colors.clear();
        ws.opacities.clear();
        if self.layers == 0 {
            return [T::zero(); 3];
        }
        let mut trans = T::one();
        for l in 0..self.layers {
            let s = &geom.sky[l][p];
            let src = &self.sky[SkyboxStack::<T>::slot(l, s.face as usize)];
            gather(src, &s.footprint, &mut ws.feature);
            let (mut o, c) = self.shaders.sky_forward(&ws.feature, d, &mut ws.sky[l]);
            if l + 1 == self.layers {
                o = T::one();
            }
            ws.colors.push(c);
            ws.opacities.push(o);
            trans *= T::one() - o;
            if trans == T::zero() {
                break;
            }
        }
        composite_pixel(&ws.colors, &ws.opacities)
    }
}

/// Per-tile gradient contributions, merged in tile order afterwards.
struct TileGrads<T> {
    fg_mlp: Mlp<T>,
    bg_mlp: BackgroundMlp<T>,
    surface_ids: Vec<u32>,
    surface_vals: Vec<T>,
    sky_ids: Vec<(u32, u32)>,
    sky_vals: Vec<T>,
}

fn scatter<T: Real>(fp: &Footprint, g: &[T], ids: &mut Vec<u32>, vals: &mut Vec<T>) {
    for k in 0..4 {
        let w = T::lit(fp.weights[k]);
        ids.push(fp.texels[k]);
        vals.extend(g.iter().map(|&x| w * x));
    }
}

/// Renders a view to an `H x W x 3` image.
pub fn render_view<T: Real>(params: &SceneParams<T>, config: &SceneConfig, geom: &ViewGeometry) -> Vec<T> {
    let frame = Frame::new(params, config);
    let (w, h) = (geom.width, geom.height);
    let tiles: Vec<Vec<[T; 3]>> = (0..tile_count(w, h))
        .into_par_iter()
        .map(|t| {
            let [x0, y0, x1, y1] = tile_rect(t, w, h);
            let mut ws = Workspace::new(frame.channels, frame.layers);
            let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    out.push(frame.pixel(geom, y * w + x, &mut ws));
                }
            }
            out
        })
        .collect();
    let mut image = vec![T::zero(); 3 * w * h];
    for (t, colors) in tiles.into_iter().enumerate() {
        let [x0, y0, x1, _] = tile_rect(t, w, h);
        let tw = x1 - x0;
        for (k, c) in colors.into_iter().enumerate() {
            let p = (y0 + k / tw) * w + x0 + k % tw;
            image[3 * p..3 * p + 3].copy_from_slice(&c);
        }
    }
    image
}

/// Gradients of `Σ grad_image · render_view(...)` with respect to every
/// parameter. Texel gradients are taken at the texels rendering reads
/// (codebook rows when quantized, see [`route_quantized_gradients`]).
pub fn backward_view<T: Real>(
    params: &SceneParams<T>,
    config: &SceneConfig,
    geom: &ViewGeometry,
    grad_image: &[T],
) -> SceneGrads<T> {
    let frame = Frame::new(params, config);
    let (w, h) = (geom.width, geom.height);
    let d = frame.channels;
    let tiles: Vec<TileGrads<T>> = (0..tile_count(w, h))
        .into_par_iter()
        .map(|t| {
            let [x0, y0, x1, y1] = tile_rect(t, w, h);
            let mut ws = Workspace::new(d, frame.layers);
            let mut tg = TileGrads {
                fg_mlp: params.fg_mlp.zeros_like(),
                bg_mlp: params.bg_mlp.zeros_like(),
                surface_ids: Vec::new(),
                surface_vals: Vec::new(),
                sky_ids: Vec::new(),
                sky_vals: Vec::new(),
            };
            let mut ids = Vec::with_capacity(4);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * w + x;
                    let g = [grad_image[3 * p], grad_image[3 * p + 1], grad_image[3 * p + 2]];
                    if g == [T::zero(); 3] {
                        continue;
                    }
                    frame.pixel(geom, p, &mut ws);
                    if let Some(s) = &geom.surface[p] {
                        frame.shaders.surface_backward(
                            &ws.surface,
                            g,
                            &mut tg.fg_mlp,
                            &mut ws.grad_feature,
                            &mut ws.scratch,
                            d,
                        );
                        scatter(&s.footprint, &ws.grad_feature, &mut tg.surface_ids, &mut tg.surface_vals);
                        continue;
                    }
                    let n = ws.colors.len();
                    composite_pixel_backward(
                        &ws.colors,
                        &ws.opacities,
                        g,
                        &mut ws.grad_colors[..n],
                        &mut ws.grad_opacities[..n],
                    );
                    for l in 0..n {
                        let go = if l + 1 == frame.layers { T::zero() } else { ws.grad_opacities[l] };
                        frame.shaders.sky_backward(
                            &ws.sky[l],
                            ws.grad_colors[l],
                            go,
                            &mut tg.bg_mlp,
                            &mut ws.grad_feature,
                            &mut ws.scratch,
                            d,
                        );
                        let s = &geom.sky[l][p];
                        let slot = SkyboxStack::<T>::slot(l, s.face as usize) as u32;
                        ids.clear();
                        scatter(&s.footprint, &ws.grad_feature, &mut ids, &mut tg.sky_vals);
                        tg.sky_ids.extend(ids.iter().map(|&t| (slot, t)));
                    }
                }
            }
            tg
        })
        .collect();

    let mut grads = SceneGrads::zeros_like(params);
    for tg in &tiles {
        grads.fg_mlp.add_assign(&tg.fg_mlp);
        grads.bg_mlp.add_assign(&tg.bg_mlp);
        for (i, &t) in tg.surface_ids.iter().enumerate() {
            grads.atlas.add(t, &tg.surface_vals[i * d..(i + 1) * d]);
        }
        for (i, &(slot, t)) in tg.sky_ids.iter().enumerate() {
            grads.sky[slot as usize].add(t, &tg.sky_vals[i * d..(i + 1) * d]);
        }
    }
    grads.atlas.finish();
    grads.sky.iter_mut().for_each(|g| g.finish());
    grads
}

/// Under [`GradientMode::Exact`], moves texel gradients of quantized
/// atlases onto the codebook rows they were read from. Straight-through
/// leaves them on the raw atlases.
pub fn route_quantized_gradients<T: Real>(grads: &mut SceneGrads<T>, params: &SceneParams<T>, mode: GradientMode) {
    if mode != GradientMode::Exact {
        return;
    }
    fn drain<T: Real>(g: &mut crate::grad::TexelGrad<T>) {
        let c = g.channels;
        for &t in &g.touched {
            g.data[t as usize * c..(t as usize + 1) * c].iter_mut().for_each(|v| *v = T::zero());
        }
        g.touched.clear();
    }
    if let (Some(book), Some(indices), Some(cg)) = (
        params.fg_codebook.as_ref(),
        params.atlas.indices(),
        grads.fg_codebook.as_mut(),
    ) {
        let moved = scatter_to_codebook(&grads.atlas, indices, book.len());
        cg.iter_mut().zip(&moved).for_each(|(a, b)| *a += *b);
        drain(&mut grads.atlas);
    }
    if let (Some(book), Some(cg)) = (params.sky_codebook.as_ref(), grads.sky_codebook.as_mut()) {
        for (slot, g) in grads.sky.iter_mut().enumerate() {
            let face = &params.skybox.layers[slot / 6].faces[slot % 6];
            if let Some(indices) = face.indices() {
                let moved = scatter_to_codebook(g, indices, book.len());
                cg.iter_mut().zip(&moved).for_each(|(a, b)| *a += *b);
                drain(g);
            }
        }
    }
}

/// Per-layer colors and opacities of a view: the mesh layer (hard coverage
/// mask) followed by every skybox layer, the farthest forced opaque. With no
/// skybox a black opaque layer closes the stack.
pub fn render_layers<T: Real>(params: &SceneParams<T>, config: &SceneConfig, geom: &ViewGeometry) -> RenderLayers<T> {
    let frame = Frame::new(params, config);
    let n = geom.pixel_count();
    let mut ws = Workspace::new(frame.channels, frame.layers);
    let mut fg = RenderLayer {
        color: vec![T::zero(); 3 * n],
        opacity: vec![T::zero(); n],
    };
    let mut sky: Vec<RenderLayer<T>> = (0..frame.layers.max(1))
        .map(|_| RenderLayer {
            color: vec![T::zero(); 3 * n],
            opacity: vec![T::one(); n],
        })
        .collect();
    for p in 0..n {
        let d = dir_of(geom, p);
        if let Some(s) = &geom.surface[p] {
            gather(&frame.surface, &s.footprint, &mut ws.feature);
            let c = frame.shaders.surface_forward(&ws.feature, d, &mut ws.surface);
            fg.color[3 * p..3 * p + 3].copy_from_slice(&c);
            fg.opacity[p] = T::one();
        }
        for l in 0..frame.layers {
            let s = &geom.sky[l][p];
            gather(&frame.sky[SkyboxStack::<T>::slot(l, s.face as usize)], &s.footprint, &mut ws.feature);
            let (o, c) = frame.shaders.sky_forward(&ws.feature, d, &mut ws.sky[l]);
            sky[l].color[3 * p..3 * p + 3].copy_from_slice(&c);
            sky[l].opacity[p] = if l + 1 == frame.layers { T::one() } else { o };
        }
    }
    let mut layers = vec![fg];
    layers.extend(sky);
    RenderLayers {
        width: geom.width,
        height: geom.height,
        layers,
    }
}
