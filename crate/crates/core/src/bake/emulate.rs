//! CPU interpretation of a bundle: executes the draw list the way the
//! generated shaders do, reading only what the bundle stores.

use crate::bake::{Blend, Bundle, DrawItem, TextureData};
use crate::error::{Error, Result};
use crate::geom;
use crate::image::Image;
use crate::raster::{exit_hit, rasterize_fragments, view_directions, RasterOptions};
use crate::scene::{Camera, Shading};
use crate::shader::{shade_background, shade_flat, shade_foreground};
use crate::vq::Codebook;

/// Bilinear fetch with clamp-to-edge in shader order: mix along columns in
/// each row, then between rows. Offsets are computed in `f32` like a GPU.
fn sample(tex: &TextureData, book: Option<&Codebook<f32>>, uv: [f64; 2], out: &mut [f32]) {
    let (h, w) = (tex.height(), tex.width());
    let px = uv[0] as f32 * w as f32 - 0.5;
    let py = uv[1] as f32 * h as f32 - 0.5;
    let (bx, by) = (px.floor(), py.floor());
    let (fx, fy) = (px - bx, py - by);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let (x0, x1) = (clamp(bx as i64, w), clamp(bx as i64 + 1, w));
    let (y0, y1) = (clamp(by as i64, h), clamp(by as i64 + 1, h));
    let a = tex.feature(y0 * w + x0, book);
    let b = tex.feature(y0 * w + x1, book);
    let c = tex.feature(y1 * w + x0, book);
    let d = tex.feature(y1 * w + x1, book);
    let mix = |p: f32, q: f32, t: f32| p * (1.0 - t) + q * t;
    for i in 0..out.len() {
        out[i] = mix(mix(a[i], b[i], fx), mix(c[i], d[i], fx), fy);
    }
}

fn dir32(d: geom::Vec3) -> [f32; 3] {
    let v = d.map(|c| c as f32);
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

/// Renders `cam` from the bundle alone. Pixels start black; each draw item
/// either overwrites (`opaque`) or blends over the framebuffer.
pub fn emulate_bundle(bundle: &Bundle, cam: &Camera) -> Result<Image> {
    let m = &bundle.manifest;
    let origin = cam.center();
    let dirs = view_directions(cam);
    let n = dirs.len();
    let mut fb = vec![[0f32; 3]; n];
    let mut feature = vec![0f32; m.feature_dim];
    for item in &m.draw_list {
        match item {
            DrawItem::Sky { layer, blend, .. } => {
                let entry = m
                    .sky_layers
                    .get(*layer)
                    .ok_or_else(|| Error::invariant("draw_list", format!("sky layer {layer} not in bundle")))?;
                if !entry.bounds.contains(origin) {
                    return Err(Error::CameraOutside { layer: *layer });
                }
                for (p, &d) in dirs.iter().enumerate() {
                    let hit = exit_hit(&entry.bounds, origin, d);
                    let tex = &bundle.sky[*layer][hit.face.index()];
                    sample(tex, bundle.codebook_sky.as_ref(), hit.uv, &mut feature);
                    let dir = dir32(d);
                    let (o, c) = match m.shading {
                        Shading::Flat => shade_flat(&feature)?,
                        Shading::Neural => shade_background(&bundle.bg_mlp, m.view_encoding, &feature, dir)?,
                    };
                    let alpha = if *blend == Blend::Opaque { 1.0 } else { o };
                    for k in 0..3 {
                        fb[p][k] = c[k] * alpha + fb[p][k] * (1.0 - alpha);
                    }
                }
            }
            DrawItem::Mesh { depth_test, .. } => {
                let opts = RasterOptions {
                    backface_culling: m.mesh.backface_culling,
                };
                if !depth_test {
                    return Err(Error::invariant("draw_list", "mesh pass requires depth testing"));
                }
                for (p, frag) in rasterize_fragments(&bundle.mesh, cam, &opts).into_iter().enumerate() {
                    let Some(frag) = frag else { continue };
                    sample(&bundle.atlas, bundle.codebook_fg.as_ref(), frag.uv, &mut feature);
                    fb[p] = match m.shading {
                        Shading::Flat => shade_flat(&feature)?.1,
                        Shading::Neural => {
                            shade_foreground(&bundle.fg_mlp, m.view_encoding, &feature, dir32(dirs[p]))?
                        }
                    };
                }
            }
        }
    }
    let (w, h) = (cam.width() as usize, cam.height() as usize);
    Ok(Image {
        width: w,
        height: h,
        data: fb.into_iter().flatten().collect(),
    })
}
