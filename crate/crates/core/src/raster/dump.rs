//! Debug dump of the per-pixel buffers behind one render.
//!
//! Each buffer is written as a raw little-endian `f32` blob (`H x W x C`)
//! listed with its shape and checksum in `buffers.json`, plus PNG views:
//! the first three feature channels rescaled to `[0, 1]` over covered
//! pixels, coverage as black/white, and depth rescaled to `[0, 1]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob::{self, BlobInfo};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{rasterize_mesh, rasterize_skybox, FeatureBuffer, RasterOptions, Texels};
use crate::scene::{Camera, SceneState};

pub const BUFFERS_MANIFEST: &str = "buffers.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpedBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub blob: BlobInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferDump {
    /// `foreground.features`, `foreground.depth`, `sky_<l>.features`, ...
    pub buffers: BTreeMap<String, DumpedBuffer>,
    pub images: Vec<String>,
}

fn rescale(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f32 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    move |v| {
        if !(hi > lo) {
            0.0
        } else {
            ((v - lo) / (hi - lo)) as f32
        }
    }
}

fn dump_one(dir: &Path, name: &str, buf: &FeatureBuffer<f32>, out: &mut BufferDump) -> Result<()> {
    let (w, h, d) = (buf.width, buf.height, buf.channels);
    let mut put = |key: String, channels: usize, data: &[f32]| -> Result<()> {
        let info = blob::write(dir, &format!("{key}.f32"), data)?;
        out.buffers.insert(
            key,
            DumpedBuffer {
                width: w,
                height: h,
                channels,
                blob: info,
            },
        );
        Ok(())
    };
    put(format!("{name}.features"), d, &buf.features)?;
    let depth: Vec<f32> = buf.depth.iter().map(|&z| z as f32).collect();
    put(format!("{name}.depth"), 1, &depth)?;

    let covered = || (0..w * h).filter(|&p| buf.coverage[p]);
    let shown = d.min(3);
    let scale = rescale(covered().flat_map(|p| buf.feature(p)[..shown].iter().map(|&v| v as f64)));
    let features = Image::from_fn(w, h, |x, y| {
        let p = y * w + x;
        let mut c = [0.0; 3];
        if buf.coverage[p] {
            for (k, v) in buf.feature(p)[..shown].iter().enumerate() {
                c[k] = scale(*v as f64);
            }
        }
        c
    });
    let zscale = rescale(covered().map(|p| buf.depth[p]));
    let depth = Image::from_fn(w, h, |x, y| {
        let p = y * w + x;
        let z = if buf.coverage[p] { zscale(buf.depth[p]) } else { 0.0 };
        [z; 3]
    });
    let coverage = Image::from_fn(w, h, |x, y| [if buf.coverage[y * w + x] { 1.0 } else { 0.0 }; 3]);
    for (suffix, img) in [("features", features), ("depth", depth), ("coverage", coverage)] {
        let file = format!("{name}_{suffix}.png");
        img.write_png(&dir.join(&file))?;
        out.images.push(file);
    }
    Ok(())
}

/// Rasterizes the foreground and every skybox layer of `state` for `cam`
/// and writes the raw buffers into `dir`.
pub fn dump_buffers(state: &SceneState, cam: &Camera, dir: &Path) -> Result<BufferDump> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = &state.params;
    let mut out = BufferDump {
        buffers: BTreeMap::new(),
        images: Vec::new(),
    };
    let opts = RasterOptions {
        backface_culling: state.config.backface_culling,
    };
    let fg = rasterize_mesh(
        &state.mesh,
        Texels::of(&p.atlas, p.fg_codebook.as_ref()),
        p.atlas.height(),
        p.atlas.width(),
        cam,
        &opts,
    );
    dump_one(dir, "foreground", &fg, &mut out)?;
    for l in 0..p.skybox.len() {
        let (buf, _) = rasterize_skybox(&p.skybox, p.sky_codebook.as_ref(), l, cam)?;
        dump_one(dir, &format!("sky_{l}"), &buf, &mut out)?;
    }
    blob::write_json(&dir.join(BUFFERS_MANIFEST), &out)?;
    Ok(out)
}
