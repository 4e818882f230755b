//! Export of a trained scene into a self-contained real-time bundle: index
//! and codebook textures (or float textures when unquantized), interleaved
//! mesh buffers, network weights, generated fragment shaders and a
//! back-to-front draw list.

mod emulate;
mod glsl;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blob::{self, BlobInfo};
use crate::error::{Error, Result};
use crate::scene::{sky_tensor_name, Cuboid, FeatureAtlas, SceneState, Shading, TexturedMesh};
use crate::shader::{Activation, BackgroundMlp, Dense, Mlp, ViewEncoding};
use crate::vq::Codebook;

pub use emulate::emulate_bundle;
pub use glsl::{foreground_shader, sky_shader, ShaderInputs, SHADING_LANGUAGE, WEIGHT_TEXTURE_WIDTH};
#[cfg(test)]
use glsl::lit as glsl_literal;

pub const BUNDLE_FORMAT: &str = "neutex-bundle";
pub const BUNDLE_VERSION: &str = "1.0.0";
pub const DEFAULT_MAX_TEXTURE_SIZE: usize = 8192;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BakeOptions {
    /// Store index maps plus codebooks; otherwise full float textures.
    pub quantized: bool,
    /// Largest texture edge the target supports; taller textures are split
    /// into row pages.
    pub max_texture_size: usize,
}

impl Default for BakeOptions {
    fn default() -> Self {
        BakeOptions {
            quantized: true,
            max_texture_size: DEFAULT_MAX_TEXTURE_SIZE,
        }
    }
}

/// Rows `[row_start, row_start + rows)` of a texture, stored in one blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TexturePage {
    pub row_start: usize,
    pub rows: usize,
    pub blob: String,
}

/// A feature texture: `u16` code indices when quantized, otherwise `f32`
/// features with channels innermost. Quantized GPU upload: one `R16UI`
/// texel per feature. Float upload: `ceil(D/4)` `RGBA32F` texels per
/// feature, side by side along the row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTexture {
    pub height: usize,
    pub width: usize,
    pub pages: Vec<TexturePage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkyLayerEntry {
    pub bounds: Cuboid,
    /// Indexed by face: +x, -x, +y, -y, +z, -z.
    pub faces: Vec<FeatureTexture>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshEntry {
    pub vertex_count: usize,
    pub index_count: usize,
    /// Interleaved per-vertex attributes followed by `u32` triangle indices.
    pub vertex_layout: String,
    pub index_offset_bytes: usize,
    pub backface_culling: bool,
    pub blob: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Weights and biases of every layer, concatenated in layer order (weights
/// row-major `outputs x inputs`, then biases). Shaders read the blob as an
/// `R32F` texture [`WEIGHT_TEXTURE_WIDTH`] values wide, zero-padded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub layers: Vec<LayerEntry>,
    pub blob: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkyNetworkEntry {
    pub trunk: Vec<LayerEntry>,
    pub opacity: LayerEntry,
    pub color: Vec<LayerEntry>,
    /// Trunk, opacity head, color head, each as in [`NetworkEntry`].
    pub blob: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaderEntry {
    pub blob: String,
    pub entry_point: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    /// `dst = src`.
    Opaque,
    /// `dst = src.rgb * src.a + dst * (1 - src.a)`.
    Over,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrawItem {
    Sky { layer: usize, blend: Blend, shader: String },
    Mesh { blend: Blend, shader: String, depth_test: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: String,
    pub shading_language: String,
    pub shading: Shading,
    pub feature_dim: usize,
    pub view_encoding: ViewEncoding,
    pub quantized: bool,
    pub codebook_size: Option<usize>,
    /// RGBA texels per feature in float and codebook textures:
    /// `ceil(feature_dim / 4)`, zero-padded. Codebook row `k` is texture row `k`.
    pub texel_groups: usize,
    pub max_texture_size: usize,
    pub atlas: FeatureTexture,
    pub codebook_fg: Option<String>,
    pub codebook_sky: Option<String>,
    pub sky_layers: Vec<SkyLayerEntry>,
    pub mesh: MeshEntry,
    pub network_fg: NetworkEntry,
    pub network_sky: SkyNetworkEntry,
    pub shader_fg: ShaderEntry,
    pub shader_sky: ShaderEntry,
    /// Executed in order: skybox layers far to near, then the mesh.
    pub draw_list: Vec<DrawItem>,
    pub blobs: BTreeMap<String, BlobInfo>,
}

impl BundleManifest {
    pub fn blob(&self, key: &str) -> Result<&BlobInfo> {
        self.blobs
            .get(key)
            .ok_or_else(|| Error::invariant(format!("manifest.blobs.{key}"), "missing entry"))
    }

    /// Total size of all blobs plus the manifest itself, in bytes.
    pub fn total_bytes(&self) -> usize {
        let blobs: usize = self
            .blobs
            .values()
            .map(|b| match b.dtype.as_str() {
                "u16" => 2 * b.len,
                "text" | "bytes" => b.len,
                _ => 4 * b.len,
            })
            .sum();
        blobs + serde_json::to_vec_pretty(self).map_or(0, |v| v.len())
    }
}

fn layer_entry<T>(d: &Dense<T>) -> LayerEntry {
    LayerEntry {
        inputs: d.inputs,
        outputs: d.outputs,
        activation: d.activation,
    }
}

fn flatten_layers<'a>(layers: impl Iterator<Item = &'a Dense<f32>>) -> Vec<f32> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weight);
        out.extend_from_slice(&l.bias);
    }
    out
}

struct Writer<'a> {
    dir: &'a Path,
    blobs: BTreeMap<String, BlobInfo>,
}

impl Writer<'_> {
    fn put<E: blob::Element>(&mut self, file: &str, values: &[E]) -> Result<String> {
        let info = blob::write(self.dir, file, values)?;
        self.blobs.insert(file.to_string(), info);
        Ok(file.to_string())
    }

    fn put_text(&mut self, file: &str, text: &str) -> Result<String> {
        let info = blob::write_bytes(self.dir, file, "text", text.len(), text.as_bytes())?;
        self.blobs.insert(file.to_string(), info);
        Ok(file.to_string())
    }

    /// Splits a `height x width` texture with `per_texel` elements per
    /// texel into row pages of at most `max_rows` rows.
    fn put_texture<E: blob::Element>(
        &mut self,
        stem: &str,
        ext: &str,
        height: usize,
        width: usize,
        per_texel: usize,
        values: &[E],
        max_rows: usize,
    ) -> Result<FeatureTexture> {
        let mut pages = Vec::new();
        let row_len = width * per_texel;
        let mut row = 0;
        while row < height {
            let rows = max_rows.min(height - row);
            let file = if row == 0 {
                format!("{stem}.{ext}")
            } else {
                format!("{stem}_p{}.{ext}", pages.len())
            };
            let blob = self.put(&file, &values[row * row_len..(row + rows) * row_len])?;
            pages.push(TexturePage {
                row_start: row,
                rows,
                blob,
            });
            row += rows;
        }
        Ok(FeatureTexture { height, width, pages })
    }
}

/// Features as rendered: codebook rows gathered by index when quantized.
fn rendered_features(atlas: &FeatureAtlas<f32>, book: Option<&Codebook<f32>>) -> Vec<f32> {
    match (atlas.indices(), book) {
        (Some(idx), Some(b)) => idx.iter().flat_map(|&k| b.code(k as usize).iter().copied()).collect(),
        _ => atlas.data().to_vec(),
    }
}

fn write_texture(
    w: &mut Writer<'_>,
    stem: &str,
    atlas: &FeatureAtlas<f32>,
    book: Option<&Codebook<f32>>,
    opts: &BakeOptions,
) -> Result<FeatureTexture> {
    let (h, wd, d) = (atlas.height(), atlas.width(), atlas.channels());
    if opts.quantized {
        if wd > opts.max_texture_size {
            return Err(Error::invariant(
                stem,
                format!("width {wd} exceeds the texture size limit {}", opts.max_texture_size),
            ));
        }
        let idx = atlas
            .indices()
            .ok_or_else(|| Error::invariant(stem, "quantized bake needs an index map"))?;
        w.put_texture(stem, "idx", h, wd, 1, idx, opts.max_texture_size)
    } else {
        let groups = d.div_ceil(4);
        if wd * groups > opts.max_texture_size {
            return Err(Error::invariant(
                stem,
                format!(
                    "float texture width {} exceeds the texture size limit {}",
                    wd * groups,
                    opts.max_texture_size
                ),
            ));
        }
        let data = rendered_features(atlas, book);
        w.put_texture(stem, "f32", h, wd, d, &data, opts.max_texture_size)
    }
}

/// Writes the bundle for `state` into `out` and returns its manifest.
pub fn bake(state: &SceneState, out: &Path, opts: &BakeOptions) -> Result<BundleManifest> {
    state.validate()?;
    if opts.max_texture_size == 0 {
        return Err(Error::InvalidArgument("max texture size must be > 0".into()));
    }
    let params = &state.params;
    if opts.quantized && params.fg_codebook.is_none() {
        return Err(Error::invariant(
            "bake",
            "the scene has no codebooks; train past the quantization warm-up or bake unquantized",
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut w = Writer {
        dir: out,
        blobs: BTreeMap::new(),
    };
    let d = state.config.arch.feature_dim;

    let atlas = write_texture(&mut w, "atlas_fg", &params.atlas, params.fg_codebook.as_ref(), opts)?;
    let mut sky_layers = Vec::new();
    for (l, layer) in params.skybox.layers.iter().enumerate() {
        if layer.faces.iter().any(|f| f.height() > opts.max_texture_size) {
            return Err(Error::invariant(
                format!("sky layer {l}"),
                "skybox faces must fit in a single texture page",
            ));
        }
        let faces = layer
            .faces
            .iter()
            .enumerate()
            .map(|(f, face)| write_texture(&mut w, &sky_tensor_name(l, f), face, params.sky_codebook.as_ref(), opts))
            .collect::<Result<Vec<_>>>()?;
        sky_layers.push(SkyLayerEntry {
            bounds: layer.bounds,
            faces,
        });
    }
    let (codebook_fg, codebook_sky) = if opts.quantized {
        let fg = params.fg_codebook.as_ref().expect("checked above");
        let sky = match &params.sky_codebook {
            Some(b) => Some(w.put("codebook_sky.f32", b.codes())?),
            None => None,
        };
        (Some(w.put("codebook_fg.f32", fg.codes())?), sky)
    } else {
        (None, None)
    };

    let mesh = &state.mesh;
    let mut vertex_words: Vec<f32> = Vec::with_capacity(mesh.positions.len() * 5);
    for (p, uv) in mesh.positions.iter().zip(&mesh.uvs) {
        vertex_words.extend_from_slice(p);
        vertex_words.extend_from_slice(uv);
    }
    let mut mesh_bytes = blob::encode(&vertex_words);
    let index_offset_bytes = mesh_bytes.len();
    let indices: Vec<u32> = mesh.faces.iter().flatten().copied().collect();
    mesh_bytes.extend_from_slice(&blob::encode(&indices));
    let info = blob::write_bytes(out, "mesh.bin", "bytes", mesh_bytes.len(), &mesh_bytes)?;
    w.blobs.insert("mesh.bin".into(), info);

    let fg = &params.fg_mlp;
    let bg = &params.bg_mlp;
    let network_fg = NetworkEntry {
        layers: fg.layers.iter().map(layer_entry).collect(),
        blob: w.put("mlp_fg.f32", &flatten_layers(fg.layers.iter()))?,
    };
    let sky_weights = flatten_layers(
        bg.trunk
            .layers
            .iter()
            .chain(std::iter::once(&bg.opacity))
            .chain(bg.color.layers.iter()),
    );
    let network_sky = SkyNetworkEntry {
        trunk: bg.trunk.layers.iter().map(layer_entry).collect(),
        opacity: layer_entry(&bg.opacity),
        color: bg.color.layers.iter().map(layer_entry).collect(),
        blob: w.put("mlp_sky.f32", &sky_weights)?,
    };

    let inputs = ShaderInputs {
        shading: state.config.shading,
        feature_dim: d,
        view_encoding: state.config.arch.view_encoding,
        quantized: opts.quantized,
        codebook_size: params.fg_codebook.as_ref().map(Codebook::len).filter(|_| opts.quantized),
        atlas: &atlas,
    };
    let fg_src = foreground_shader(&inputs, fg);
    let sky_face = sky_layers.first().map(|l| &l.faces[0]);
    let sky_src = sky_shader(&inputs, bg, sky_face);
    let shader_fg = ShaderEntry {
        blob: w.put_text("shade_fg.frag", &fg_src)?,
        entry_point: "main".into(),
    };
    let shader_sky = ShaderEntry {
        blob: w.put_text("shade_sky.frag", &sky_src)?,
        entry_point: "main".into(),
    };

    let n_layers = sky_layers.len();
    let mut draw_list: Vec<DrawItem> = (0..n_layers)
        .rev()
        .map(|layer| DrawItem::Sky {
            layer,
            blend: if layer + 1 == n_layers { Blend::Opaque } else { Blend::Over },
            shader: shader_sky.blob.clone(),
        })
        .collect();
    draw_list.push(DrawItem::Mesh {
        blend: Blend::Opaque,
        shader: shader_fg.blob.clone(),
        depth_test: true,
    });

    let manifest = BundleManifest {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION.into(),
        shading_language: SHADING_LANGUAGE.into(),
        shading: state.config.shading,
        feature_dim: d,
        view_encoding: state.config.arch.view_encoding,
        quantized: opts.quantized,
        codebook_size: inputs.codebook_size,
        texel_groups: d.div_ceil(4),
        max_texture_size: opts.max_texture_size,
        atlas,
        codebook_fg,
        codebook_sky,
        sky_layers,
        mesh: MeshEntry {
            vertex_count: mesh.positions.len(),
            index_count: indices.len(),
            vertex_layout: "position:f32x3,uv:f32x2".into(),
            index_offset_bytes,
            backface_culling: state.config.backface_culling,
            blob: "mesh.bin".into(),
        },
        network_fg,
        network_sky,
        shader_fg,
        shader_sky,
        draw_list,
        blobs: w.blobs,
    };
    blob::write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Decoded feature texture.
#[derive(Clone, Debug, PartialEq)]
pub enum TextureData {
    Indexed { height: usize, width: usize, indices: Vec<u16> },
    Float(FeatureAtlas<f32>),
}

impl TextureData {
    pub fn height(&self) -> usize {
        match self {
            TextureData::Indexed { height, .. } => *height,
            TextureData::Float(a) => a.height(),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            TextureData::Indexed { width, .. } => *width,
            TextureData::Float(a) => a.width(),
        }
    }

    /// Feature of texel `i`, dequantized through `book` when indexed.
    #[inline]
    pub fn feature<'a>(&'a self, i: usize, book: Option<&'a Codebook<f32>>) -> &'a [f32] {
        match self {
            TextureData::Indexed { indices, .. } => book.expect("indexed texture has a codebook").code(indices[i] as usize),
            TextureData::Float(a) => a.texel(i),
        }
    }

    /// Features of every texel as rendered.
    pub fn decode(&self, book: Option<&Codebook<f32>>) -> Vec<f32> {
        (0..self.height() * self.width())
            .flat_map(|i| self.feature(i, book).iter().copied())
            .collect()
    }
}

/// A bundle read back from disk with every blob verified.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub mesh: TexturedMesh,
    pub atlas: TextureData,
    pub sky: Vec<Vec<TextureData>>,
    pub codebook_fg: Option<Codebook<f32>>,
    pub codebook_sky: Option<Codebook<f32>>,
    pub fg_mlp: Mlp<f32>,
    pub bg_mlp: BackgroundMlp<f32>,
    pub shader_fg: String,
    pub shader_sky: String,
}

fn read_texture(dir: &Path, m: &BundleManifest, tex: &FeatureTexture, what: &str) -> Result<TextureData> {
    let d = m.feature_dim;
    let per_texel = if m.quantized { 1 } else { d };
    let mut expected_row = 0;
    for p in &tex.pages {
        if p.row_start != expected_row {
            return Err(Error::invariant(format!("{what} pages"), "pages must tile the rows in order"));
        }
        expected_row += p.rows;
    }
    if expected_row != tex.height {
        return Err(Error::dimension(format!("{what} page rows"), tex.height, expected_row));
    }
    let n = tex.height * tex.width * per_texel;
    if m.quantized {
        let mut indices = Vec::with_capacity(n);
        for p in &tex.pages {
            indices.extend(blob::read::<u16>(dir, m.blob(&p.blob)?)?);
        }
        if indices.len() != n {
            return Err(Error::dimension(what.to_string(), n, indices.len()));
        }
        let k = m.codebook_size.unwrap_or(0);
        if let Some(bad) = indices.iter().find(|&&i| i as usize >= k) {
            return Err(Error::invariant(what.to_string(), format!("index {bad} >= codebook size {k}")));
        }
        Ok(TextureData::Indexed {
            height: tex.height,
            width: tex.width,
            indices,
        })
    } else {
        let mut data = Vec::with_capacity(n);
        for p in &tex.pages {
            data.extend(blob::read::<f32>(dir, m.blob(&p.blob)?)?);
        }
        if data.len() != n {
            return Err(Error::dimension(what.to_string(), n, data.len()));
        }
        Ok(TextureData::Float(FeatureAtlas::new(tex.height, tex.width, d, data)?))
    }
}

fn read_layers(values: &[f32], entries: &[LayerEntry], offset: &mut usize, what: &str) -> Result<Vec<Dense<f32>>> {
    let mut layers = Vec::new();
    for (k, e) in entries.iter().enumerate() {
        let nw = e.inputs * e.outputs;
        let end = *offset + nw + e.outputs;
        if end > values.len() {
            return Err(Error::dimension(format!("{what} weights"), end, values.len()));
        }
        let layer = Dense {
            inputs: e.inputs,
            outputs: e.outputs,
            weight: values[*offset..*offset + nw].to_vec(),
            bias: values[*offset + nw..end].to_vec(),
            activation: e.activation,
        };
        layer.validate(&format!("{what}.l{k}"))?;
        layers.push(layer);
        *offset = end;
    }
    Ok(layers)
}

fn read_codebook(dir: &Path, m: &BundleManifest, key: Option<&String>) -> Result<Option<Codebook<f32>>> {
    key.map(|k| Codebook::new(m.feature_dim, blob::read::<f32>(dir, m.blob(k)?)?))
        .transpose()
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let m: BundleManifest = blob::read_json(&dir.join(MANIFEST))?;
    if m.format != BUNDLE_FORMAT {
        return Err(Error::invariant("manifest.format", format!("expected `{BUNDLE_FORMAT}`, got `{}`", m.format)));
    }
    let supported = blob::major_version(BUNDLE_VERSION).expect("valid version constant");
    if blob::major_version(&m.version) != Some(supported) {
        return Err(Error::Version {
            what: "bundle",
            found: m.version.clone(),
            supported,
        });
    }
    if m.quantized && (m.codebook_fg.is_none() || m.codebook_size.is_none()) {
        return Err(Error::invariant("manifest.codebook_fg", "quantized bundle without codebook"));
    }

    let bytes = blob::read_bytes(dir, m.blob(&m.mesh.blob)?)?;
    let vsize = 20 * m.mesh.vertex_count;
    if m.mesh.index_offset_bytes != vsize || bytes.len() != vsize + 4 * m.mesh.index_count {
        return Err(Error::dimension("mesh.bin bytes", vsize + 4 * m.mesh.index_count, bytes.len()));
    }
    let floats: Vec<f32> = bytes[..vsize].chunks_exact(4).map(<f32 as blob::Element>::get).collect();
    let idx: Vec<u32> = bytes[vsize..].chunks_exact(4).map(<u32 as blob::Element>::get).collect();
    let mesh = TexturedMesh::new(
        floats.chunks_exact(5).map(|v| [v[0], v[1], v[2]]).collect(),
        floats.chunks_exact(5).map(|v| [v[3], v[4]]).collect(),
        idx.chunks_exact(3).map(|f| [f[0], f[1], f[2]]).collect(),
    )?;

    let atlas = read_texture(dir, &m, &m.atlas, "atlas_fg")?;
    let sky = m
        .sky_layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            if layer.faces.len() != 6 {
                return Err(Error::dimension(format!("sky layer {l} faces"), 6, layer.faces.len()));
            }
            layer
                .faces
                .iter()
                .enumerate()
                .map(|(f, t)| read_texture(dir, &m, t, &sky_tensor_name(l, f)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let codebook_fg = read_codebook(dir, &m, m.codebook_fg.as_ref())?;
    let codebook_sky = read_codebook(dir, &m, m.codebook_sky.as_ref())?;
    if m.quantized && !sky.is_empty() && codebook_sky.is_none() {
        return Err(Error::invariant("manifest.codebook_sky", "quantized skybox without codebook"));
    }

    let fg_values = blob::read::<f32>(dir, m.blob(&m.network_fg.blob)?)?;
    let mut off = 0;
    let fg_mlp = Mlp::new(read_layers(&fg_values, &m.network_fg.layers, &mut off, "mlp_fg")?)?;
    let sky_values = blob::read::<f32>(dir, m.blob(&m.network_sky.blob)?)?;
    let mut off = 0;
    let trunk = Mlp::new(read_layers(&sky_values, &m.network_sky.trunk, &mut off, "mlp_sky.trunk")?)?;
    let opacity = read_layers(&sky_values, std::slice::from_ref(&m.network_sky.opacity), &mut off, "mlp_sky.opacity")?
        .pop()
        .expect("one layer");
    let color = Mlp::new(read_layers(&sky_values, &m.network_sky.color, &mut off, "mlp_sky.color")?)?;
    let bg_mlp = BackgroundMlp { trunk, opacity, color };
    bg_mlp.validate("mlp_sky")?;

    let text = |key: &str| -> Result<String> {
        String::from_utf8(blob::read_bytes(dir, m.blob(key)?)?)
            .map_err(|_| Error::invariant(format!("blob `{key}`"), "not valid UTF-8"))
    };
    let shader_fg = text(&m.shader_fg.blob)?;
    let shader_sky = text(&m.shader_sky.blob)?;
    Ok(Bundle {
        manifest: m,
        mesh,
        atlas,
        sky,
        codebook_fg,
        codebook_sky,
        fg_mlp,
        bg_mlp,
        shader_fg,
        shader_sky,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::synthetic::{ring_camera, toy_scene, ToyScene, ToySceneConfig};
    use crate::train::{init_codebooks, prepare_views, render_camera, TrainConfig};

    fn small(shading: Shading) -> ToyScene {
        let cfg = ToySceneConfig {
            width: 24,
            height: 24,
            train_views: 4,
            heldout_views: 1,
            chart_texels: 10,
            sky_resolution: 8,
            codebook_size: 16,
            shading,
            ..Default::default()
        };
        let mut toy = toy_scene(&cfg, TrainConfig::default()).unwrap();
        let views = prepare_views(&toy.state, &toy.train).unwrap();
        let refs: Vec<&_> = views.iter().collect();
        init_codebooks(&mut toy.state, &refs).unwrap();
        toy
    }

    fn max_abs_diff(a: &Image, b: &Image) -> f32 {
        assert_eq!((a.width, a.height), (b.width, b.height));
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    fn check_fidelity(state: &SceneState, opts: &BakeOptions) -> Bundle {
        let dir = tempfile::tempdir().unwrap();
        bake(state, dir.path(), opts).unwrap();
        let bundle = load_bundle(dir.path()).unwrap();
        for (az, el) in [(0.3, 0.2), (2.0, -0.1), (4.1, 0.4)] {
            let cam = ring_camera(az, el, 24, 24).unwrap();
            let reference = render_camera(state, &cam).unwrap();
            let emulated = emulate_bundle(&bundle, &cam).unwrap();
            let diff = max_abs_diff(&reference, &emulated);
            assert!(diff <= 2.0 / 255.0, "max diff {diff} at az {az}");
        }
        bundle
    }

    fn rendered(atlas: &FeatureAtlas<f32>, book: Option<&Codebook<f32>>) -> Vec<f32> {
        rendered_features(atlas, book)
    }

    #[test]
    fn quantized_bundle_decodes_to_rendered_features() {
        let toy = small(Shading::Neural);
        let p = &toy.state.params;
        let bundle = check_fidelity(&toy.state, &BakeOptions::default());
        assert!(matches!(bundle.atlas, TextureData::Indexed { .. }));
        assert_eq!(bundle.atlas.decode(bundle.codebook_fg.as_ref()), rendered(&p.atlas, p.fg_codebook.as_ref()));
        for (l, layer) in p.skybox.layers.iter().enumerate() {
            for (f, face) in layer.faces.iter().enumerate() {
                assert_eq!(
                    bundle.sky[l][f].decode(bundle.codebook_sky.as_ref()),
                    rendered(face, p.sky_codebook.as_ref())
                );
            }
        }
        assert_eq!(bundle.fg_mlp, p.fg_mlp);
        assert_eq!(bundle.bg_mlp, p.bg_mlp);
        assert_eq!(bundle.mesh, toy.state.mesh);
    }

    #[test]
    fn unquantized_bundle_matches_reference() {
        let toy = small(Shading::Neural);
        let opts = BakeOptions {
            quantized: false,
            ..Default::default()
        };
        let bundle = check_fidelity(&toy.state, &opts);
        assert!(bundle.codebook_fg.is_none());
        let p = &toy.state.params;
        assert_eq!(bundle.atlas.decode(None), rendered(&p.atlas, p.fg_codebook.as_ref()));
    }

    #[test]
    fn flat_shading_bundle_matches_reference() {
        let toy = small(Shading::Flat);
        check_fidelity(&toy.state, &BakeOptions::default());
    }

    #[test]
    fn tall_atlas_is_paged_by_rows() {
        use rand::{Rng, SeedableRng};
        let mut toy = small(Shading::Neural);
        // UVs are resolution independent, so any atlas shape renders.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = toy.state.config.arch.feature_dim;
        let data = (0..50 * 8 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut atlas = FeatureAtlas::new(50, 8, d, data).unwrap();
        crate::vq::assign_texels(&mut atlas, toy.state.params.fg_codebook.as_ref().unwrap(), &[]).unwrap();
        toy.state.params.atlas = atlas;
        toy.state.progress = Default::default();
        let opts = BakeOptions {
            quantized: true,
            max_texture_size: 20,
        };
        let bundle = check_fidelity(&toy.state, &opts);
        let m = &bundle.manifest;
        let rows: Vec<usize> = m.atlas.pages.iter().map(|p| p.rows).collect();
        assert_eq!(rows, vec![20, 20, 10]);
        assert_eq!(m.atlas.pages[1].blob, "atlas_fg_p1.idx");
        for p in 0..3 {
            assert!(bundle.shader_fg.contains(&format!("uniform usampler2D atlas_p{p};")));
        }
        let p = &toy.state.params;
        assert_eq!(bundle.atlas.decode(bundle.codebook_fg.as_ref()), rendered(&p.atlas, p.fg_codebook.as_ref()));
    }

    #[test]
    fn oversized_texture_is_rejected() {
        let toy = small(Shading::Neural);
        let dir = tempfile::tempdir().unwrap();
        let opts = BakeOptions {
            quantized: false,
            max_texture_size: 64,
        };
        // 3 RGBA texels per feature make the float atlas wider than 64.
        let err = bake(&toy.state, dir.path(), &opts).unwrap_err();
        assert!(err.to_string().contains("atlas_fg"), "{err}");
    }

    #[test]
    fn quantized_bake_needs_codebooks() {
        let cfg = ToySceneConfig {
            chart_texels: 4,
            sky_resolution: 4,
            train_views: 1,
            heldout_views: 0,
            width: 8,
            height: 8,
            ..Default::default()
        };
        let toy = toy_scene(&cfg, TrainConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(bake(&toy.state, dir.path(), &BakeOptions::default()).is_err());
        let opts = BakeOptions {
            quantized: false,
            ..Default::default()
        };
        bake(&toy.state, dir.path(), &opts).unwrap();
    }

    #[test]
    fn corrupt_blob_is_named() {
        let toy = small(Shading::Neural);
        let dir = tempfile::tempdir().unwrap();
        bake(&toy.state, dir.path(), &BakeOptions::default()).unwrap();
        let path = dir.path().join("codebook_fg.f32");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::Checksum { blob }) => assert_eq!(blob, "codebook_fg.f32"),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn newer_major_version_is_refused() {
        let toy = small(Shading::Neural);
        let dir = tempfile::tempdir().unwrap();
        let mut m = bake(&toy.state, dir.path(), &BakeOptions::default()).unwrap();
        m.version = "2.0.0".into();
        blob::write_json(&dir.path().join(MANIFEST), &m).unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Version { .. })));
    }

    #[test]
    fn draw_list_runs_far_to_near_then_mesh() {
        let toy = small(Shading::Neural);
        let dir = tempfile::tempdir().unwrap();
        let m = bake(&toy.state, dir.path(), &BakeOptions::default()).unwrap();
        assert_eq!(
            m.draw_list,
            vec![
                DrawItem::Sky {
                    layer: 1,
                    blend: Blend::Opaque,
                    shader: "shade_sky.frag".into()
                },
                DrawItem::Sky {
                    layer: 0,
                    blend: Blend::Over,
                    shader: "shade_sky.frag".into()
                },
                DrawItem::Mesh {
                    blend: Blend::Opaque,
                    shader: "shade_fg.frag".into(),
                    depth_test: true
                },
            ]
        );
    }

    #[test]
    fn empty_mesh_renders_background_only() {
        let mut toy = small(Shading::Neural);
        toy.state.mesh.faces.clear();
        let cam = ring_camera(1.0, 0.1, 24, 24).unwrap();
        let reference = render_camera(&toy.state, &cam).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bake(&toy.state, dir.path(), &BakeOptions::default()).unwrap();
        let bundle = load_bundle(dir.path()).unwrap();
        assert_eq!(bundle.manifest.mesh.index_count, 0);
        let emulated = emulate_bundle(&bundle, &cam).unwrap();
        assert!(max_abs_diff(&reference, &emulated) <= 2.0 / 255.0);
    }

    #[test]
    fn far_layer_alone_renders_pure_skybox() {
        let mut toy = small(Shading::Neural);
        toy.state.mesh.faces.clear();
        toy.state.params.skybox.layers.remove(0);
        toy.state.params.sky_codebook = None;
        for layer in &mut toy.state.params.skybox.layers {
            for face in &mut layer.faces {
                face.clear_indices();
            }
        }
        let opts = BakeOptions {
            quantized: false,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let m = bake(&toy.state, dir.path(), &opts).unwrap();
        assert_eq!(m.draw_list.len(), 2);
        let bundle = load_bundle(dir.path()).unwrap();
        let cam = ring_camera(0.5, 0.0, 24, 24).unwrap();
        let emulated = emulate_bundle(&bundle, &cam).unwrap();
        // Only the opaque far layer contributes: each pixel is its color.
        let face = &bundle.sky[0];
        assert_eq!(face.len(), 6);
        let reference = render_camera(&toy.state, &cam).unwrap();
        assert!(max_abs_diff(&reference, &emulated) <= 2.0 / 255.0);
        assert!(emulated.is_finite());
    }

    #[test]
    fn shaders_are_deterministic_and_self_describing() {
        let toy = small(Shading::Neural);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = bake(&toy.state, a.path(), &BakeOptions::default()).unwrap();
        let mb = bake(&toy.state, b.path(), &BakeOptions::default()).unwrap();
        assert_eq!(ma, mb);
        let ba = load_bundle(a.path()).unwrap();
        let fg = &ba.shader_fg;
        let sky = &ba.shader_sky;
        for src in [fg, sky] {
            assert!(src.starts_with("#version 300 es\n"));
            assert_eq!(src.matches("void main()").count(), 1);
            assert_eq!(src.matches('{').count(), src.matches('}').count());
            assert_eq!(src.matches('(').count(), src.matches(')').count());
            assert!(!src.contains("NaN") && !src.contains("inf"));
            // Loop counters never shadow the arrays they index.
            for decl in src.lines().filter_map(|l| l.trim().strip_prefix("float ")) {
                let name = decl.split(['[', ' ', ';']).next().unwrap();
                assert!(!["r", "c", "i"].contains(&name), "array `{name}` shadows a loop counter");
            }
        }
        // The last foreground layer's bias sits at the end of the weight blob.
        let total: usize = toy.state.params.fg_mlp.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        let last = toy.state.params.fg_mlp.layers.last().unwrap();
        assert!(fg.contains(&format!("weight(u_weights_fg, {} + r)", total - last.outputs)));
        assert!(fg.contains("uniform sampler2D u_weights_fg;"));
        assert!(sky.contains("uniform sampler2D u_weights_sky;"));
        assert!(fg.contains("uniform sampler2D u_codebook_fg;"));
        assert!(sky.contains("uniform sampler2D u_codebook_sky;"));
        assert!(sky.contains("uniform bool u_opaque;"));
        for n in ["px", "nx", "py", "ny", "pz", "nz"] {
            assert!(sky.contains(&format!("uniform usampler2D face_{n}_p0;")));
        }
    }

    /// Compiles every shader variant with an external reference compiler
    /// when `GLSLANG_VALIDATOR` names one; otherwise only the structural
    /// checks above apply.
    #[test]
    fn shaders_compile_with_reference_validator() {
        let Some(validator) = std::env::var_os("GLSLANG_VALIDATOR") else {
            eprintln!("GLSLANG_VALIDATOR not set; skipping compilation check");
            return;
        };
        for shading in [Shading::Neural, Shading::Flat] {
            for quantized in [true, false] {
                let toy = small(shading);
                let dir = tempfile::tempdir().unwrap();
                let opts = BakeOptions {
                    quantized,
                    ..Default::default()
                };
                bake(&toy.state, dir.path(), &opts).unwrap();
                for file in ["shade_fg.frag", "shade_sky.frag"] {
                    let out = std::process::Command::new(&validator)
                        .arg(dir.path().join(file))
                        .output()
                        .unwrap();
                    assert!(
                        out.status.success(),
                        "{file} ({shading:?}, quantized {quantized}):\n{}",
                        String::from_utf8_lossy(&out.stdout)
                    );
                }
            }
        }
    }

    #[test]
    fn glsl_literals_round_trip() {
        for v in [0.0f32, 1.0, -2.5, 1e-7, 3.4e38, -0.1, 123456.0] {
            let s = glsl_literal(v);
            assert!(s.contains('.') || s.contains('e'), "{s}");
            assert_eq!(s.parse::<f32>().unwrap(), v);
        }
    }
}
