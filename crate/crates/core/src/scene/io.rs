//! Checkpoint directory: `manifest.json` plus one checksummed blob per
//! tensor, index map, codebook usage counter, optimizer moment and mesh
//! buffer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blob::{self, BlobInfo};
use crate::error::{Error, Result};
use crate::scene::state::{sky_tensor_name, SceneConfig, SceneParams, SceneState, TrainProgress};
use crate::scene::{Cuboid, FeatureAtlas, SkyLayer, SkyboxStack, TexturedMesh};
use crate::train::{AdamState, Moments, TrainConfig};
use crate::vq::Codebook;

pub const SCENE_FORMAT: &str = "neutex-scene";
pub const SCENE_VERSION: &str = "1.0.0";
const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct SkyLayerRecord {
    bounds: Cuboid,
    resolution: usize,
}

#[derive(Serialize, Deserialize)]
struct SceneManifest {
    format: String,
    version: String,
    config: SceneConfig,
    train: TrainConfig,
    step: u64,
    atlas_height: usize,
    atlas_width: usize,
    sky_layers: Vec<SkyLayerRecord>,
    /// Codebook size when codebooks exist.
    codebook_size: Option<usize>,
    blobs: BTreeMap<String, BlobInfo>,
}

fn flatten<const N: usize, E: Copy>(v: &[[E; N]]) -> Vec<E> {
    v.iter().flatten().copied().collect()
}

fn chunk<const N: usize, E: Copy + Default>(v: &[E]) -> Vec<[E; N]> {
    v.chunks_exact(N)
        .map(|c| {
            let mut a = [E::default(); N];
            a.copy_from_slice(c);
            a
        })
        .collect()
}

/// Writes `state` into `dir`, creating it if needed. Existing files with
/// the same names are replaced.
pub fn save_scene(state: &SceneState, dir: &Path) -> Result<()> {
    state.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blobs = BTreeMap::new();
    let mut put = |key: String, info: BlobInfo| {
        blobs.insert(key, info);
    };
    let mesh = &state.mesh;
    put("mesh_positions".into(), blob::write(dir, "mesh_positions.f32", &flatten(&mesh.positions))?);
    put("mesh_uvs".into(), blob::write(dir, "mesh_uvs.f32", &flatten(&mesh.uvs))?);
    put("mesh_faces".into(), blob::write(dir, "mesh_faces.u32", &flatten(&mesh.faces))?);

    let params = &state.params;
    for (name, data) in params.tensors() {
        let file = format!("{name}.f32");
        put(name, blob::write(dir, &file, data)?);
    }
    let mut index_maps: Vec<(String, &FeatureAtlas<f32>)> = vec![("atlas_fg".into(), &params.atlas)];
    for (l, layer) in params.skybox.layers.iter().enumerate() {
        for (f, face) in layer.faces.iter().enumerate() {
            index_maps.push((sky_tensor_name(l, f), face));
        }
    }
    for (name, atlas) in index_maps {
        if let Some(idx) = atlas.indices() {
            put(format!("{name}.idx"), blob::write(dir, &format!("{name}.idx"), idx)?);
        }
    }
    for (name, book) in [("codebook_fg", &params.fg_codebook), ("codebook_sky", &params.sky_codebook)] {
        if let Some(b) = book {
            put(format!("{name}.idle"), blob::write(dir, &format!("{name}.idle"), b.idle())?);
        }
    }
    for (name, m) in &state.progress.adam.moments {
        put(format!("adam_m.{name}"), blob::write(dir, &format!("adam_m.{name}.f32"), &m.m)?);
        put(format!("adam_v.{name}"), blob::write(dir, &format!("adam_v.{name}.f32"), &m.v)?);
    }

    let manifest = SceneManifest {
        format: SCENE_FORMAT.into(),
        version: SCENE_VERSION.into(),
        config: state.config.clone(),
        train: state.train.clone(),
        step: state.progress.step,
        atlas_height: params.atlas.height(),
        atlas_width: params.atlas.width(),
        sky_layers: params
            .skybox
            .layers
            .iter()
            .map(|l| SkyLayerRecord {
                bounds: l.bounds,
                resolution: l.faces[0].height(),
            })
            .collect(),
        codebook_size: params.fg_codebook.as_ref().map(Codebook::len),
        blobs,
    };
    blob::write_json(&dir.join(MANIFEST), &manifest)
}

fn blob_of<'a>(blobs: &'a BTreeMap<String, BlobInfo>, key: &str) -> Result<&'a BlobInfo> {
    blobs
        .get(key)
        .ok_or_else(|| Error::invariant(format!("manifest.blobs.{key}"), "missing entry"))
}

pub fn load_scene(dir: &Path) -> Result<SceneState> {
    let manifest: SceneManifest = blob::read_json(&dir.join(MANIFEST))?;
    if manifest.format != SCENE_FORMAT {
        return Err(Error::invariant("manifest.format", format!("expected `{SCENE_FORMAT}`, got `{}`", manifest.format)));
    }
    let supported = blob::major_version(SCENE_VERSION).expect("valid version constant");
    if blob::major_version(&manifest.version) != Some(supported) {
        return Err(Error::Version {
            what: "scene",
            found: manifest.version,
            supported,
        });
    }
    let config = manifest.config;
    config.validate()?;
    let blobs = &manifest.blobs;
    let d = config.arch.feature_dim;

    let mesh = TexturedMesh::new(
        chunk(&blob::read::<f32>(dir, blob_of(blobs, "mesh_positions")?)?),
        chunk(&blob::read::<f32>(dir, blob_of(blobs, "mesh_uvs")?)?),
        chunk(&blob::read::<u32>(dir, blob_of(blobs, "mesh_faces")?)?),
    )?;

    // Shape-only skeleton, every value is overwritten from blobs below.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layers = manifest
        .sky_layers
        .iter()
        .map(|r| SkyLayer::zeros(r.bounds, r.resolution, d))
        .collect::<Result<Vec<_>>>()?;
    let book = |k: usize| Codebook::new(d, vec![0.0f32; k * d]);
    let has_sky = !layers.is_empty();
    let mut params = SceneParams {
        atlas: FeatureAtlas::zeros(manifest.atlas_height, manifest.atlas_width, d)?,
        skybox: SkyboxStack { layers },
        fg_mlp: config.arch.foreground(&mut rng),
        bg_mlp: config.arch.background(&mut rng),
        fg_codebook: manifest.codebook_size.map(book).transpose()?,
        sky_codebook: manifest.codebook_size.filter(|_| has_sky).map(book).transpose()?,
    };
    for (name, data) in params.tensors_mut() {
        let values = blob::read::<f32>(dir, blob_of(blobs, &name)?)?;
        if values.len() != data.len() {
            return Err(Error::dimension(format!("tensor {name}"), data.len(), values.len()));
        }
        data.copy_from_slice(&values);
    }
    if let Some(k) = manifest.codebook_size {
        let idx = blob::read::<u16>(dir, blob_of(blobs, "atlas_fg.idx")?)?;
        params.atlas.set_indices(idx, k)?;
        for l in 0..params.skybox.len() {
            for f in 0..6 {
                let key = format!("{}.idx", sky_tensor_name(l, f));
                let idx = blob::read::<u16>(dir, blob_of(blobs, &key)?)?;
                params.skybox.layers[l].faces[f].set_indices(idx, k)?;
            }
        }
        for (name, b) in [("codebook_fg", &mut params.fg_codebook), ("codebook_sky", &mut params.sky_codebook)] {
            if let Some(b) = b.as_mut() {
                b.set_idle(blob::read::<u32>(dir, blob_of(blobs, &format!("{name}.idle"))?)?)?;
            }
        }
    }

    let mut adam = AdamState::default();
    for key in blobs.keys() {
        if let Some(name) = key.strip_prefix("adam_m.") {
            let m = blob::read::<f32>(dir, &blobs[key])?;
            let v = blob::read::<f32>(dir, blob_of(blobs, &format!("adam_v.{name}"))?)?;
            if m.len() != v.len() {
                return Err(Error::dimension(format!("adam_v.{name}"), m.len(), v.len()));
            }
            adam.moments.insert(name.to_string(), Moments { m, v });
        }
    }

    let state = SceneState {
        mesh,
        config,
        params,
        train: manifest.train,
        progress: TrainProgress {
            step: manifest.step,
            adam,
        },
    };
    state.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{QuantizationConfig, SceneInit};
    use crate::shader::ShaderArch;

    fn small_state(quantized: bool) -> SceneState {
        let mesh = TexturedMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0.1, 0.1], [0.9, 0.1], [0.1, 0.9]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let config = SceneConfig {
            arch: ShaderArch {
                feature_dim: 4,
                hidden: vec![8, 8],
                view_encoding: Default::default(),
            },
            quantization: QuantizationConfig {
                enabled: true,
                codebook_size: 8,
            },
            ..SceneConfig::default()
        };
        let init = SceneInit {
            atlas_height: 4,
            atlas_width: 4,
            sky_layers: vec![Cuboid {
                center: [0.0; 3],
                half_extents: [5.0; 3],
            }],
            sky_resolution: 2,
            init_scale: 0.5,
            seed: 7,
        };
        let mut s = SceneState::initialize(mesh, config, TrainConfig::default(), &init).unwrap();
        s.progress.step = 42;
        s.progress.adam.update_dense("mlp_fg.l0.bias", &mut [0.0; 8], &[1.0; 8], 0.1, 1, &Default::default());
        if quantized {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let book = Codebook::sample_from(&s.params.atlas, &[], 8, &mut rng).unwrap();
            crate::vq::assign_texels(&mut s.params.atlas, &book, &[]).unwrap();
            s.params.fg_codebook = Some(book);
            let mut sky = Codebook::sample_from(&s.params.skybox.layers[0].faces[0], &[], 8, &mut rng).unwrap();
            sky.set_idle(vec![3; 8]).unwrap();
            for f in &mut s.params.skybox.layers[0].faces {
                crate::vq::assign_texels(f, &sky, &[]).unwrap();
            }
            s.params.sky_codebook = Some(sky);
        }
        s
    }

    #[test]
    fn round_trip_is_bitwise() {
        for q in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let s = small_state(q);
            save_scene(&s, dir.path()).unwrap();
            assert_eq!(load_scene(dir.path()).unwrap(), s);
        }
    }

    #[test]
    fn corrupt_blob_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&small_state(false), dir.path()).unwrap();
        std::fs::write(dir.path().join("atlas_fg.f32"), [0u8; 4]).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Checksum { blob } if blob == "atlas_fg.f32"), "{err}");
    }

    #[test]
    fn unknown_major_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&small_state(false), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap().replace("\"1.0.0\"", "\"2.0.0\"");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::Version { .. })));
    }

    #[test]
    fn missing_blob_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&small_state(false), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("mlp_fg.l0.weight.f32")).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::MissingFile { .. })));
    }

    #[test]
    fn feature_dim_disagreeing_with_blobs_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save_scene(&small_state(false), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"feature_dim\": 4"));
        std::fs::write(&path, text.replace("\"feature_dim\": 4", "\"feature_dim\": 2")).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::Dimension { what, expected: 32, actual: 64 } if what.contains("atlas_fg")),
            "{err}"
        );
    }
}
