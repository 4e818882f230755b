//! The complete, validated in-training scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{Cuboid, FeatureAtlas, SkyLayer, SkyboxStack, TexturedMesh};
use crate::shader::{BackgroundMlp, Mlp, ShaderArch};
use crate::train::{AdamState, TrainConfig};
use crate::vq::Codebook;

/// How features turn into color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shading {
    /// Learned MLP shaders.
    #[default]
    Neural,
    /// No MLP: the first three channels are logistic color, the fourth
    /// channel is logistic opacity for skybox layers.
    Flat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationConfig {
    pub enabled: bool,
    pub codebook_size: usize,
}

impl Default for QuantizationConfig {
    fn default() -> Self {
        QuantizationConfig {
            enabled: true,
            codebook_size: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub arch: ShaderArch,
    pub shading: Shading,
    pub quantization: QuantizationConfig,
    pub backface_culling: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            arch: ShaderArch {
                feature_dim: 12,
                hidden: vec![32, 32, 32],
                view_encoding: Default::default(),
            },
            shading: Shading::Neural,
            quantization: QuantizationConfig::default(),
            backface_culling: true,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.shading == Shading::Flat && self.arch.feature_dim < 4 {
            return Err(Error::invariant(
                "config.shading",
                format!("flat shading needs at least 4 channels, got {}", self.arch.feature_dim),
            ));
        }
        let k = self.quantization.codebook_size;
        if self.quantization.enabled && !(1..=crate::vq::MAX_CODEBOOK_SIZE).contains(&k) {
            return Err(Error::invariant("config.quantization.codebook_size", format!("{k} out of range")));
        }
        Ok(())
    }
}

/// Every trainable tensor of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams<T> {
    pub atlas: FeatureAtlas<T>,
    pub skybox: SkyboxStack<T>,
    pub fg_mlp: Mlp<T>,
    pub bg_mlp: BackgroundMlp<T>,
    /// Present once quantization has been initialized.
    pub fg_codebook: Option<Codebook<T>>,
    pub sky_codebook: Option<Codebook<T>>,
}

/// Tensor name of a skybox face.
pub fn sky_tensor_name(layer: usize, face: usize) -> String {
    format!("sky_{layer}_{}", crate::scene::CubeFace::from_index(face).name())
}

impl<T: Real> SceneParams<T> {
    pub fn cast<U: Real>(&self) -> SceneParams<U> {
        SceneParams {
            atlas: self.atlas.cast(),
            skybox: self.skybox.cast(),
            fg_mlp: self.fg_mlp.cast(),
            bg_mlp: self.bg_mlp.cast(),
            fg_codebook: self.fg_codebook.as_ref().map(Codebook::cast),
            sky_codebook: self.sky_codebook.as_ref().map(Codebook::cast),
        }
    }

    /// True when rendering reads codebook rows instead of raw texels.
    pub fn quantized(&self) -> bool {
        self.fg_codebook.is_some()
    }

    /// All tensors by name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![("atlas_fg".into(), self.atlas.data())];
        for (l, layer) in self.skybox.layers.iter().enumerate() {
            for (f, face) in layer.faces.iter().enumerate() {
                out.push((sky_tensor_name(l, f), face.data()));
            }
        }
        self.fg_mlp.tensors("mlp_fg", &mut out);
        self.bg_mlp.tensors("mlp_sky", &mut out);
        if let Some(b) = &self.fg_codebook {
            out.push(("codebook_fg".into(), b.codes()));
        }
        if let Some(b) = &self.sky_codebook {
            out.push(("codebook_sky".into(), b.codes()));
        }
        out
    }

    /// Same names and order as [`SceneParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = vec![("atlas_fg".into(), self.atlas.data_mut())];
        for (l, layer) in self.skybox.layers.iter_mut().enumerate() {
            for (f, face) in layer.faces.iter_mut().enumerate() {
                out.push((sky_tensor_name(l, f), face.data_mut()));
            }
        }
        self.fg_mlp.tensors_mut("mlp_fg", &mut out);
        self.bg_mlp.tensors_mut("mlp_sky", &mut out);
        if let Some(b) = &mut self.fg_codebook {
            out.push(("codebook_fg".into(), b.codes_mut()));
        }
        if let Some(b) = &mut self.sky_codebook {
            out.push(("codebook_sky".into(), b.codes_mut()));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn validate(&self, config: &SceneConfig) -> Result<()> {
        let d = config.arch.feature_dim;
        if self.atlas.channels() != d {
            return Err(Error::dimension("atlas_fg channels", d, self.atlas.channels()));
        }
        if !self.atlas.is_finite() {
            return Err(Error::invariant("atlas_fg", "non-finite texel"));
        }
        self.skybox.validate(d)?;
        for (l, layer) in self.skybox.layers.iter().enumerate() {
            for (f, face) in layer.faces.iter().enumerate() {
                if !face.is_finite() {
                    return Err(Error::invariant(sky_tensor_name(l, f), "non-finite texel"));
                }
            }
        }
        config.arch.check(&self.fg_mlp, &self.bg_mlp)?;
        let check_book = |name: &str, book: &Option<Codebook<T>>| -> Result<()> {
            if let Some(b) = book {
                if b.dim() != d {
                    return Err(Error::dimension(format!("{name} width"), d, b.dim()));
                }
                if !config.quantization.enabled {
                    return Err(Error::invariant(name, "present while quantization is disabled"));
                }
            }
            Ok(())
        };
        check_book("codebook_fg", &self.fg_codebook)?;
        check_book("codebook_sky", &self.sky_codebook)?;
        let check_indices = |name: String, atlas: &FeatureAtlas<T>, book: &Option<Codebook<T>>| -> Result<()> {
            match (atlas.indices(), book) {
                (Some(idx), Some(b)) => {
                    if let Some(bad) = idx.iter().find(|&&k| k as usize >= b.len()) {
                        return Err(Error::invariant(name, format!("index {bad} >= codebook size {}", b.len())));
                    }
                    Ok(())
                }
                (Some(_), None) => Err(Error::invariant(name, "index map without codebook")),
                (None, Some(_)) => Err(Error::invariant(name, "codebook without index map")),
                (None, None) => Ok(()),
            }
        };
        check_indices("atlas_fg".into(), &self.atlas, &self.fg_codebook)?;
        for (l, layer) in self.skybox.layers.iter().enumerate() {
            for (f, face) in layer.faces.iter().enumerate() {
                check_indices(sky_tensor_name(l, f), face, &self.sky_codebook)?;
            }
        }
        Ok(())
    }
}

/// Optimizer progress stored with a checkpoint.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainProgress {
    /// Number of completed optimizer steps.
    pub step: u64,
    pub adam: AdamState,
}

/// Shapes and seed used to create fresh parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInit {
    pub atlas_height: usize,
    pub atlas_width: usize,
    pub sky_layers: Vec<Cuboid>,
    pub sky_resolution: usize,
    /// Texels start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneState {
    pub mesh: TexturedMesh,
    pub config: SceneConfig,
    pub params: SceneParams<f32>,
    pub train: TrainConfig,
    pub progress: TrainProgress,
}

impl SceneState {
    /// Fresh scene with randomly initialized parameters.
    pub fn initialize(mesh: TexturedMesh, config: SceneConfig, train: TrainConfig, init: &SceneInit) -> Result<Self> {
        config.validate()?;
        let d = config.arch.feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let s = init.init_scale;
        let fill = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
            (0..n)
                .map(|_| if s > 0.0 { rng.gen_range(-s..s) as f32 } else { 0.0 })
                .collect()
        };
        let atlas = FeatureAtlas::new(
            init.atlas_height,
            init.atlas_width,
            d,
            fill(init.atlas_height * init.atlas_width * d, &mut rng),
        )?;
        let mut layers = Vec::new();
        for bounds in &init.sky_layers {
            let mut layer = SkyLayer::zeros(*bounds, init.sky_resolution, d)?;
            for face in &mut layer.faces {
                let n = face.data().len();
                face.data_mut().copy_from_slice(&fill(n, &mut rng));
            }
            layers.push(layer);
        }
        let fg_mlp = config.arch.foreground(&mut rng);
        let bg_mlp = config.arch.background(&mut rng);
        let state = SceneState {
            mesh,
            params: SceneParams {
                atlas,
                skybox: SkyboxStack { layers },
                fg_mlp,
                bg_mlp,
                fg_codebook: None,
                sky_codebook: None,
            },
            config,
            train,
            progress: TrainProgress::default(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        self.config.validate()?;
        self.train.validate()?;
        self.params.validate(&self.config)
    }
}
