//! Finite-difference check of the full training objective.
//!
//! A tiny double-precision scene exercises every trainable tensor: a
//! quantized atlas, two quantized skybox layers, both shader networks and
//! both codebooks. Analytic gradients come from [`evaluate`] in
//! [`GradientMode::Exact`], which differentiates the objective with code
//! assignments held fixed, so central differences are a valid reference.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::SceneGrads;
use crate::raster::{RasterOptions, ViewGeometry};
use crate::scene::{Camera, FeatureAtlas, Cuboid, SceneConfig, SceneParams, Shading, SkyLayer, SkyboxStack, TexturedMesh};
use crate::shader::ShaderArch;
use crate::train::{evaluate, LossWeights, ObjectiveInput, PyramidProxy};
use crate::vq::{assign_texels, Codebook, GradientMode};

/// Shapes of the check scene.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleShape {
    pub atlas: usize,
    pub feature_dim: usize,
    pub codebook_size: usize,
    pub sky_layers: usize,
    pub sky_resolution: usize,
    pub hidden: Vec<usize>,
    pub image: u32,
}

impl Default for OracleShape {
    fn default() -> Self {
        OracleShape {
            atlas: 8,
            feature_dim: 4,
            codebook_size: 8,
            sky_layers: 2,
            sky_resolution: 4,
            hidden: vec![8, 8, 8],
            image: 12,
        }
    }
}

/// One posed view of the check scene with a random target.
pub struct OracleProblem {
    pub params: SceneParams<f64>,
    pub config: SceneConfig,
    pub mesh: TexturedMesh,
    pub geom: ViewGeometry,
    pub target: Vec<f64>,
    pub weights: LossWeights,
    pub perceptual: PyramidProxy,
}

/// Builds the check scene: a tilted quad that covers part of the image, so
/// both the surface and the skybox contribute.
pub fn oracle_problem(shape: &OracleShape, seed: u64) -> Result<OracleProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = shape.feature_dim;
    let config = SceneConfig {
        arch: ShaderArch {
            feature_dim: d,
            hidden: shape.hidden.clone(),
            view_encoding: Default::default(),
        },
        shading: Shading::Neural,
        quantization: crate::scene::QuantizationConfig {
            enabled: true,
            codebook_size: shape.codebook_size,
        },
        backface_culling: true,
    };
    let mesh = TexturedMesh::new(
        vec![[-0.6, -0.5, 0.0], [0.5, -0.6, 0.1], [0.6, 0.5, 0.0], [-0.5, 0.6, -0.1]],
        vec![[0.05, 0.05], [0.95, 0.1], [0.9, 0.95], [0.1, 0.9]],
        vec![[0, 1, 2], [0, 2, 3]],
    )?;
    let uniform = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };

    let n = shape.atlas;
    let mut atlas = FeatureAtlas::new(n, n, d, uniform(n * n * d, &mut rng))?;
    let mut layers = Vec::new();
    for l in 0..shape.sky_layers {
        let h = 3.0 * (l + 1) as f64;
        let mut layer = SkyLayer::zeros(
            Cuboid {
                center: [0.0; 3],
                half_extents: [h, h, h],
            },
            shape.sky_resolution,
            d,
        )?;
        for face in &mut layer.faces {
            let len = face.data().len();
            face.data_mut().copy_from_slice(&uniform(len, &mut rng));
        }
        layers.push(layer);
    }
    let mut skybox = SkyboxStack { layers };

    // Codes start at sampled texels and are then jittered so the codebook
    // term and every code gradient are generic.
    let k = shape.codebook_size;
    let all: Vec<u32> = (0..(n * n) as u32).collect();
    let mut fg_book = Codebook::sample_from(&atlas, &all, k, &mut rng)?;
    fg_book.codes_mut().iter_mut().for_each(|c| *c += rng.gen_range(-0.2..0.2));
    assign_texels(&mut atlas, &fg_book, &[])?;
    let rows: Vec<&[f64]> = skybox
        .layers
        .iter()
        .flat_map(|l| l.faces.iter())
        .flat_map(|f| (0..f.texel_count()).map(move |t| f.texel(t)))
        .collect();
    let mut sky_book = Codebook::sample_rows(d, &rows, k, &mut rng)?;
    sky_book.codes_mut().iter_mut().for_each(|c| *c += rng.gen_range(-0.2..0.2));
    for layer in &mut skybox.layers {
        for face in &mut layer.faces {
            assign_texels(face, &sky_book, &[])?;
        }
    }

    let mut params = SceneParams {
        atlas,
        skybox,
        fg_mlp: config.arch.foreground(&mut rng),
        bg_mlp: config.arch.background(&mut rng),
        fg_codebook: Some(fg_book),
        sky_codebook: Some(sky_book),
    };
    // Zero biases put every unit fed only by dead units exactly on the
    // ReLU kink, where no derivative exists.
    for (name, values) in params.tensors_mut() {
        if name.ends_with(".bias") {
            values.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        }
    }
    params.validate(&config)?;

    let cam = Camera::look_at([0.4, 0.3, 1.6], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 70.0, shape.image, shape.image)?;
    let geom = ViewGeometry::build(&mesh, (n, n), &params.skybox, &cam, &RasterOptions::default())?;
    let covered = geom.coverage().iter().filter(|&&c| c).count();
    if covered == 0 || covered == geom.pixel_count() {
        return Err(Error::invariant("oracle view", "must show both surface and sky"));
    }
    let target = (0..geom.pixel_count() * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    Ok(OracleProblem {
        params,
        config,
        mesh,
        geom,
        target,
        weights: LossWeights::default(),
        perceptual: PyramidProxy::default(),
    })
}

/// A parameter whose analytic and numeric derivatives disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Every scalar parameter is checked.
    pub parameters: usize,
    pub mismatches: Vec<Mismatch>,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over
    /// parameters whose derivative exceeds the absolute floor.
    pub max_rel_error: f64,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Tolerances for [`check_gradients`]. A parameter passes when
/// `|a - n| <= rel * max(|a|, |n|) + abs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            rel: 1e-4,
            abs: 1e-8,
        }
    }
}

fn loss(p: &OracleProblem, params: &SceneParams<f64>, mode: GradientMode) -> Result<f64> {
    let input = ObjectiveInput {
        geom: &p.geom,
        target: &p.target,
        mask: None,
    };
    Ok(evaluate(params, &p.config, &input, &p.weights, &p.perceptual, mode)?.0.total)
}

/// Compares the analytic gradient with central differences for every
/// scalar parameter of the problem.
pub fn check_gradients(p: &OracleProblem, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let start = Instant::now();
    let input = ObjectiveInput {
        geom: &p.geom,
        target: &p.target,
        mask: None,
    };
    let (_, grads) = evaluate(&p.params, &p.config, &input, &p.weights, &p.perceptual, GradientMode::Exact)?;
    let mut report = compare(p, &grads, opts)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn compare(p: &OracleProblem, grads: &SceneGrads<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let analytic: HashMap<String, &[f64]> = grads.tensors().into_iter().map(|(name, g, _)| (name, g)).collect();

    let mut params = p.params.clone();
    let names: Vec<(String, usize)> = params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
    let mut report = GradCheckReport {
        parameters: 0,
        mismatches: Vec::new(),
        max_rel_error: 0.0,
        seconds: 0.0,
    };
    for (ti, (name, len)) in names.iter().enumerate() {
        let g = *analytic
            .get(name)
            .ok_or_else(|| Error::invariant(name.clone(), "no gradient tensor"))?;
        if g.len() != *len {
            return Err(Error::invariant(name.clone(), format!("gradient has {} entries, parameter {len}", g.len())));
        }
        for j in 0..*len {
            let orig = params.tensors()[ti].1[j];
            let mut at = |v: f64| -> Result<f64> {
                params.tensors_mut()[ti].1[j] = v;
                loss(p, &params, GradientMode::Exact)
            };
            let plus = at(orig + opts.step)?;
            let minus = at(orig - opts.step)?;
            at(orig)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = g[j];
            let scale = a.abs().max(numeric.abs());
            let diff = (a - numeric).abs();
            if scale > opts.abs {
                report.max_rel_error = report.max_rel_error.max(diff / scale);
            }
            if !(diff <= opts.rel * scale + opts.abs) {
                report.mismatches.push(Mismatch {
                    tensor: name.clone(),
                    index: j,
                    analytic: a,
                    numeric,
                });
            }
            report.parameters += 1;
        }
    }
    Ok(report)
}
