//! Optimizer steps and the training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grad::SceneGrads;
use crate::image::Image;
use crate::metrics::psnr_from_mse;
use crate::raster::{RasterOptions, ViewGeometry};
use crate::scene::{save_scene, Camera, SceneState};
use crate::shader::render_view;
use crate::train::loss::PerceptualLoss;
use crate::train::objective::{evaluate, LossReport, LossWeights, ObjectiveInput};
use crate::train::TrainConfig;
use crate::vq::{assign_texels, reseed_dead_codes, Codebook, GradientMode};

/// A posed observation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub image: Image,
    /// `H x W`; `false` excludes a pixel from every loss term.
    pub mask: Option<Vec<bool>>,
}

impl TrainView {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width() as usize, self.camera.height() as usize);
        if self.image.width != w || self.image.height != h {
            return Err(Error::InvalidArgument(format!(
                "view image is {}x{} but the camera renders {w}x{h}",
                self.image.width, self.image.height
            )));
        }
        if !self.image.is_finite() {
            return Err(Error::invariant("view image", "non-finite pixel"));
        }
        if let Some(m) = &self.mask {
            if m.len() != w * h {
                return Err(Error::dimension("view mask", w * h, m.len()));
            }
        }
        Ok(())
    }
}

/// A view with its camera geometry resolved against a scene. Geometry only
/// depends on the mesh, atlas shapes and skybox bounds, so it stays valid
/// for the whole optimization.
#[derive(Clone, Debug)]
pub struct PreparedView {
    /// Position in the caller's view list, used in diagnostics.
    pub index: usize,
    pub geom: ViewGeometry,
    pub target: Vec<f32>,
    pub mask: Option<Vec<bool>>,
}

pub fn prepare_views(state: &SceneState, views: &[TrainView]) -> Result<Vec<PreparedView>> {
    let opts = RasterOptions {
        backface_culling: state.config.backface_culling,
    };
    let atlas = &state.params.atlas;
    views
        .iter()
        .enumerate()
        .map(|(index, v)| {
            v.validate()?;
            let geom = ViewGeometry::build(
                &state.mesh,
                (atlas.height(), atlas.width()),
                &state.params.skybox,
                &v.camera,
                &opts,
            )?;
            Ok(PreparedView {
                index,
                geom,
                target: v.image.data.clone(),
                mask: v.mask.clone(),
            })
        })
        .collect()
}

impl From<&TrainConfig> for LossWeights {
    fn from(cfg: &TrainConfig) -> Self {
        LossWeights {
            photometric: 1.0,
            perceptual: cfg.lambda_perc,
            vq: cfg.lambda_vq,
            vq_beta: cfg.vq_beta,
        }
    }
}

/// Independent deterministic stream for a purpose and step.
fn stream(seed: u64, purpose: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng.set_word_pos(u128::from(step) << 8);
    rng
}

const STREAM_SCHEDULE: u64 = 1;
const STREAM_CODEBOOK: u64 = 2;
const STREAM_RESEED: u64 = 3;

/// View trained at `step`: each epoch visits every view once in an order
/// shuffled from `(seed, epoch)`, so the schedule only depends on the step.
pub fn scheduled_view(seed: u64, step: u64, view_count: usize) -> usize {
    let n = view_count as u64;
    let epoch = step / n;
    let mut order: Vec<usize> = (0..view_count).collect();
    order.shuffle(&mut stream(seed, STREAM_SCHEDULE, epoch));
    order[(step % n) as usize]
}

/// Outcome of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Number of completed steps after this one.
    pub step: u64,
    pub views: Vec<usize>,
    /// Mean over the batch.
    pub loss: LossReport,
    pub reseeded: usize,
}

fn quantizing(state: &SceneState) -> bool {
    state.config.quantization.enabled && state.progress.step >= state.train.vq_warmup
}

/// Creates both codebooks from the features of texels the given views read,
/// then assigns every texel. No-op when they already exist.
pub fn init_codebooks(state: &mut SceneState, views: &[&PreparedView]) -> Result<()> {
    if state.params.fg_codebook.is_some() {
        return Ok(());
    }
    let k = state.config.quantization.codebook_size;
    let d = state.config.arch.feature_dim;
    let params = &mut state.params;

    let mut fg_texels: Vec<u32> = views.iter().flat_map(|v| v.geom.surface_texels.iter().copied()).collect();
    fg_texels.sort_unstable();
    fg_texels.dedup();
    let mut rng = stream(state.train.seed, STREAM_CODEBOOK, 0);
    let fg_book = Codebook::sample_from(&params.atlas, &fg_texels, k, &mut rng)?;
    params.atlas.clear_indices();
    assign_texels(&mut params.atlas, &fg_book, &[])?;
    params.fg_codebook = Some(fg_book);

    if !params.skybox.is_empty() {
        let slots = params.skybox.len() * 6;
        let mut rows: Vec<&[f32]> = Vec::new();
        for slot in 0..slots {
            let mut texels: Vec<u32> = views.iter().flat_map(|v| v.geom.sky_texels[slot].iter().copied()).collect();
            texels.sort_unstable();
            texels.dedup();
            let face = &params.skybox.layers[slot / 6].faces[slot % 6];
            rows.extend(texels.iter().map(|&t| face.texel(t as usize)));
        }
        if rows.is_empty() {
            // No view sees the sky: any face texel is as good as another.
            for layer in &params.skybox.layers {
                for face in &layer.faces {
                    rows.extend((0..face.texel_count()).map(|t| face.texel(t)));
                }
            }
        }
        let sky_book = Codebook::sample_rows(d, &rows, k, &mut rng)?;
        for layer in &mut params.skybox.layers {
            for face in &mut layer.faces {
                face.clear_indices();
                assign_texels(face, &sky_book, &[])?;
            }
        }
        params.sky_codebook = Some(sky_book);
    }
    log::info!("initialized codebooks with {k} codes at step {}", state.progress.step);
    Ok(())
}

/// Refreshes assignments of texels read by `views`; returns per-codebook
/// usage histograms over those texels.
fn assign_views(state: &mut SceneState, views: &[&PreparedView]) -> Result<(Vec<u64>, Vec<u64>)> {
    let params = &mut state.params;
    let (Some(fg_book), sky_book) = (params.fg_codebook.as_ref(), params.sky_codebook.as_ref()) else {
        return Ok((Vec::new(), Vec::new()));
    };
    let mut fg_hist = vec![0u64; fg_book.len()];
    let mut sky_hist = vec![0u64; sky_book.map_or(0, Codebook::len)];
    for v in views {
        let h = assign_texels(&mut params.atlas, fg_book, &v.geom.surface_texels)?;
        fg_hist.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        if let Some(book) = sky_book {
            for (slot, texels) in v.geom.sky_texels.iter().enumerate() {
                let face = &mut params.skybox.layers[slot / 6].faces[slot % 6];
                let h = assign_texels(face, book, texels)?;
                sky_hist.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
            }
        }
    }
    Ok((fg_hist, sky_hist))
}

fn reseed(state: &mut SceneState, views: &[&PreparedView], fg_hist: &[u64], sky_hist: &[u64]) -> Result<usize> {
    let window = state.train.reseed_window;
    let mut rng = stream(state.train.seed, STREAM_RESEED, state.progress.step);
    let params = &mut state.params;
    let mut count = 0;
    if let Some(book) = params.fg_codebook.as_mut() {
        let candidates: Vec<&[f32]> = views
            .iter()
            .flat_map(|v| v.geom.surface_texels.iter().map(|&t| params.atlas.texel(t as usize)))
            .collect();
        count += reseed_dead_codes(book, fg_hist, &candidates, window, &mut rng)?.len();
    }
    if let Some(book) = params.sky_codebook.as_mut() {
        let sky = &params.skybox;
        let candidates: Vec<&[f32]> = views
            .iter()
            .flat_map(|v| {
                v.geom.sky_texels.iter().enumerate().flat_map(move |(slot, texels)| {
                    let face = &sky.layers[slot / 6].faces[slot % 6];
                    texels.iter().map(move |&t| face.texel(t as usize))
                })
            })
            .collect();
        count += reseed_dead_codes(book, sky_hist, &candidates, window, &mut rng)?.len();
    }
    Ok(count)
}

fn check_finite(report: &LossReport, view: usize) -> Result<()> {
    for (term, v) in [
        ("photometric", report.photometric),
        ("perceptual", report.perceptual),
        ("codebook", report.vq),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term, view });
        }
    }
    Ok(())
}

/// One Adam update on the mean objective over `batch`.
///
/// Once the warm-up is over, codebooks are created on first use from the
/// batch, the batch's texels are re-assigned to their nearest codes,
/// rendering reads quantized features with straight-through gradients, and
/// codes idle for `reseed_window` steps are reseeded.
pub fn train_step(
    state: &mut SceneState,
    batch: &[&PreparedView],
    perceptual: &dyn PerceptualLoss<f32>,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("training batch is empty".into()));
    }
    let quantize = quantizing(state);
    if quantize {
        init_codebooks(state, batch)?;
    }
    let (fg_hist, sky_hist) = if quantize {
        assign_views(state, batch)?
    } else {
        (Vec::new(), Vec::new())
    };

    let weights = LossWeights::from(&state.train);
    let mut total: Option<SceneGrads<f32>> = None;
    let mut sum = LossReport {
        total: 0.0,
        photometric: 0.0,
        perceptual: 0.0,
        vq: 0.0,
    };
    for v in batch {
        let input = ObjectiveInput {
            geom: &v.geom,
            target: &v.target,
            mask: v.mask.as_deref(),
        };
        let (report, grads) = evaluate(
            &state.params,
            &state.config,
            &input,
            &weights,
            perceptual,
            GradientMode::StraightThrough,
        )?;
        check_finite(&report, v.index)?;
        sum.total += report.total;
        sum.photometric += report.photometric;
        sum.perceptual += report.perceptual;
        sum.vq += report.vq;
        match total.as_mut() {
            None => total = Some(grads),
            Some(t) => t.add_assign(&grads),
        }
    }
    let mut grads = total.expect("non-empty batch");
    let n = batch.len() as f64;
    if batch.len() > 1 {
        scale_grads(&mut grads, 1.0 / n as f32);
    }
    let loss = LossReport {
        total: sum.total / n,
        photometric: sum.photometric / n,
        perceptual: sum.perceptual / n,
        vq: sum.vq / n,
    };

    apply_adam(state, &grads);

    let reseeded = if quantize && state.train.reseed_window > 0 {
        reseed(state, batch, &fg_hist, &sky_hist)?
    } else {
        0
    };
    state.progress.step += 1;
    Ok(StepReport {
        step: state.progress.step,
        views: batch.iter().map(|v| v.index).collect(),
        loss,
        reseeded,
    })
}

fn scale_grads(grads: &mut SceneGrads<f32>, s: f32) {
    grads.atlas.scale(s);
    grads.sky.iter_mut().for_each(|g| g.scale(s));
    let mut dense = Vec::new();
    grads.fg_mlp.tensors_mut("", &mut dense);
    grads.bg_mlp.tensors_mut("", &mut dense);
    for (_, t) in dense {
        t.iter_mut().for_each(|v| *v *= s);
    }
    for g in [grads.fg_codebook.as_mut(), grads.sky_codebook.as_mut()].into_iter().flatten() {
        g.iter_mut().for_each(|v| *v *= s);
    }
}

fn apply_adam(state: &mut SceneState, grads: &SceneGrads<f32>) {
    let step = state.progress.step + 1;
    let lr = state.train.learning_rate;
    let cfg = state.train.adam;
    let adam = &mut state.progress.adam;
    let grads = grads.tensors();
    for ((name, param), (gname, grad, rows)) in state.params.tensors_mut().into_iter().zip(grads) {
        debug_assert_eq!(name, gname);
        match rows {
            Some((rows, width)) => adam.update_rows(&name, param, grad, rows, width, lr, step, &cfg),
            None => adam.update_dense(&name, param, grad, lr, step, &cfg),
        }
    }
}

/// Renders a prepared view with the current parameters.
pub fn render_prepared(state: &SceneState, view: &PreparedView) -> Image {
    let data = render_view(&state.params, &state.config, &view.geom);
    Image {
        width: view.geom.width,
        height: view.geom.height,
        data,
    }
}

/// Renders an arbitrary camera with the current parameters.
pub fn render_camera(state: &SceneState, camera: &Camera) -> Result<Image> {
    let opts = RasterOptions {
        backface_culling: state.config.backface_culling,
    };
    let atlas = &state.params.atlas;
    let geom = ViewGeometry::build(&state.mesh, (atlas.height(), atlas.width()), &state.params.skybox, camera, &opts)?;
    Ok(Image {
        width: geom.width,
        height: geom.height,
        data: render_view(&state.params, &state.config, &geom),
    })
}

/// PSNR of the current render against the view's target over valid pixels.
pub fn view_psnr(state: &SceneState, view: &PreparedView) -> f64 {
    let img = render_prepared(state, view);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, (a, b)) in img.data.chunks_exact(3).zip(view.target.chunks_exact(3)).enumerate() {
        if view.mask.as_ref().is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    psnr_from_mse(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn mean_psnr(state: &SceneState, views: &[PreparedView]) -> f64 {
    if views.is_empty() {
        return f64::NAN;
    }
    views.iter().map(|v| view_psnr(state, v)).sum::<f64>() / views.len() as f64
}

/// Per-step losses and periodic validation scores of a [`fit`] run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitHistory {
    pub steps: Vec<StepReport>,
    /// `(completed steps, mean validation PSNR)`.
    pub validation: Vec<(u64, f64)>,
}

pub struct FitOptions<'a> {
    /// Directory receiving a checkpoint every `checkpoint_every` steps and at
    /// the end of training.
    pub checkpoint_dir: Option<&'a Path>,
    pub validation: &'a [PreparedView],
}

/// Trains until `state.train.iterations` steps have completed, one view per
/// step. Resuming a checkpoint continues the same schedule.
pub fn fit(
    state: &mut SceneState,
    views: &[PreparedView],
    opts: &FitOptions<'_>,
    perceptual: &dyn PerceptualLoss<f32>,
) -> Result<FitHistory> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("no training views".into()));
    }
    state.validate()?;
    let mut history = FitHistory::default();
    let all: Vec<&PreparedView> = views.iter().collect();
    while state.progress.step < state.train.iterations {
        if quantizing(state) {
            init_codebooks(state, &all)?;
        }
        let i = scheduled_view(state.train.seed, state.progress.step, views.len());
        let report = train_step(state, &[&views[i]], perceptual)?;
        let step = report.step;
        if step % 100 == 0 || step == state.train.iterations {
            log::info!(
                "step {step}: loss {:.6} (rgb {:.6}, perc {:.6}, vq {:.6})",
                report.loss.total,
                report.loss.photometric,
                report.loss.perceptual,
                report.loss.vq
            );
        }
        history.steps.push(report);
        let every = state.train.validate_every;
        if every > 0 && step % every == 0 && !opts.validation.is_empty() {
            let p = mean_psnr(state, opts.validation);
            log::info!("step {step}: validation PSNR {p:.3} dB");
            history.validation.push((step, p));
        }
        let every = state.train.checkpoint_every;
        if let Some(dir) = opts.checkpoint_dir {
            if every > 0 && step % every == 0 {
                save_scene(state, dir)?;
            }
        }
    }
    if let Some(dir) = opts.checkpoint_dir {
        save_scene(state, dir)?;
    }
    Ok(history)
}
