use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use neutex::bake::{bake, emulate_bundle, load_bundle, BakeOptions, DEFAULT_MAX_TEXTURE_SIZE};
use neutex::blob;
use neutex::geom::Vec3;
use neutex::image::Image;
use neutex::mesh::{prepare_mesh, read_obj, AtlasOptions, CullOptions, DecimationConfig, PrepOptions};
use neutex::metrics::{mse, psnr_from_mse, ssim};
use neutex::raster::dump_buffers;
use neutex::scene::{
    load_scene, save_scene, Camera, CameraRecord, Cuboid, QuantizationConfig, SceneConfig, SceneInit, SceneState, Shading,
};
use neutex::shader::ShaderArch;
use neutex::train::{fit, load_views, mean_psnr, prepare_views, render_camera, FitOptions, PyramidProxy, TrainConfig};

/// Bad combination of otherwise well-formed arguments.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "neutex", version, about = "Neural-texture scenes: prepare, train, render, bake, evaluate")]
pub struct Cli {
    /// Print results and errors as JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simplify, cull and parameterize a mesh, then create a fresh scene.
    Prep(PrepArgs),
    /// Optimize a scene against posed images; resumes from its step count.
    Train(TrainArgs),
    /// Render one camera pose with the reference renderer.
    Render(RenderArgs),
    /// Export a scene as a real-time bundle.
    Bake(BakeArgs),
    /// Score renders against posed images.
    Eval(EvalArgs),
    /// Summarize a scene or bundle directory.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
pub struct PrepArgs {
    /// Input OBJ mesh.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// JSON list of camera poses used for visibility culling and skybox
    /// placement.
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    pub target_verts: usize,
    /// Vertex clustering cell size in scene units; omit to skip clustering.
    #[arg(long)]
    pub cell: Option<f64>,
    /// Edge length of the square feature atlas.
    #[arg(long, default_value_t = 1024)]
    pub atlas_res: u32,
    #[arg(long)]
    pub out: PathBuf,
    /// Recompute UVs even when the OBJ provides them.
    #[arg(long)]
    pub regenerate_uvs: bool,
    #[arg(long, default_value_t = 12)]
    pub feature_dim: usize,
    /// Widths of the hidden shader layers.
    #[arg(long, value_delimiter = ',', default_value = "32,32,32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub codebook_size: usize,
    #[arg(long, default_value_t = 2)]
    pub sky_layers: usize,
    /// Texels along one skybox face edge.
    #[arg(long, default_value_t = 256)]
    pub sky_res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub views: PathBuf,
    /// Total optimizer steps; a scene already past this count is unchanged.
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_perc: Option<f64>,
    #[arg(long)]
    pub lambda_vq: Option<f64>,
    /// Train raw features without codebooks.
    #[arg(long)]
    pub no_vq: bool,
    /// Replace the MLP shaders by flat color textures.
    #[arg(long)]
    pub no_mlp: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Held-out views scored every `--validate-every` steps.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub validate_every: Option<u64>,
    /// Write the trained scene here instead of back into `--scene`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Scene directory (reference renderer).
    #[arg(long, conflicts_with = "bundle", required_unless_present = "bundle")]
    pub scene: Option<PathBuf>,
    /// Bundle directory (shader emulator).
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Camera pose JSON.
    #[arg(long)]
    pub pose: PathBuf,
    /// PNG or PFM, by extension.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the raw per-pixel buffers into this directory.
    #[arg(long, conflicts_with = "bundle")]
    pub dump_buffers: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BakeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Store float features instead of code indices.
    #[arg(long)]
    pub no_vq: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_TEXTURE_SIZE)]
    pub max_texture_size: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub views: PathBuf,
    /// Write each render here as `view_<i>.pfm`.
    #[arg(long)]
    pub save_renders: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InfoArgs {
    /// Scene or bundle directory.
    pub path: PathBuf,
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = match &cli.command {
        Command::Prep(a) => prep(a)?,
        Command::Train(a) => train(a)?,
        Command::Render(a) => render(a)?,
        Command::Bake(a) => bake_cmd(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Info(a) => info(a)?,
    };
    if cli.json {
        println!("{}", out.json);
    } else {
        print!("{}", out.text);
    }
    Ok(())
}

struct Output {
    json: Value,
    text: String,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read_pose(path: &Path) -> Result<Camera> {
    let record: CameraRecord = blob::read_json(path)?;
    Camera::try_from(record).with_context(|| format!("pose {}", path.display()))
}

/// Axis-aligned box around all points.
fn bounds(points: impl Iterator<Item = Vec3>) -> (Vec3, Vec3) {
    points.fold(([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]), |(lo, hi), p| {
        ([0, 1, 2].map(|a| lo[a].min(p[a])), [0, 1, 2].map(|a| hi[a].max(p[a])))
    })
}

fn prep(a: &PrepArgs) -> Result<Output> {
    let input = read_obj(&a.input)?;
    let cameras: Vec<Camera> = blob::read_json(&a.cameras)?;
    if cameras.is_empty() {
        return Err(usage(format!("{} lists no cameras", a.cameras.display())));
    }
    let opts = PrepOptions {
        cell: a.cell,
        decimation: Some(DecimationConfig {
            target_vertices: a.target_verts,
            ..DecimationConfig::default()
        }),
        cull: CullOptions::default(),
        atlas: AtlasOptions {
            resolution: a.atlas_res,
            ..AtlasOptions::default()
        },
        keep_uvs: !a.regenerate_uvs,
    };
    let (mesh, report) = prepare_mesh(&input, &cameras, &opts)?;

    // Skyboxes are centered on everything of interest and grow fourfold per
    // layer, the nearest one enclosing every camera and the mesh.
    let points = mesh
        .positions
        .iter()
        .map(|p| p.map(f64::from))
        .chain(cameras.iter().map(Camera::center));
    let (lo, hi) = bounds(points);
    let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
    let radius = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max).max(0.5) * 1.5;
    let sky_layers = (0..a.sky_layers)
        .map(|l| Cuboid {
            center,
            half_extents: [radius * 4f64.powi(l as i32); 3],
        })
        .collect();
    let res = a.atlas_res as usize;
    let config = SceneConfig {
        arch: ShaderArch {
            feature_dim: a.feature_dim,
            hidden: a.hidden.clone(),
            view_encoding: Default::default(),
        },
        shading: Shading::Neural,
        quantization: QuantizationConfig {
            enabled: true,
            codebook_size: a.codebook_size,
        },
        backface_culling: true,
    };
    let init = SceneInit {
        atlas_height: res,
        atlas_width: res,
        sky_layers,
        sky_resolution: a.sky_res,
        init_scale: 0.1,
        seed: a.seed,
    };
    let train = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    let state = SceneState::initialize(mesh, config, train, &init)?;
    save_scene(&state, &a.out)?;

    let mut text = String::new();
    for s in &report.stages {
        text += &format!("{:<10} {:>9} vertices {:>9} faces\n", s.stage, s.vertices, s.faces);
    }
    text += &format!(
        "scene written to {} ({} parameters)\n",
        a.out.display(),
        state.params.parameter_count()
    );
    Ok(Output {
        json: json!({
            "scene": a.out,
            "stages": report.stages,
            "reused_uvs": report.reused_uvs,
            "reached_target": report.reached_target,
            "parameters": state.params.parameter_count(),
        }),
        text,
    })
}

fn train(a: &TrainArgs) -> Result<Output> {
    let mut state = load_scene(&a.scene)?;
    let t = &mut state.train;
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                t.$field = v;
            }
        };
    }
    set!(iterations, a.iters);
    set!(learning_rate, a.lr);
    set!(lambda_perc, a.lambda_perc);
    set!(lambda_vq, a.lambda_vq);
    set!(seed, a.seed);
    set!(checkpoint_every, a.checkpoint_every);
    set!(validate_every, a.validate_every);
    if a.no_vq {
        state.config.quantization.enabled = false;
        let p = &mut state.params;
        p.fg_codebook = None;
        p.sky_codebook = None;
        p.atlas.clear_indices();
        p.skybox.layers.iter_mut().flat_map(|l| l.faces.iter_mut()).for_each(|f| f.clear_indices());
    }
    if a.no_mlp {
        state.config.shading = Shading::Flat;
    }
    state.validate()?;

    let views = load_views(&a.views)?;
    if views.is_empty() {
        return Err(usage(format!("{} lists no views", a.views.display())));
    }
    let prepared = prepare_views(&state, &views)?;
    let validation = match &a.validation {
        Some(p) => prepare_views(&state, &load_views(p)?)?,
        None => Vec::new(),
    };
    let out_dir = a.out.as_deref().unwrap_or(&a.scene);
    let start = state.progress.step;
    let proxy = PyramidProxy {
        levels: state.train.pyramid_levels,
    };
    let history = fit(
        &mut state,
        &prepared,
        &FitOptions {
            checkpoint_dir: Some(out_dir),
            validation: &validation,
        },
        &proxy,
    )?;
    let train_psnr = mean_psnr(&state, &prepared);
    let heldout_psnr = (!validation.is_empty()).then(|| mean_psnr(&state, &validation));
    let last = history.steps.last().map(|s| s.loss.total);
    let mut text = format!(
        "trained steps {start}..{}; mean train PSNR {:.3} dB\n",
        state.progress.step, train_psnr
    );
    if let Some(p) = heldout_psnr {
        text += &format!("mean held-out PSNR {p:.3} dB\n");
    }
    text += &format!("scene written to {}\n", out_dir.display());
    Ok(Output {
        json: json!({
            "scene": out_dir,
            "start_step": start,
            "step": state.progress.step,
            "final_loss": last,
            "train_psnr": finite_or_sentinel(train_psnr),
            "heldout_psnr": heldout_psnr.map(finite_or_sentinel),
            "validation": history.validation,
        }),
        text,
    })
}

fn render(a: &RenderArgs) -> Result<Output> {
    let cam = read_pose(&a.pose)?;
    let (img, source) = match (&a.scene, &a.bundle) {
        (Some(scene), _) => {
            let state = load_scene(scene)?;
            if let Some(dir) = &a.dump_buffers {
                dump_buffers(&state, &cam, dir)?;
            }
            (render_camera(&state, &cam)?, scene)
        }
        (None, Some(bundle)) => (emulate_bundle(&load_bundle(bundle)?, &cam)?, bundle),
        (None, None) => return Err(usage("either --scene or --bundle is required")),
    };
    if !img.is_finite() {
        return Err(neutex::Error::invariant("render", "non-finite pixel").into());
    }
    img.write(&a.out)?;
    Ok(Output {
        json: json!({"source": source, "out": a.out, "width": img.width, "height": img.height, "buffers": a.dump_buffers}),
        text: format!("wrote {}x{} image to {}\n", img.width, img.height, a.out.display()),
    })
}

fn bake_cmd(a: &BakeArgs) -> Result<Output> {
    let state = load_scene(&a.scene)?;
    let has_books = state.params.fg_codebook.is_some();
    if !a.no_vq && !has_books {
        return Err(usage("scene has no codebooks (trained without quantization or not past warm-up); pass --no-vq"));
    }
    let m = bake(
        &state,
        &a.out,
        &BakeOptions {
            quantized: !a.no_vq,
            max_texture_size: a.max_texture_size,
        },
    )?;
    let bytes = m.total_bytes();
    Ok(Output {
        json: json!({"bundle": a.out, "quantized": m.quantized, "bytes": bytes, "blobs": m.blobs.len()}),
        text: format!(
            "baked {} bundle to {} ({} blobs, {bytes} bytes)\n",
            if m.quantized { "quantized" } else { "float" },
            a.out.display(),
            m.blobs.len()
        ),
    })
}

/// JSON has no infinity; identical images report the string `"inf"`.
fn finite_or_sentinel(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("nan")
    }
}

fn eval(a: &EvalArgs) -> Result<Output> {
    let state = load_scene(&a.scene)?;
    let views = load_views(&a.views)?;
    if let Some(dir) = &a.save_renders {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut rows = Vec::new();
    let mut text = format!("{:>5} {:>9} {:>7} {:>10} {:>6} {:>6}\n", "view", "PSNR", "SSIM", "MSE", "LPIPS", "FID");
    let (mut sum_psnr, mut sum_ssim, mut sum_mse) = (0.0, 0.0, 0.0);
    for (i, v) in views.iter().enumerate() {
        let img: Image = render_camera(&state, &v.camera)?;
        if let Some(dir) = &a.save_renders {
            img.write(&dir.join(format!("view_{i}.pfm")))?;
        }
        let e = mse(&img, &v.image)?;
        let p = psnr_from_mse(e);
        let s = ssim(&img, &v.image)?;
        sum_psnr += p;
        sum_ssim += s;
        sum_mse += e;
        text += &format!("{i:>5} {:>9} {s:>7.4} {e:>10.3e} {:>6} {:>6}\n", fmt_db(p), "n/a", "n/a");
        rows.push(json!({"view": i, "psnr": finite_or_sentinel(p), "ssim": s, "mse": e, "lpips": "n/a", "fid": "n/a"}));
    }
    let n = views.len().max(1) as f64;
    let (mp, ms, me) = (sum_psnr / n, sum_ssim / n, sum_mse / n);
    text += &format!("{:>5} {:>9} {ms:>7.4} {me:>10.3e} {:>6} {:>6}\n", "mean", fmt_db(mp), "n/a", "n/a");
    Ok(Output {
        json: json!({
            "views": rows,
            "mean": {"psnr": finite_or_sentinel(mp), "ssim": ms, "mse": me, "lpips": "n/a", "fid": "n/a"},
        }),
        text,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "inf".into()
    }
}

fn info(a: &InfoArgs) -> Result<Output> {
    let manifest: Value = blob::read_json(&a.path.join("manifest.json"))?;
    match manifest["format"].as_str() {
        Some(neutex::bake::BUNDLE_FORMAT) => {
            let b = load_bundle(&a.path)?;
            let m = &b.manifest;
            let summary = json!({
                "kind": "bundle",
                "version": m.version,
                "shading": m.shading,
                "feature_dim": m.feature_dim,
                "quantized": m.quantized,
                "codebook_size": m.codebook_size,
                "atlas": [m.atlas.height, m.atlas.width],
                "atlas_pages": m.atlas.pages.len(),
                "sky_layers": m.sky_layers.len(),
                "vertices": m.mesh.vertex_count,
                "triangles": m.mesh.index_count / 3,
                "draws": m.draw_list.len(),
                "blobs": m.blobs.len(),
                "bytes": m.total_bytes(),
            });
            let text = format!(
                "bundle {} (format {})\n  shading {:?}, D={}, {}\n  atlas {}x{} in {} page(s), {} sky layer(s)\n  mesh {} vertices, {} triangles\n  {} draws, {} blobs, {} bytes\n",
                a.path.display(),
                m.version,
                m.shading,
                m.feature_dim,
                match m.codebook_size {
                    Some(k) if m.quantized => format!("quantized with {k} codes"),
                    _ => "float features".into(),
                },
                m.atlas.height,
                m.atlas.width,
                m.atlas.pages.len(),
                m.sky_layers.len(),
                m.mesh.vertex_count,
                m.mesh.index_count / 3,
                m.draw_list.len(),
                m.blobs.len(),
                m.total_bytes()
            );
            Ok(Output { json: summary, text })
        }
        Some(neutex::scene::SCENE_FORMAT) => {
            let s = load_scene(&a.path)?;
            let p = &s.params;
            let summary = json!({
                "kind": "scene",
                "step": s.progress.step,
                "iterations": s.train.iterations,
                "config": s.config,
                "atlas": [p.atlas.height(), p.atlas.width()],
                "sky_layers": p.skybox.len(),
                "vertices": s.mesh.vertex_count(),
                "triangles": s.mesh.face_count(),
                "codebooks": p.fg_codebook.is_some(),
                "parameters": p.parameter_count(),
            });
            let text = format!(
                "scene {} at step {} of {}\n  shading {:?}, D={}, hidden {:?}, quantization {}\n  atlas {}x{}, {} sky layer(s), mesh {} vertices, {} triangles\n  {} parameters{}\n",
                a.path.display(),
                s.progress.step,
                s.train.iterations,
                s.config.shading,
                s.config.arch.feature_dim,
                s.config.arch.hidden,
                if s.config.quantization.enabled { "on" } else { "off" },
                p.atlas.height(),
                p.atlas.width(),
                p.skybox.len(),
                s.mesh.vertex_count(),
                s.mesh.face_count(),
                p.parameter_count(),
                if p.fg_codebook.is_some() { ", codebooks initialized" } else { "" }
            );
            Ok(Output { json: summary, text })
        }
        other => Err(neutex::Error::invariant(
            "manifest.format",
            format!("expected a scene or bundle, got {}", other.unwrap_or("nothing")),
        )
        .into()),
    }
}
