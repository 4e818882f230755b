//! A small procedural scene with analytic ground truth: a textured cube
//! with a glossy finish under a two-layer skybox, observed by cameras on a
//! ring around it.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::image::Image;
use crate::scene::{
    Camera, Cuboid, QuantizationConfig, SceneConfig, SceneInit, SceneState, Shading, TexturedMesh,
};
use crate::shader::ShaderArch;
use crate::train::{TrainConfig, TrainView};

#[derive(Clone, Debug, PartialEq)]
pub struct ToySceneConfig {
    pub width: u32,
    pub height: u32,
    pub train_views: usize,
    pub heldout_views: usize,
    /// Texels along one cube face in the atlas.
    pub chart_texels: usize,
    pub sky_resolution: usize,
    /// Half-extents of the nested skybox cuboids, near to far.
    pub sky_half_extents: Vec<f64>,
    pub feature_dim: usize,
    pub codebook_size: usize,
    pub shading: Shading,
    pub quantization: bool,
    pub seed: u64,
}

impl Default for ToySceneConfig {
    fn default() -> Self {
        ToySceneConfig {
            width: 64,
            height: 64,
            train_views: 16,
            heldout_views: 4,
            chart_texels: 40,
            sky_resolution: 32,
            sky_half_extents: vec![3.0, 10.0],
            feature_dim: 12,
            codebook_size: 256,
            shading: Shading::Neural,
            quantization: true,
            seed: 0,
        }
    }
}

pub struct ToyScene {
    pub state: SceneState,
    pub train: Vec<TrainView>,
    pub heldout: Vec<TrainView>,
}

const CUBE_HALF: f64 = 0.5;
const RING_RADIUS: f64 = 2.2;
const VFOV_DEG: f64 = 50.0;
/// Texels of padding on each side of a chart.
const CHART_PAD: usize = 1;

/// Outward normal, in-face u axis, in-face v axis; `u x v = n`.
const FACE_FRAMES: [(Vec3, Vec3, Vec3); 6] = [
    ([1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]),
    ([-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]),
    ([0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]),
    ([0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
    ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
    ([0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
];

const FACE_COLORS: [[f64; 3]; 6] = [
    [0.80, 0.35, 0.25],
    [0.25, 0.55, 0.80],
    [0.85, 0.80, 0.35],
    [0.35, 0.70, 0.40],
    [0.65, 0.40, 0.75],
    [0.90, 0.60, 0.30],
];

/// Atlas `(height, width)` holding six square charts in a 3x2 grid.
pub fn cube_atlas_dims(chart_texels: usize) -> (usize, usize) {
    let cell = chart_texels + 2 * CHART_PAD;
    (2 * cell, 3 * cell)
}

/// Axis-aligned cube of half-size 0.5 at the origin; each face owns one
/// chart of `chart_texels` texels a side.
pub fn cube_mesh(chart_texels: usize) -> Result<TexturedMesh> {
    let (ah, aw) = cube_atlas_dims(chart_texels);
    let cell = chart_texels + 2 * CHART_PAD;
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (f, &(n, u, v)) in FACE_FRAMES.iter().enumerate() {
        let x0 = ((f % 3) * cell + CHART_PAD) as f64;
        let y0 = ((f / 3) * cell + CHART_PAD) as f64;
        let base = positions.len() as u32;
        for (a, b) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
            let p = geom::add(
                geom::scale(n, CUBE_HALF),
                geom::add(geom::scale(u, (2.0 * a - 1.0) * CUBE_HALF), geom::scale(v, (2.0 * b - 1.0) * CUBE_HALF)),
            );
            positions.push(p.map(|c| c as f32));
            uvs.push([
                ((x0 + a * chart_texels as f64) / aw as f64) as f32,
                ((y0 + b * chart_texels as f64) / ah as f64) as f32,
            ]);
        }
        faces.push([base, base + 1, base + 2]);
        faces.push([base, base + 2, base + 3]);
    }
    TexturedMesh::new(positions, uvs, faces)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Diffuse albedo of face `f` at in-face coordinates `(a, b)` in `[0, 1]`.
fn albedo(f: usize, a: f64, b: f64) -> [f64; 3] {
    let checker = ((a * 4.0).floor() + (b * 4.0).floor()) as i64 % 2 == 0;
    let ring = 0.5 + 0.5 * (2.0 * PI * 3.0 * ((a - 0.5).powi(2) + (b - 0.5).powi(2)).sqrt()).cos();
    let k = if checker { 1.0 } else { 0.7 };
    FACE_COLORS[f].map(|c| c * k * (0.85 + 0.15 * ring))
}

const LIGHT: Vec3 = [0.37139067635410367, 0.7427813527082073, 0.5570860145311555];

fn sky_color(d: Vec3) -> [f64; 3] {
    let h = d[1].clamp(-1.0, 1.0);
    let horizon = [0.85, 0.80, 0.75];
    let zenith = [0.25, 0.45, 0.85];
    let ground = [0.35, 0.30, 0.25];
    let t = smoothstep(-0.05, 0.6, h);
    let g = smoothstep(-0.05, -0.4, h);
    let az = d[2].atan2(d[0]);
    let bands = 0.05 * (3.0 * az).sin() * (1.0 - t);
    let sun = 0.5 * geom::dot(d, LIGHT).max(0.0).powi(32);
    let mut c = [0.0; 3];
    for i in 0..3 {
        let sky = horizon[i] * (1.0 - t) + zenith[i] * t;
        c[i] = (sky * (1.0 - g) + ground[i] * g + bands + sun).clamp(0.0, 1.0);
    }
    c
}

/// Ray-traced ground truth radiance along `dir` from `origin`.
pub fn radiance(origin: Vec3, dir: Vec3) -> [f64; 3] {
    // slab test against the cube
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    for a in 0..3 {
        let inv = 1.0 / dir[a];
        let (mut lo, mut hi) = ((-CUBE_HALF - origin[a]) * inv, (CUBE_HALF - origin[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        if lo > t0 {
            t0 = lo;
            axis = a;
        }
        t1 = t1.min(hi);
    }
    if !(t0 <= t1 && t0 > 0.0) {
        return sky_color(dir);
    }
    let p = geom::add(origin, geom::scale(dir, t0));
    let sign = if p[axis] > 0.0 { 1.0 } else { -1.0 };
    let f = FACE_FRAMES
        .iter()
        .position(|(n, _, _)| n[axis] == sign)
        .expect("every axis direction has a face");
    let (n, u, v) = FACE_FRAMES[f];
    let a = (geom::dot(p, u) / CUBE_HALF + 1.0) * 0.5;
    let b = (geom::dot(p, v) / CUBE_HALF + 1.0) * 0.5;
    let base = albedo(f, a, b);
    let diffuse = 0.55 + 0.45 * geom::dot(n, LIGHT).max(0.0);
    let r = geom::sub(dir, geom::scale(n, 2.0 * geom::dot(dir, n)));
    let spec = 0.35 * geom::dot(r, LIGHT).max(0.0).powi(12);
    base.map(|c| (c * diffuse + spec).clamp(0.0, 1.0))
}

pub fn render_ground_truth(cam: &Camera) -> Image {
    let origin = cam.center();
    Image::from_fn(cam.width() as usize, cam.height() as usize, |x, y| {
        radiance(origin, cam.pixel_ray(x as u32, y as u32)).map(|c| c as f32)
    })
}

/// Camera on the ring at azimuth `az` and elevation `el` (radians).
pub fn ring_camera(az: f64, el: f64, width: u32, height: u32) -> Result<Camera> {
    let eye = [
        RING_RADIUS * el.cos() * az.cos(),
        RING_RADIUS * el.sin(),
        RING_RADIUS * el.cos() * az.sin(),
    ];
    Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], VFOV_DEG, width, height)
}

/// Training cameras alternate between two elevations around the full ring;
/// held-out cameras sit between them at intermediate azimuths and heights.
pub fn toy_cameras(cfg: &ToySceneConfig) -> Result<(Vec<Camera>, Vec<Camera>)> {
    let n = cfg.train_views;
    let train = (0..n)
        .map(|i| {
            let el = if i % 2 == 0 { 0.45 } else { -0.15 };
            ring_camera(2.0 * PI * i as f64 / n as f64, el, cfg.width, cfg.height)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = cfg.heldout_views;
    let heldout = (0..m)
        .map(|j| {
            let az = 2.0 * PI * (j as f64 + 0.37) / m as f64;
            ring_camera(az, 0.15, cfg.width, cfg.height)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, heldout))
}

pub fn toy_scene(cfg: &ToySceneConfig, train: TrainConfig) -> Result<ToyScene> {
    let mesh = cube_mesh(cfg.chart_texels)?;
    let (ah, aw) = cube_atlas_dims(cfg.chart_texels);
    let config = SceneConfig {
        arch: ShaderArch {
            feature_dim: cfg.feature_dim,
            ..SceneConfig::default().arch
        },
        shading: cfg.shading,
        quantization: QuantizationConfig {
            enabled: cfg.quantization,
            codebook_size: cfg.codebook_size,
        },
        backface_culling: true,
    };
    let init = SceneInit {
        atlas_height: ah,
        atlas_width: aw,
        sky_layers: cfg
            .sky_half_extents
            .iter()
            .map(|&h| Cuboid {
                center: [0.0; 3],
                half_extents: [h; 3],
            })
            .collect(),
        sky_resolution: cfg.sky_resolution,
        init_scale: 0.1,
        seed: cfg.seed,
    };
    let state = SceneState::initialize(mesh, config, train, &init)?;
    let (train_cams, heldout_cams) = toy_cameras(cfg)?;
    let view = |camera: Camera| TrainView {
        image: render_ground_truth(&camera),
        camera,
        mask: None,
    };
    Ok(ToyScene {
        state,
        train: train_cams.into_iter().map(view).collect(),
        heldout: heldout_cams.into_iter().map(view).collect(),
    })
}
