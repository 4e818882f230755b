//! Tiled, z-buffered triangle rasterization with perspective-correct UVs.

use rayon::prelude::*;

use crate::geom::{self, Vec3};
use crate::scene::{Camera, TexturedMesh};

/// Side of the square screen tiles processed in parallel.
pub const TILE: usize = 32;
/// View-space depth of the near clipping plane.
pub const NEAR_PLANE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterOptions {
    /// Discard triangles whose front side (counter-clockwise winding about
    /// the outward normal) faces away from the camera.
    pub backface_culling: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions {
            backface_culling: true,
        }
    }
}

/// Nearest surface seen through a pixel center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub face: u32,
    /// View-space z.
    pub depth: f64,
    pub uv: [f64; 2],
}

#[derive(Clone, Copy, Debug)]
struct ClipVertex {
    p: Vec3,
    uv: [f64; 2],
}

#[derive(Clone, Debug)]
struct ScreenTriangle {
    face: u32,
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    uv_over_z: [[f64; 2]; 3],
    top_left: [bool; 3],
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`.
    bounds: [usize; 4],
}

#[inline]
fn raw_edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Edge function evaluated with endpoints in lexicographic order so that
/// the two triangles sharing an edge get exactly opposite values.
#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) > (b[0], b[1]) {
        -raw_edge(b, a, p)
    } else {
        raw_edge(a, b, p)
    }
}

/// Top or left edge of a triangle with positive area in y-down screen space.
#[inline]
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Front-facing test in camera space: the counter-clockwise normal points
/// towards the eye at the origin.
#[inline]
pub(crate) fn front_facing(a: Vec3, b: Vec3, c: Vec3) -> bool {
    let n = geom::cross(geom::sub(b, a), geom::sub(c, a));
    geom::dot(n, geom::scale(a, -1.0)) > 0.0
}

fn clip_near(poly: &[ClipVertex]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let ain = a.p[2] >= NEAR_PLANE;
        let bin = b.p[2] >= NEAR_PLANE;
        if ain {
            out.push(a);
        }
        if ain != bin {
            let t = (NEAR_PLANE - a.p[2]) / (b.p[2] - a.p[2]);
            let mut p = geom::add(a.p, geom::scale(geom::sub(b.p, a.p), t));
            p[2] = NEAR_PLANE;
            out.push(ClipVertex {
                p,
                uv: [a.uv[0] + t * (b.uv[0] - a.uv[0]), a.uv[1] + t * (b.uv[1] - a.uv[1])],
            });
        }
    }
    out
}

fn setup(
    face: u32,
    verts: [ClipVertex; 3],
    cam: &Camera,
    width: usize,
    height: usize,
) -> Option<ScreenTriangle> {
    let mut p = verts.map(|v| cam.project_camera(v.p));
    let mut inv_z = verts.map(|v| 1.0 / v.p[2]);
    let mut uvz = verts.map(|v| [v.uv[0] / v.p[2], v.uv[1] / v.p[2]]);
    let area = edge(p[1], p[2], p[0]);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    if area < 0.0 {
        p.swap(1, 2);
        inv_z.swap(1, 2);
        uvz.swap(1, 2);
    }
    let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
    let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
    let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
    // pixels whose centers can fall inside
    let x0 = (min_x - 0.5).ceil().max(0.0);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let x1 = (max_x - 0.5).floor().min(width as f64 - 1.0);
    let y1 = (max_y - 0.5).floor().min(height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    let top_left = [
        is_top_left(p[1], p[2]),
        is_top_left(p[2], p[0]),
        is_top_left(p[0], p[1]),
    ];
    Some(ScreenTriangle {
        face,
        p,
        inv_z,
        uv_over_z: uvz,
        top_left,
        bounds: [x0 as usize, y0 as usize, x1 as usize, y1 as usize],
    })
}

/// Clips, culls and projects every face, in face order.
fn prepare(mesh: &TexturedMesh, cam: &Camera, opts: &RasterOptions) -> Vec<ScreenTriangle> {
    let (w, h) = (cam.width() as usize, cam.height() as usize);
    let mut tris = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let cv = f.map(|i| {
            let p = mesh.positions[i as usize];
            let uv = mesh.uvs[i as usize];
            ClipVertex {
                p: cam.to_camera(geom::to_f64(p)),
                uv: [uv[0] as f64, uv[1] as f64],
            }
        });
        if opts.backface_culling && !front_facing(cv[0].p, cv[1].p, cv[2].p) {
            continue;
        }
        let poly = if cv.iter().all(|v| v.p[2] >= NEAR_PLANE) {
            cv.to_vec()
        } else {
            clip_near(&cv)
        };
        for k in 1..poly.len().saturating_sub(1) {
            if let Some(t) = setup(fi as u32, [poly[0], poly[k], poly[k + 1]], cam, w, h) {
                tris.push(t);
            }
        }
    }
    tris
}

/// Pixel rectangle `[x0, y0, x1, y1)` of tile `t`.
pub(crate) fn tile_rect(t: usize, width: usize, height: usize) -> [usize; 4] {
    let tiles_x = width.div_ceil(TILE);
    let (tx, ty) = (t % tiles_x, t / tiles_x);
    [
        tx * TILE,
        ty * TILE,
        ((tx + 1) * TILE).min(width),
        ((ty + 1) * TILE).min(height),
    ]
}

pub(crate) fn tile_count(width: usize, height: usize) -> usize {
    width.div_ceil(TILE) * height.div_ceil(TILE)
}

/// Rasterizes `mesh` from `cam`; returns the nearest fragment per pixel,
/// row-major. Depth ties keep the lower face index.
pub fn rasterize_fragments(mesh: &TexturedMesh, cam: &Camera, opts: &RasterOptions) -> Vec<Option<Fragment>> {
    let (w, h) = (cam.width() as usize, cam.height() as usize);
    let tris = prepare(mesh, cam, opts);
    let tiles_x = w.div_ceil(TILE);
    let n_tiles = tile_count(w, h);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_tiles];
    for (i, t) in tris.iter().enumerate() {
        let [x0, y0, x1, y1] = t.bounds;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    let tiles: Vec<Vec<Option<Fragment>>> = (0..n_tiles)
        .into_par_iter()
        .map(|ti| raster_tile(&tris, &bins[ti], tile_rect(ti, w, h)))
        .collect();
    let mut out = vec![None; w * h];
    for (ti, frags) in tiles.into_iter().enumerate() {
        let [x0, y0, x1, _] = tile_rect(ti, w, h);
        let tw = x1 - x0;
        for (k, f) in frags.into_iter().enumerate() {
            out[(y0 + k / tw) * w + x0 + k % tw] = f;
        }
    }
    out
}

fn raster_tile(tris: &[ScreenTriangle], bin: &[u32], rect: [usize; 4]) -> Vec<Option<Fragment>> {
    let [tx0, ty0, tx1, ty1] = rect;
    let tw = tx1 - tx0;
    let mut frags: Vec<Option<Fragment>> = vec![None; tw * (ty1 - ty0)];
    let mut zbuf = vec![f64::INFINITY; frags.len()];
    for &ti in bin {
        let t = &tris[ti as usize];
        let [bx0, by0, bx1, by1] = t.bounds;
        for y in by0.max(ty0)..=by1.min(ty1 - 1) {
            for x in bx0.max(tx0)..=bx1.min(tx1 - 1) {
                let pc = [x as f64 + 0.5, y as f64 + 0.5];
                let e = [
                    edge(t.p[1], t.p[2], pc),
                    edge(t.p[2], t.p[0], pc),
                    edge(t.p[0], t.p[1], pc),
                ];
                let inside = (0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && t.top_left[i]));
                if !inside {
                    continue;
                }
                let sum = e[0] + e[1] + e[2];
                let l = [e[0] / sum, e[1] / sum, e[2] / sum];
                let w = l[0] * t.inv_z[0] + l[1] * t.inv_z[1] + l[2] * t.inv_z[2];
                let depth = 1.0 / w;
                let k = (y - ty0) * tw + (x - tx0);
                if depth < zbuf[k] {
                    zbuf[k] = depth;
                    let u = (l[0] * t.uv_over_z[0][0] + l[1] * t.uv_over_z[1][0] + l[2] * t.uv_over_z[2][0]) / w;
                    let v = (l[0] * t.uv_over_z[0][1] + l[1] * t.uv_over_z[1][1] + l[2] * t.uv_over_z[2][1]) / w;
                    frags[k] = Some(Fragment {
                        face: t.face,
                        depth,
                        uv: [u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)],
                    });
                }
            }
        }
    }
    frags
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn camera(w: u32, h: u32) -> Camera {
        Camera::look_at([0.0, 0.0, -3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 60.0, w, h).unwrap()
    }

    /// Quad in the z = 0 plane facing the camera at z = -3.
    fn quad(size: f32) -> TexturedMesh {
        let s = size;
        TexturedMesh::new(
            vec![[-s, -s, 0.0], [s, -s, 0.0], [s, s, 0.0], [-s, s, 0.0]],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn orient_towards_camera(mut m: TexturedMesh, cam: &Camera) -> TexturedMesh {
        for f in &mut m.faces {
            let [a, b, c] = f.map(|i| cam.to_camera(geom::to_f64(m.positions[i as usize])));
            if !front_facing(a, b, c) {
                f.swap(1, 2);
            }
        }
        m
    }

    #[test]
    fn full_screen_quad_covers_everything() {
        let cam = camera(16, 12);
        let m = orient_towards_camera(quad(100.0), &cam);
        let frags = rasterize_fragments(&m, &cam, &RasterOptions::default());
        assert!(frags.iter().all(|f| f.is_some()));
    }

    #[test]
    fn looking_away_gives_no_coverage() {
        let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0, 0.0, -6.0], [0.0, 1.0, 0.0], 60.0, 8, 8).unwrap();
        let m = quad(1.0);
        let opts = RasterOptions {
            backface_culling: false,
        };
        assert!(rasterize_fragments(&m, &cam, &opts).iter().all(|f| f.is_none()));
    }

    #[test]
    fn backface_culling_removes_reversed_quad() {
        let cam = camera(8, 8);
        let mut m = orient_towards_camera(quad(1.0), &cam);
        for f in &mut m.faces {
            f.swap(1, 2);
        }
        assert!(rasterize_fragments(&m, &cam, &RasterOptions::default()).iter().all(|f| f.is_none()));
        let opts = RasterOptions {
            backface_culling: false,
        };
        assert!(rasterize_fragments(&m, &cam, &opts).iter().any(|f| f.is_some()));
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // A floor plane running from behind the camera to far ahead.
        let cam = Camera::look_at([0.0, 1.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0], 90.0, 16, 16).unwrap();
        let m = TexturedMesh::new(
            vec![[-5.0, 0.0, -5.0], [5.0, 0.0, -5.0], [5.0, 0.0, 5.0], [-5.0, 0.0, 5.0]],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let m = orient_towards_camera(m, &cam);
        let frags = rasterize_fragments(
            &m,
            &cam,
            &RasterOptions {
                backface_culling: false,
            },
        );
        // coverage and UV against the analytic ray-plane intersection
        for y in 0..16u32 {
            for x in 0..16u32 {
                let d = cam.pixel_ray(x, y);
                let hit = if d[1] < 0.0 {
                    let t = -1.0 / d[1];
                    let p = [d[0] * t, 0.0, d[2] * t];
                    (p[0].abs() < 5.0 && p[2].abs() < 5.0).then_some(p)
                } else {
                    None
                };
                let f = frags[(y * 16 + x) as usize];
                assert_eq!(f.is_some(), hit.is_some(), "pixel {x},{y}");
                if let (Some(f), Some(p)) = (f, hit) {
                    assert!((f.uv[0] - (p[0] + 5.0) / 10.0).abs() < 1e-4);
                    assert!((f.uv[1] - (p[2] + 5.0) / 10.0).abs() < 1e-4);
                    assert!(f.depth > NEAR_PLANE);
                }
            }
        }
        assert!(frags.iter().any(|f| f.is_some()));
    }

    proptest! {
        /// Two triangles sharing a diagonal cover every pixel of their union
        /// exactly once.
        #[test]
        fn shared_edges_are_owned_once(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0,
            cx in -1.0f64..1.0, cy in -1.0f64..1.0,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0,
        ) {
            let cam = camera(24, 24);
            let pts = [[ax, ay], [bx, by], [cx, cy], [dx, dy]];
            let positions: Vec<[f32; 3]> = pts.iter().map(|p| [p[0] as f32, p[1] as f32, 0.0]).collect();
            let uvs = vec![[0.0, 0.0]; 4];
            for tri in [[0u32, 1, 2], [0, 2, 3]] {
                let [a, b, c] = tri.map(|i| geom::to_f64(positions[i as usize]));
                prop_assume!(geom::triangle_area(a, b, c) > 1e-6);
            }
            let opts = RasterOptions { backface_culling: false };
            let both = TexturedMesh { positions: positions.clone(), uvs: uvs.clone(), faces: vec![[0, 1, 2], [0, 2, 3]] };
            let first = TexturedMesh { positions: positions.clone(), uvs: uvs.clone(), faces: vec![[0, 1, 2]] };
            let second = TexturedMesh { positions, uvs, faces: vec![[0, 2, 3]] };
            let fb = rasterize_fragments(&both, &cam, &opts);
            let f1 = rasterize_fragments(&first, &cam, &opts);
            let f2 = rasterize_fragments(&second, &cam, &opts);
            let side = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
            let convex = side(pts[0], pts[2], pts[1]) * side(pts[0], pts[2], pts[3]) < 0.0
                && side(pts[1], pts[3], pts[0]) * side(pts[1], pts[3], pts[2]) < 0.0;
            for i in 0..fb.len() {
                let n = f1[i].is_some() as u8 + f2[i].is_some() as u8;
                prop_assert_eq!(fb[i].is_some(), n > 0);
                if convex {
                    prop_assert!(n <= 1, "pixel {} covered twice", i);
                }
            }
        }

        #[test]
        fn determinism_across_thread_counts(seed in 0u64..20) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let positions: Vec<[f32; 3]> = (0..n).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..2.0)]).collect();
            let uvs: Vec<[f32; 2]> = (0..n).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
            let faces: Vec<[u32; 3]> = (0..n as u32 / 3).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
            let m = TexturedMesh { positions, uvs, faces };
            let cam = camera(70, 45);
            let opts = RasterOptions { backface_culling: false };
            let run = |threads| {
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
                    .install(|| rasterize_fragments(&m, &cam, &opts))
            };
            prop_assert_eq!(run(1), run(4));
        }
    }

    #[test]
    fn shared_edge_partition_on_fixed_grid() {
        // Pixel centers land exactly on the diagonal of this quad.
        let cam = Camera::new(
            [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            crate::scene::Intrinsics {
                fx: 8.0,
                fy: 8.0,
                cx: 8.0,
                cy: 8.0,
            },
            16,
            16,
        )
        .unwrap();
        // screen = 8 * p + 8 at z = 1; quad spans pixel coordinates [0, 16]
        let m = TexturedMesh {
            positions: vec![[-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]],
            uvs: vec![[0.0, 0.0]; 4],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        };
        let opts = RasterOptions {
            backface_culling: false,
        };
        let f = rasterize_fragments(&m, &cam, &opts);
        assert!(f.iter().all(|x| x.is_some()));
        let first = TexturedMesh {
            faces: vec![[0, 1, 2]],
            ..m.clone()
        };
        let second = TexturedMesh {
            faces: vec![[0, 2, 3]],
            ..m
        };
        let a = rasterize_fragments(&first, &cam, &opts);
        let b = rasterize_fragments(&second, &cam, &opts);
        for i in 0..256 {
            assert_eq!(a[i].is_some() as u8 + b[i].is_some() as u8, 1, "pixel {i}");
        }
    }
}
