//! Built-in UV parameterization: near-planar charts grown over face
//! normals, projected to 2D and packed into a square atlas. Meshes that
//! already carry UVs (OBJ `vt`) bypass this step.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{bbox_diagonal_sq, is_degenerate};
use crate::scene::{Mesh, TexturedMesh};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasOptions {
    /// Edge length of the square atlas in texels.
    pub resolution: u32,
    /// Empty texels kept around every chart.
    pub padding: u32,
    /// Largest angle between a face normal and its chart's normal.
    pub max_normal_angle_deg: f64,
    /// Texels per scene unit. `None` picks the largest density that packs.
    pub texels_per_unit: Option<f64>,
}

impl Default for AtlasOptions {
    fn default() -> Self {
        AtlasOptions {
            resolution: 1024,
            padding: 2,
            max_normal_angle_deg: 60.0,
            texels_per_unit: None,
        }
    }
}

impl AtlasOptions {
    fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::invariant("atlas.resolution", "must be > 0"));
        }
        if !(self.max_normal_angle_deg > 0.0 && self.max_normal_angle_deg < 90.0) {
            return Err(Error::invariant(
                "atlas.max_normal_angle_deg",
                format!("must lie in (0, 90), got {}", self.max_normal_angle_deg),
            ));
        }
        if let Some(d) = self.texels_per_unit {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invariant("atlas.texels_per_unit", format!("must be > 0, got {d}")));
            }
        }
        Ok(())
    }
}

type P2 = [f64; 2];

/// A chart: its faces and each face's corners in chart coordinates
/// (scene units, origin at the chart's lower bounding-box corner).
struct Chart {
    faces: Vec<usize>,
    corners: Vec<[P2; 3]>,
    extent: P2,
}

fn basis(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t = geom::normalize(geom::cross(n, helper));
    (t, geom::cross(n, t))
}

fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Whether two counter-clockwise triangles have overlapping interiors.
/// Separating-axis test over the six edge normals with tolerance `eps`.
fn interiors_overlap(a: &[P2; 3], b: &[P2; 3], eps: f64) -> bool {
    for (tri, other) in [(a, b), (b, a)] {
        for k in 0..3 {
            let (p, q) = (tri[k], tri[(k + 1) % 3]);
            // Triangle `tri` lies on the left of its edge; `other` is
            // separated when it lies entirely on the right (within eps).
            if other.iter().all(|&r| cross2(p, q, r) <= eps) {
                return false;
            }
        }
    }
    true
}

/// Uniform-grid index of triangles already placed in a chart.
struct OverlapGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    tris: Vec<[P2; 3]>,
    eps: f64,
}

impl OverlapGrid {
    fn new(cell: f64, eps: f64) -> Self {
        OverlapGrid {
            cell,
            cells: HashMap::new(),
            tris: Vec::new(),
            eps,
        }
    }

    fn keys(&self, t: &[P2; 3]) -> impl Iterator<Item = (i64, i64)> {
        let lo = [0, 1].map(|a| (t.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min) / self.cell).floor() as i64);
        let hi = [0, 1].map(|a| (t.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max) / self.cell).floor() as i64);
        (lo[0]..=hi[0]).flat_map(move |x| (lo[1]..=hi[1]).map(move |y| (x, y)))
    }

    fn collides(&self, t: &[P2; 3]) -> bool {
        self.keys(t).any(|k| {
            self.cells
                .get(&k)
                .is_some_and(|ids| ids.iter().any(|&i| interiors_overlap(&self.tris[i], t, self.eps)))
        })
    }

    fn insert(&mut self, t: [P2; 3]) {
        let id = self.tris.len();
        let keys: Vec<_> = self.keys(&t).collect();
        for k in keys {
            self.cells.entry(k).or_default().push(id);
        }
        self.tris.push(t);
    }
}

fn grow_charts(mesh: &Mesh, opts: &AtlasOptions) -> Vec<Chart> {
    let n = mesh.faces.len();
    let normals: Vec<Vec3> = (0..n)
        .map(|i| {
            let [a, b, c] = mesh.corners(i);
            geom::normalize(geom::triangle_normal(a, b, c))
        })
        .collect();
    let mut edge_faces: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    let mut mean_edge = 0.0;
    for (i, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(i);
            mean_edge += geom::norm(geom::sub(mesh.position(a), mesh.position(b)));
        }
    }
    mean_edge /= (3 * n).max(1) as f64;
    let cos_limit = opts.max_normal_angle_deg.to_radians().cos();
    let eps = 1e-9 * mean_edge * mean_edge;

    let mut chart_of = vec![usize::MAX; n];
    let mut charts = Vec::new();
    for seed in 0..n {
        if chart_of[seed] != usize::MAX {
            continue;
        }
        let id = charts.len();
        let nrm = normals[seed];
        let (t, b) = basis(nrm);
        let project = |f: usize| -> [P2; 3] {
            mesh.corners(f).map(|p| [geom::dot(p, t), geom::dot(p, b)])
        };
        let mut grid = OverlapGrid::new(mean_edge.max(1e-12), eps);
        let mut faces = Vec::new();
        let mut queue = VecDeque::from([seed]);
        chart_of[seed] = id;
        while let Some(f) = queue.pop_front() {
            let tri = project(f);
            if f != seed && grid.collides(&tri) {
                chart_of[f] = usize::MAX;
                continue;
            }
            grid.insert(tri);
            faces.push(f);
            let fv = mesh.faces[f];
            for k in 0..3 {
                let (a, b) = (fv[k], fv[(k + 1) % 3]);
                for &g in &edge_faces[&(a.min(b), a.max(b))] {
                    if chart_of[g] == usize::MAX && geom::dot(normals[g], nrm) >= cos_limit {
                        chart_of[g] = id;
                        queue.push_back(g);
                    }
                }
            }
        }
        // Faces rejected for overlap were released above and may seed or
        // join later charts.
        let corners: Vec<[P2; 3]> = faces.iter().map(|&f| project(f)).collect();
        charts.push(align(faces, corners));
    }
    charts
}

/// Rotates chart coordinates onto their principal axes (long side along
/// u) and moves the bounding box to the origin.
fn align(faces: Vec<usize>, mut corners: Vec<[P2; 3]>) -> Chart {
    let pts: Vec<P2> = corners.iter().flatten().copied().collect();
    let m = pts.len() as f64;
    let mean = [0, 1].map(|a| pts.iter().map(|p| p[a]).sum::<f64>() / m);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let (x, y) = (p[0] - mean[0], p[1] - mean[1]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = angle.sin_cos();
    for tri in &mut corners {
        for p in tri.iter_mut() {
            *p = [c * p[0] + s * p[1], -s * p[0] + c * p[1]];
        }
    }
    let lo = [0, 1].map(|a| corners.iter().flatten().map(|p| p[a]).fold(f64::INFINITY, f64::min));
    let hi = [0, 1].map(|a| corners.iter().flatten().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max));
    for tri in &mut corners {
        for p in tri.iter_mut() {
            *p = [p[0] - lo[0], p[1] - lo[1]];
        }
    }
    Chart {
        faces,
        corners,
        extent: [hi[0] - lo[0], hi[1] - lo[1]],
    }
}

/// Bottom-left skyline packing of `(w, h)` rectangles into an `r x r`
/// square. Returns lower-left corners in input order.
fn skyline_pack(rects: &[(u32, u32)], r: u32) -> Option<Vec<(u32, u32)>> {
    let mut order: Vec<usize> = (0..rects.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(rects[i].1), std::cmp::Reverse(rects[i].0), i));
    // Segments (x, y, width) covering [0, r) left to right.
    let mut sky: Vec<(u32, u32, u32)> = vec![(0, 0, r)];
    let mut out = vec![(0, 0); rects.len()];
    for i in order {
        let (w, h) = rects[i];
        if w > r || h > r {
            return None;
        }
        let mut best: Option<(u32, u32, usize)> = None;
        for s in 0..sky.len() {
            let x = sky[s].0;
            if x + w > r {
                break;
            }
            let mut y = 0;
            let mut covered = 0;
            let mut k = s;
            while covered < w {
                y = y.max(sky[k].1);
                covered += sky[k].2;
                k += 1;
            }
            if y + h <= r && best.is_none_or(|(by, bx, _)| (y, x) < (by, bx)) {
                best = Some((y, x, s));
            }
        }
        let (y, x, _) = best?;
        out[i] = (x, y);
        // Replace the covered span [x, x + w) with the new top.
        let mut next = Vec::with_capacity(sky.len() + 2);
        for &(sx, sy, sw) in &sky {
            let end = sx + sw;
            if end <= x || sx >= x + w {
                next.push((sx, sy, sw));
                continue;
            }
            if sx < x {
                next.push((sx, sy, x - sx));
            }
            if sx < x + w && end > x + w {
                next.push((x + w, sy, end - (x + w)));
            }
        }
        next.push((x, y + h, w));
        next.sort_unstable();
        sky.clear();
        for seg in next {
            match sky.last_mut() {
                Some(last) if last.1 == seg.1 && last.0 + last.2 == seg.0 => last.2 += seg.2,
                _ => sky.push(seg),
            }
        }
    }
    Some(out)
}

fn chart_rects(charts: &[Chart], density: f64, pad: u32) -> Vec<(u32, u32)> {
    charts
        .iter()
        .map(|c| c.extent.map(|e| ((e * density).ceil() as u32).max(1) + 2 * pad))
        .map(|[w, h]| (w, h))
        .collect()
}

/// Smallest square our packer fits the charts into at `density`.
fn required_resolution(charts: &[Chart], density: f64, pad: u32) -> u32 {
    let rects = chart_rects(charts, density, pad);
    let mut hi = rects.iter().map(|&(w, h)| w.max(h)).max().unwrap_or(1).max(1);
    while skyline_pack(&rects, hi).is_none() {
        hi = hi.saturating_mul(2);
    }
    let mut lo = rects.iter().map(|&(w, h)| w.max(h)).max().unwrap_or(1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if skyline_pack(&rects, mid).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    hi
}

/// Assigns every face to a non-overlapping chart inside `[0, 1]^2`.
/// Vertices on chart borders are duplicated so each keeps one UV.
pub fn generate_uv_atlas(mesh: &Mesh, opts: &AtlasOptions) -> Result<TexturedMesh> {
    opts.validate()?;
    mesh.validate()?;
    let diag = bbox_diagonal_sq(&mesh.positions);
    if let Some(i) = mesh.faces.iter().position(|&f| is_degenerate(mesh, f, diag)) {
        return Err(Error::invariant(
            format!("mesh.faces[{i}]"),
            "zero-area face cannot be parameterized; weld or decimate first",
        ));
    }
    let charts = grow_charts(mesh, opts);
    let (r, pad) = (opts.resolution, opts.padding);
    let fail = |density: f64| Error::AtlasPacking {
        resolution: r,
        padding: pad,
        required: required_resolution(&charts, density, pad),
    };
    let (density, placement) = match opts.texels_per_unit {
        Some(d) => {
            let p = skyline_pack(&chart_rects(&charts, d, pad), r).ok_or_else(|| fail(d))?;
            (d, p)
        }
        None => {
            let largest = charts.iter().map(|c| c.extent[0].max(c.extent[1])).fold(0.0, f64::max);
            if largest <= 0.0 {
                return Err(Error::invariant("mesh", "no faces to parameterize"));
            }
            // Any density below this gives every chart a 1-texel interior.
            let floor = 1.0 / largest;
            let fits = |d: f64| skyline_pack(&chart_rects(&charts, d, pad), r);
            let mut best = (floor, fits(floor).ok_or_else(|| fail(floor))?);
            let mut hi = r as f64 / largest;
            let mut lo = floor;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                match fits(mid) {
                    Some(p) => {
                        best = (mid, p);
                        lo = mid;
                    }
                    None => hi = mid,
                }
            }
            best
        }
    };

    let mut chart_of = vec![(0usize, 0usize); mesh.faces.len()];
    for (c, chart) in charts.iter().enumerate() {
        for (k, &f) in chart.faces.iter().enumerate() {
            chart_of[f] = (c, k);
        }
    }
    let scale = 1.0 / r as f64;
    let mut remap: HashMap<(u32, usize), u32> = HashMap::new();
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::with_capacity(mesh.faces.len());
    for (f, fv) in mesh.faces.iter().enumerate() {
        let (c, k) = chart_of[f];
        let (x0, y0) = placement[c];
        let mut nf = [0u32; 3];
        for j in 0..3 {
            let v = fv[j];
            nf[j] = *remap.entry((v, c)).or_insert_with(|| {
                let p = charts[c].corners[k][j];
                let u = (x0 + pad) as f64 + p[0] * density;
                let w = (y0 + pad) as f64 + p[1] * density;
                positions.push(mesh.positions[v as usize]);
                uvs.push([(u * scale).clamp(0.0, 1.0) as f32, (w * scale).clamp(0.0, 1.0) as f32]);
                (positions.len() - 1) as u32
            });
        }
        faces.push(nf);
    }
    log::debug!("uv atlas: {} charts at {density:.3} texels/unit", charts.len());
    TexturedMesh::new(positions, uvs, faces)
}
