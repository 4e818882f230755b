//! Greedy quadric-error edge-collapse simplification.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::mesh::{bbox_diagonal_sq, is_degenerate, DEGENERATE_REL_AREA};
use crate::scene::Mesh;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecimationConfig {
    pub target_vertices: usize,
    /// Grid cell used by the clustering pass that precedes decimation, in
    /// scene units (meters).
    pub cell_size: f64,
    /// Scale of the quadric that pins boundary edges to their plane
    /// perpendicular to the adjacent face.
    pub boundary_weight: f64,
}

impl Default for DecimationConfig {
    fn default() -> Self {
        DecimationConfig {
            target_vertices: 50_000,
            cell_size: 0.01,
            boundary_weight: 1.0,
        }
    }
}

impl DecimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_vertices < 4 {
            return Err(Error::invariant("decimation.target_vertices", format!("must be >= 4, got {}", self.target_vertices)));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::invariant("decimation.cell_size", format!("must be > 0, got {}", self.cell_size)));
        }
        if !(self.boundary_weight.is_finite() && self.boundary_weight >= 0.0) {
            return Err(Error::invariant("decimation.boundary_weight", format!("must be >= 0, got {}", self.boundary_weight)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecimationOutcome {
    pub mesh: Mesh,
    pub collapses: usize,
    /// The target was at least the input vertex count, so the input was
    /// returned unchanged.
    pub target_exceeds_input: bool,
    /// False when every remaining collapse would fold or degenerate a face
    /// before the target was reached.
    pub reached_target: bool,
}

/// Symmetric 4x4 error quadric, upper triangle row by row.
#[derive(Clone, Copy, Debug, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    /// `(n·x + d)^2 * weight` for a unit normal `n`.
    fn plane(n: Vec3, d: f64, weight: f64) -> Self {
        let [a, b, c] = n;
        Quadric([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d].map(|v| v * weight))
    }

    fn add(&mut self, o: &Quadric) {
        for (x, y) in self.0.iter_mut().zip(&o.0) {
            *x += y;
        }
    }

    fn sum(a: &Quadric, b: &Quadric) -> Quadric {
        let mut q = *a;
        q.add(b);
        q
    }

    fn error(&self, p: Vec3) -> f64 {
        let [aa, ab, ac, ad, bb, bc, bd, cc, cd, dd] = self.0;
        let [x, y, z] = p;
        aa * x * x + 2.0 * ab * x * y + 2.0 * ac * x * z + 2.0 * ad * x + bb * y * y + 2.0 * bc * y * z + 2.0 * bd * y
            + cc * z * z
            + 2.0 * cd * z
            + dd
    }

    /// Minimizer of the error when the quadratic part is well conditioned.
    fn minimizer(&self) -> Option<Vec3> {
        let [aa, ab, ac, ad, bb, bc, bd, cc, cd, _] = self.0;
        let m = [[aa, ab, ac], [ab, bb, bc], [ac, bc, cc]];
        let det = aa * (bb * cc - bc * bc) - ab * (ab * cc - bc * ac) + ac * (ab * bc - bb * ac);
        let scale = aa.abs().max(bb.abs()).max(cc.abs());
        if scale == 0.0 || det.abs() <= 1e-10 * scale.powi(3) {
            return None;
        }
        let rhs = [-ad, -bd, -cd];
        // Cramer's rule.
        let solve = |col: usize| {
            let mut k = m;
            for r in 0..3 {
                k[r][col] = rhs[r];
            }
            k[0][0] * (k[1][1] * k[2][2] - k[1][2] * k[2][1]) - k[0][1] * (k[1][0] * k[2][2] - k[1][2] * k[2][0])
                + k[0][2] * (k[1][0] * k[2][1] - k[1][1] * k[2][0])
        };
        Some([solve(0) / det, solve(1) / det, solve(2) / det])
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    keep: u32,
    remove: u32,
    versions: [u32; 2],
    target: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.cost
            .total_cmp(&o.cost)
            .then(self.keep.cmp(&o.keep))
            .then(self.remove.cmp(&o.remove))
    }
}

struct State {
    pos: Vec<Vec3>,
    quadric: Vec<Quadric>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<u32>>,
    version: Vec<u32>,
    vertex_alive: Vec<bool>,
    diag_sq: f64,
}

fn face_normal(p: [Vec3; 3]) -> Vec3 {
    geom::cross(geom::sub(p[1], p[0]), geom::sub(p[2], p[0]))
}

impl State {
    fn candidate(&self, u: u32, v: u32) -> Candidate {
        let (keep, remove) = (u.min(v), u.max(v));
        let q = Quadric::sum(&self.quadric[keep as usize], &self.quadric[remove as usize]);
        let (a, b) = (self.pos[keep as usize], self.pos[remove as usize]);
        let mid = geom::scale(geom::add(a, b), 0.5);
        let reach = geom::norm(geom::sub(a, b));
        let mut best = (q.error(a), a);
        for p in [b, mid] {
            let e = q.error(p);
            if e < best.0 {
                best = (e, p);
            }
        }
        if let Some(p) = q.minimizer() {
            // Far-away minimizers come from near-singular quadrics.
            if geom::norm(geom::sub(p, mid)) <= reach {
                let e = q.error(p);
                if e < best.0 {
                    best = (e, p);
                }
            }
        }
        Candidate {
            cost: best.0.max(0.0),
            keep,
            remove,
            versions: [self.version[keep as usize], self.version[remove as usize]],
            target: best.1,
        }
    }

    fn live_faces(&self, v: u32) -> impl Iterator<Item = u32> + '_ {
        self.vertex_faces[v as usize].iter().copied().filter(|&f| self.face_alive[f as usize])
    }

    /// Whether collapsing keeps every surviving face non-degenerate, unflipped
    /// and distinct.
    fn collapse_is_valid(&self, c: &Candidate) -> bool {
        let mut kept_sets = BTreeSet::new();
        for f in self.live_faces(c.keep) {
            let mut s = self.faces[f as usize];
            if s.contains(&c.remove) {
                continue;
            }
            s.sort_unstable();
            kept_sets.insert(s);
        }
        let limit = DEGENERATE_REL_AREA * self.diag_sq;
        for v in [c.keep, c.remove] {
            for f in self.live_faces(v) {
                let face = self.faces[f as usize];
                if face.contains(&c.keep) && face.contains(&c.remove) {
                    continue;
                }
                let old = face.map(|i| self.pos[i as usize]);
                let moved = face.map(|i| if i == c.keep || i == c.remove { c.target } else { self.pos[i as usize] });
                let (n0, n1) = (face_normal(old), face_normal(moved));
                if geom::norm(n1) <= limit || geom::dot(n0, n1) <= 0.0 {
                    return false;
                }
                if v == c.remove {
                    let mut s = face.map(|i| if i == c.remove { c.keep } else { i });
                    s.sort_unstable();
                    if kept_sets.contains(&s) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Collapses edges in order of increasing quadric error until at most
/// `target_vertices` vertices remain. Planes of incident faces accumulate per
/// vertex regardless of manifoldness; boundary edges add a penalty plane.
/// Degenerate input faces are dropped first.
pub fn decimate(mesh: &Mesh, cfg: &DecimationConfig) -> Result<DecimationOutcome> {
    cfg.validate()?;
    mesh.validate()?;
    let diag_sq = bbox_diagonal_sq(&mesh.positions);
    let faces: Vec<[u32; 3]> = mesh.faces.iter().copied().filter(|&f| !is_degenerate(mesh, f, diag_sq)).collect();
    let mut used = vec![false; mesh.positions.len()];
    faces.iter().flatten().for_each(|&v| used[v as usize] = true);
    let cleaned = if faces.len() == mesh.faces.len() && used.iter().all(|&u| u) {
        mesh.clone()
    } else {
        Mesh {
            positions: mesh.positions.clone(),
            faces,
        }
        .compact()
    };
    let n = cleaned.vertex_count();
    if cfg.target_vertices >= n {
        return Ok(DecimationOutcome {
            mesh: cleaned,
            collapses: 0,
            target_exceeds_input: cfg.target_vertices > n,
            reached_target: true,
        });
    }

    let pos: Vec<Vec3> = cleaned.positions.iter().map(|&p| geom::to_f64(p)).collect();
    let mut quadric = vec![Quadric::default(); n];
    let mut vertex_faces = vec![Vec::new(); n];
    let mut edge_faces: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for (i, f) in cleaned.faces.iter().enumerate() {
        let p = f.map(|v| pos[v as usize]);
        let nrm = geom::normalize(face_normal(p));
        let q = Quadric::plane(nrm, -geom::dot(nrm, p[0]), 1.0);
        for k in 0..3 {
            quadric[f[k] as usize].add(&q);
            vertex_faces[f[k] as usize].push(i as u32);
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edge_faces.entry((a.min(b), a.max(b))).or_default().push(i as u32);
        }
    }
    for (&(a, b), fs) in &edge_faces {
        if fs.len() != 1 || cfg.boundary_weight == 0.0 {
            continue;
        }
        let f = cleaned.faces[fs[0] as usize];
        let nrm = geom::normalize(face_normal(f.map(|v| pos[v as usize])));
        let (pa, pb) = (pos[a as usize], pos[b as usize]);
        let m = geom::normalize(geom::cross(geom::sub(pb, pa), nrm));
        let q = Quadric::plane(m, -geom::dot(m, pa), cfg.boundary_weight);
        quadric[a as usize].add(&q);
        quadric[b as usize].add(&q);
    }

    let mut st = State {
        pos,
        quadric,
        faces: cleaned.faces.clone(),
        face_alive: vec![true; cleaned.faces.len()],
        vertex_faces,
        version: vec![0; n],
        vertex_alive: vec![true; n],
        diag_sq,
    };
    let mut heap: BinaryHeap<Reverse<Candidate>> =
        edge_faces.keys().map(|&(a, b)| Reverse(st.candidate(a, b))).collect();
    let mut alive = n;
    let mut collapses = 0;
    while alive > cfg.target_vertices {
        let Some(Reverse(c)) = heap.pop() else { break };
        let (k, r) = (c.keep as usize, c.remove as usize);
        if !st.vertex_alive[k] || !st.vertex_alive[r] || c.versions != [st.version[k], st.version[r]] {
            continue;
        }
        if !st.collapse_is_valid(&c) {
            continue;
        }
        st.pos[k] = c.target;
        let qr = st.quadric[r];
        st.quadric[k].add(&qr);
        let mut touched = BTreeSet::new();
        for f in std::mem::take(&mut st.vertex_faces[r]) {
            if !st.face_alive[f as usize] {
                continue;
            }
            let face = &mut st.faces[f as usize];
            if face.contains(&c.keep) {
                st.face_alive[f as usize] = false;
                touched.extend(face.iter().copied());
            } else {
                for v in face.iter_mut() {
                    if *v == c.remove {
                        *v = c.keep;
                    }
                }
                st.vertex_faces[k].push(f);
            }
        }
        st.vertex_alive[r] = false;
        alive -= 1;
        st.version[k] += 1;
        st.version[r] += 1;
        for v in touched {
            if v != c.remove && st.vertex_alive[v as usize] && st.live_faces(v).next().is_none() {
                st.vertex_alive[v as usize] = false;
                alive -= 1;
            }
        }
        let live: Vec<u32> = st.live_faces(c.keep).collect();
        st.vertex_faces[k] = live.clone();
        let mut neighbors = BTreeSet::new();
        for f in live {
            neighbors.extend(st.faces[f as usize].iter().copied().filter(|&v| v != c.keep));
        }
        for v in neighbors {
            heap.push(Reverse(st.candidate(c.keep, v)));
        }
        collapses += 1;
    }

    let faces: Vec<[u32; 3]> = st
        .faces
        .iter()
        .zip(&st.face_alive)
        .filter(|(_, &a)| a)
        .map(|(f, _)| *f)
        .collect();
    let positions = st.pos.iter().map(|p| p.map(|c| c as f32)).collect();
    let out = Mesh { positions, faces }.compact();
    let reached_target = out.vertex_count() <= cfg.target_vertices;
    Ok(DecimationOutcome {
        mesh: out,
        collapses,
        target_exceeds_input: false,
        reached_target,
    })
}
