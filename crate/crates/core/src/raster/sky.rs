//! Ray exit points on skybox cuboids.

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scene::{CubeFace, Cuboid};

/// Where a ray from inside a cuboid leaves it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitHit {
    pub face: CubeFace,
    /// Ray parameter of the exit point (distance for unit directions).
    pub t: f64,
    /// Exit point in world coordinates.
    pub point: Vec3,
    pub uv: [f64; 2],
}

/// Slab-method exit of the ray `origin + t * dir`. The exit face is the
/// first axis (in x, y, z order) attaining the smallest slab distance.
pub fn exit_hit(bounds: &Cuboid, origin: Vec3, dir: Vec3) -> ExitHit {
    let mut best_t = f64::INFINITY;
    let mut best_axis = 0;
    let mut best_sign = 1.0;
    for a in 0..3 {
        let rel = origin[a] - bounds.center[a];
        let h = bounds.half_extents[a];
        let (t, sign) = if dir[a] > 0.0 {
            ((h - rel) / dir[a], 1.0)
        } else if dir[a] < 0.0 {
            ((-h - rel) / dir[a], -1.0)
        } else {
            continue;
        };
        if t < best_t {
            best_t = t;
            best_axis = a;
            best_sign = sign;
        }
    }
    let face = CubeFace::from_index(2 * best_axis + usize::from(best_sign < 0.0));
    let mut local = [0.0; 3];
    for a in 0..3 {
        local[a] = (origin[a] - bounds.center[a] + best_t * dir[a]) / bounds.half_extents[a];
    }
    local[best_axis] = best_sign;
    let point = [
        bounds.center[0] + local[0] * bounds.half_extents[0],
        bounds.center[1] + local[1] * bounds.half_extents[1],
        bounds.center[2] + local[2] * bounds.half_extents[2],
    ];
    ExitHit {
        face,
        t: best_t,
        point,
        uv: face.uv(local),
    }
}

pub(crate) fn check_inside(bounds: &Cuboid, origin: Vec3, layer: usize) -> Result<()> {
    if bounds.contains(origin) {
        Ok(())
    } else {
        Err(Error::CameraOutside { layer })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(h: f64) -> Cuboid {
        Cuboid {
            center: [0.0; 3],
            half_extents: [h; 3],
        }
    }

    #[test]
    fn axis_ray_hits_face_center() {
        let hit = exit_hit(&cube(2.0), [0.0; 3], [1.0, 0.0, 0.0]);
        assert_eq!(hit.face, CubeFace::PosX);
        assert_eq!(hit.uv, [0.5, 0.5]);
        assert_eq!(hit.point, [2.0, 0.0, 0.0]);
        assert_eq!(hit.t, 2.0);
    }

    #[test]
    fn diagonal_ray_reaches_face_corner() {
        // Along (1, 1, 1)/√3 every slab gives the same distance; x wins the
        // tie, and the exit point is the (+,+,+) corner.
        let d = geom::normalize([1.0, 1.0, 1.0]);
        let hit = exit_hit(&cube(1.0), [0.0; 3], d);
        assert_eq!(hit.face, CubeFace::PosX);
        for a in 0..3 {
            assert!((hit.point[a] - 1.0).abs() < 1e-12);
        }
        // +X face: u = (1 - z) / 2, v = (1 - y) / 2
        assert!(hit.uv[0].abs() < 1e-12 && hit.uv[1].abs() < 1e-12);
        // equidistant in the two non-dominant face coordinates
        let d = geom::normalize([2.0, 1.0, 1.0]);
        let hit = exit_hit(&cube(1.0), [0.0; 3], d);
        assert!((hit.point[1] - hit.point[2]).abs() < 1e-12);
        assert_eq!(hit.uv[0], hit.uv[1]);
    }

    /// Brute force: intersect all six planes and keep the nearest hit whose
    /// point lies on the closed face rectangle.
    fn six_plane_oracle(b: &Cuboid, o: Vec3, d: Vec3) -> (CubeFace, Vec3) {
        let mut best: Option<(f64, CubeFace, Vec3)> = None;
        for face in CubeFace::ALL {
            let (a, s) = face.axis();
            if d[a] == 0.0 {
                continue;
            }
            let plane = b.center[a] + s * b.half_extents[a];
            let t = (plane - o[a]) / d[a];
            if t <= 0.0 {
                continue;
            }
            let p = geom::add(o, geom::scale(d, t));
            let on_face = (0..3).all(|k| k == a || (p[k] - b.center[k]).abs() <= b.half_extents[k] * (1.0 + 1e-12));
            if on_face && best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, face, p));
            }
        }
        let (_, f, p) = best.unwrap();
        (f, p)
    }

    #[test]
    fn random_rays_match_six_plane_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let b = Cuboid {
                center: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                half_extents: [rng.gen_range(2.0..10.0), rng.gen_range(2.0..10.0), rng.gen_range(2.0..10.0)],
            };
            let o = [
                b.center[0] + rng.gen_range(-0.9..0.9) * b.half_extents[0],
                b.center[1] + rng.gen_range(-0.9..0.9) * b.half_extents[1],
                b.center[2] + rng.gen_range(-0.9..0.9) * b.half_extents[2],
            ];
            let d = geom::normalize([rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let hit = exit_hit(&b, o, d);
            let (face, p) = six_plane_oracle(&b, o, d);
            assert_eq!(hit.face, face);
            for a in 0..3 {
                assert!((hit.point[a] - p[a]).abs() < 1e-6);
            }
            let (a, s) = hit.face.axis();
            let extent = b.center[a] + s * b.half_extents[a];
            assert!((hit.point[a] - extent).abs() <= 1e-6 * b.half_extents[a]);
            // the face UV maps back onto the exit point
            let back = hit.face.local_point(hit.uv);
            for k in 0..3 {
                let world = b.center[k] + back[k] * b.half_extents[k];
                assert!((world - hit.point[k]).abs() < 1e-6);
            }
        }
    }
}
