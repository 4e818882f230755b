use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera. Camera frame: +x right, +y down, +z forward; pixel
/// `(x, y)` samples at its center `(x + 0.5, y + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
    intrinsics: Intrinsics,
    width: u32,
    height: u32,
}

/// On-disk form: a row-major 4x4 world-to-camera matrix plus intrinsics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    pub world_to_camera: [f64; 16],
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        Camera::new(r.world_to_camera, r.intrinsics, r.width, r.height)
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        CameraRecord {
            world_to_camera: c.world_to_camera(),
            intrinsics: c.intrinsics,
            width: c.width,
            height: c.height,
        }
    }
}

impl Camera {
    pub fn new(world_to_camera: [f64; 16], intrinsics: Intrinsics, width: u32, height: u32) -> Result<Self> {
        let m = world_to_camera;
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::invariant("camera.world_to_camera", "non-finite entry"));
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::invariant(
                "camera.world_to_camera",
                "last row must be [0, 0, 0, 1]",
            ));
        }
        let rotation = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
        for i in 0..3 {
            for j in 0..3 {
                let d = geom::dot(rotation[i], rotation[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::invariant(
                        "camera.world_to_camera",
                        "rotation block is not orthonormal",
                    ));
                }
            }
        }
        if geom::dot(geom::cross(rotation[0], rotation[1]), rotation[2]) <= 0.0 {
            return Err(Error::invariant(
                "camera.world_to_camera",
                "rotation block is a reflection",
            ));
        }
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::invariant("camera.intrinsics", "focal lengths must be > 0"));
        }
        if !(intrinsics.cx.is_finite() && intrinsics.cy.is_finite()) {
            return Err(Error::invariant("camera.intrinsics", "non-finite principal point"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invariant("camera.resolution", "must be at least 1x1"));
        }
        Ok(Camera {
            rotation,
            translation: [m[3], m[7], m[11]],
            intrinsics,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly world-up and a
    /// vertical field of view in degrees.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, vfov_deg: f64, width: u32, height: u32) -> Result<Self> {
        let z = geom::normalize(geom::sub(target, eye));
        let x = geom::normalize(geom::cross(z, up));
        if geom::norm(x) < 0.5 {
            return Err(Error::InvalidArgument("look_at: up is parallel to view direction".into()));
        }
        let y = geom::cross(z, x);
        let t = [-geom::dot(x, eye), -geom::dot(y, eye), -geom::dot(z, eye)];
        let f = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        let m = [
            x[0], x[1], x[2], t[0], //
            y[0], y[1], y[2], t[1], //
            z[0], z[1], z[2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ];
        Camera::new(
            m,
            Intrinsics {
                fx: f,
                fy: f,
                cx: 0.5 * width as f64,
                cy: 0.5 * height as f64,
            },
            width,
            height,
        )
    }

    pub fn world_to_camera(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], //
            r[1][0], r[1][1], r[1][2], t[1], //
            r[2][0], r[2][1], r[2][2], t[2], //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        let r = &self.rotation;
        let t = self.translation;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    #[inline]
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        geom::add([geom::dot(r[0], p), geom::dot(r[1], p), geom::dot(r[2], p)], self.translation)
    }

    #[inline]
    pub fn direction_to_world(&self, d: Vec3) -> Vec3 {
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Unit world-space direction of the ray through the center of pixel `(x, y)`.
    #[inline]
    pub fn pixel_ray(&self, x: u32, y: u32) -> Vec3 {
        let k = &self.intrinsics;
        let dc = [
            (x as f64 + 0.5 - k.cx) / k.fx,
            (y as f64 + 0.5 - k.cy) / k.fy,
            1.0,
        ];
        geom::normalize(self.direction_to_world(dc))
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    #[inline]
    pub fn project_camera(&self, pc: Vec3) -> [f64; 2] {
        let k = &self.intrinsics;
        [k.fx * pc[0] / pc[2] + k.cx, k.fy * pc[1] / pc[2] + k.cy]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 60.0, 64, 48).unwrap();
        let pc = cam.to_camera([0.0, 0.0, 0.0]);
        let px = cam.project_camera(pc);
        assert!((px[0] - 32.0).abs() < 1e-9 && (px[1] - 24.0).abs() < 1e-9);
        let c = cam.center();
        assert!(geom::norm(geom::sub(c, [1.0, 2.0, 3.0])) < 1e-12);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let cam = Camera::look_at([0.0, 0.0, -2.0], [0.0; 3], [0.0, 1.0, 0.0], 45.0, 8, 8).unwrap();
        let s = serde_json::to_string(&cam).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(cam, back);

        let mut rec: CameraRecord = cam.into();
        rec.intrinsics.fx = 0.0;
        assert!(Camera::try_from(rec.clone()).is_err());
        rec.intrinsics.fx = 1.0;
        rec.width = 0;
        assert!(Camera::try_from(rec).is_err());
    }

    #[test]
    fn image_center_ray_is_forward() {
        let cam = Camera::look_at([0.0; 3], [0.0, 0.0, 5.0], [0.0, 1.0, 0.0], 90.0, 2, 2).unwrap();
        // The four pixel centers straddle the optical axis symmetrically.
        let sum = (0..2)
            .flat_map(|y| (0..2).map(move |x| (x, y)))
            .fold([0.0; 3], |acc, (x, y)| geom::add(acc, cam.pixel_ray(x, y)));
        let d = geom::normalize(sum);
        assert!((d[2] - 1.0).abs() < 1e-12);
    }
}
