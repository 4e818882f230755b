//! Views file: a JSON list of posed images.
//!
//! ```json
//! [{"image": "img/000.png",
//!   "world_to_camera": [1,0,0,0, 0,1,0,0, 0,0,1,3, 0,0,0,1],
//!   "intrinsics": {"fx": 60, "fy": 60, "cx": 32, "cy": 32},
//!   "mask": "mask/000.png"}]
//! ```
//!
//! Relative paths resolve against the directory of the views file. The
//! image determines the resolution. `mask` is optional; pixels brighter
//! than one half count as valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{Error, Result};
use crate::image::{read_mask, Image};
use crate::scene::{Camera, Intrinsics};
use crate::train::TrainView;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRecord {
    pub image: PathBuf,
    /// Row-major 4x4.
    pub world_to_camera: [f64; 16],
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

pub fn read_view_records(path: &Path) -> Result<Vec<ViewRecord>> {
    blob::read_json(path)
}

/// Loads every image and mask listed in a views file.
pub fn load_views(path: &Path) -> Result<Vec<TrainView>> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_view_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let image = Image::read(&base.join(&r.image))?;
            let camera = Camera::new(r.world_to_camera, r.intrinsics, image.width as u32, image.height as u32)
                .map_err(|e| Error::invariant(format!("{}: view {i}", path.display()), e.to_string()))?;
            let mask = match &r.mask {
                Some(m) => {
                    let (w, h, mask) = read_mask(&base.join(m))?;
                    if (w, h) != (image.width, image.height) {
                        return Err(Error::dimension(format!("mask of view {i}"), image.width * image.height, w * h));
                    }
                    Some(mask)
                }
                None => None,
            };
            let view = TrainView { camera, image, mask };
            view.validate()?;
            Ok(view)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_view(dir: &Path, mask: bool) -> PathBuf {
        let img = Image::from_fn(6, 4, |x, y| [x as f32 / 5.0, y as f32 / 3.0, 0.5]);
        img.write(&dir.join("a.pfm")).unwrap();
        let mut record = serde_json::json!({
            "image": "a.pfm",
            "world_to_camera": [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0],
            "intrinsics": {"fx": 5.0, "fy": 5.0, "cx": 3.0, "cy": 2.0},
        });
        if mask {
            Image::from_fn(6, 4, |x, _| [if x < 3 { 1.0 } else { 0.0 }; 3]).write_png(&dir.join("m.png")).unwrap();
            record["mask"] = "m.png".into();
        }
        let path = dir.join("views.json");
        std::fs::write(&path, serde_json::to_string(&[record]).unwrap()).unwrap();
        path
    }

    #[test]
    fn loads_relative_image_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let views = load_views(&write_view(dir.path(), true)).unwrap();
        assert_eq!(views.len(), 1);
        assert_eq!((views[0].camera.width(), views[0].camera.height()), (6, 4));
        let mask = views[0].mask.as_ref().unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 12);
        assert_eq!(views[0].image.pixel(5, 3), [1.0, 1.0, 0.5]);
    }

    #[test]
    fn mask_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_views(&write_view(dir.path(), false)).unwrap()[0].mask.is_none());
    }

    #[test]
    fn missing_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_view(dir.path(), false);
        std::fs::remove_file(dir.path().join("a.pfm")).unwrap();
        assert!(matches!(load_views(&path), Err(Error::MissingFile { .. })));
    }

    #[test]
    fn non_rigid_pose_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_view(dir.path(), false);
        let text = std::fs::read_to_string(&path).unwrap().replacen("[1.0,", "[2.0,", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_views(&path), Err(Error::Invariant { .. })));
    }
}
