//! Core scene types shared by every stage of the pipeline.

mod atlas;
mod camera;
mod io;
mod layers;
mod mesh;
mod skybox;
mod state;

pub use atlas::FeatureAtlas;
pub use camera::{Camera, CameraRecord, Intrinsics};
pub use io::{load_scene, save_scene, SCENE_FORMAT, SCENE_VERSION};
pub use layers::{RenderLayer, RenderLayers};
pub use mesh::{Mesh, TexturedMesh};
pub use skybox::{CubeFace, Cuboid, SkyLayer, SkyboxStack};
pub use state::{
    sky_tensor_name, QuantizationConfig, SceneConfig, SceneInit, SceneParams, SceneState, Shading, TrainProgress,
};
