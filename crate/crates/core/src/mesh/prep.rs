//! The full preprocessing chain from a loaded OBJ to a textured scaffold.

use serde::Serialize;

use crate::error::Result;
use crate::mesh::{cluster_vertices, decimate, generate_uv_atlas, visible_faces, AtlasOptions, CullOptions, DecimationConfig, ObjMesh};
use crate::scene::{Camera, TexturedMesh};

#[derive(Clone, Debug, PartialEq)]
pub struct PrepOptions {
    /// Vertex clustering cell size; `None` skips clustering.
    pub cell: Option<f64>,
    /// `None` skips decimation.
    pub decimation: Option<DecimationConfig>,
    pub cull: CullOptions,
    pub atlas: AtlasOptions,
    /// Keep the UVs of an already textured input. Geometry is then only
    /// culled, since clustering and decimation would break the chart layout.
    pub keep_uvs: bool,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            cell: None,
            decimation: Some(DecimationConfig::default()),
            cull: CullOptions::default(),
            atlas: AtlasOptions::default(),
            keep_uvs: true,
        }
    }
}

/// Vertex and face counts after one stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub stage: &'static str,
    pub vertices: usize,
    pub faces: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PrepReport {
    pub stages: Vec<StageCounts>,
    pub reused_uvs: bool,
    /// False when decimation stalled above its target.
    pub reached_target: bool,
}

/// Clusters, decimates, culls faces no camera sees and parameterizes the
/// result, or culls an input that already carries UVs when asked to keep
/// them. Vertex and face counts never increase from stage to stage.
pub fn prepare_mesh(input: &ObjMesh, cameras: &[Camera], opts: &PrepOptions) -> Result<(TexturedMesh, PrepReport)> {
    let mut report = PrepReport {
        stages: Vec::new(),
        reused_uvs: false,
        reached_target: true,
    };
    let mut record = |stage, vertices, faces| report.stages.push(StageCounts { stage, vertices, faces });
    record("input", input.mesh.vertex_count(), input.mesh.face_count());

    if let (true, Some(textured)) = (opts.keep_uvs, &input.textured) {
        textured.validate()?;
        let keep = visible_faces(&textured.geometry(), cameras, &opts.cull)?;
        let kept: Vec<usize> = (0..keep.len()).filter(|&f| keep[f]).collect();
        let out = textured.submesh(&kept);
        record("culled", out.vertex_count(), out.face_count());
        report.reused_uvs = true;
        return Ok((out, report));
    }

    let mut mesh = input.mesh.clone();
    if let Some(cell) = opts.cell {
        mesh = cluster_vertices(&mesh, cell)?;
        record("clustered", mesh.vertex_count(), mesh.face_count());
    }
    if let Some(cfg) = &opts.decimation {
        let outcome = decimate(&mesh, cfg)?;
        if !outcome.reached_target {
            log::warn!(
                "decimation stopped at {} vertices, above the target of {}",
                outcome.mesh.vertex_count(),
                cfg.target_vertices
            );
        }
        report.reached_target = outcome.reached_target || outcome.target_exceeds_input;
        mesh = outcome.mesh;
        record("decimated", mesh.vertex_count(), mesh.face_count());
    }
    let keep = visible_faces(&mesh, cameras, &opts.cull)?;
    mesh.faces = mesh.faces.iter().zip(&keep).filter(|(_, &k)| k).map(|(f, _)| *f).collect();
    let mesh = mesh.compact();
    record("culled", mesh.vertex_count(), mesh.face_count());
    let out = generate_uv_atlas(&mesh, &opts.atlas)?;
    record("atlas", out.vertex_count(), out.face_count());
    Ok((out, report))
}
