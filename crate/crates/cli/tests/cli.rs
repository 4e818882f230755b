use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use neutex::mesh::write_obj;
use neutex::scene::CameraRecord;
use neutex::synthetic::{cube_mesh, render_ground_truth, ring_camera};

fn neutex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neutex"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json_out(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().unwrap_or("")).unwrap_or_else(|e| panic!("{e}: {stdout}"))
}

fn ok(args: &[&str]) -> Value {
    let out = neutex(&[args, &["--json"]].concat());
    assert!(
        out.status.success(),
        "{args:?}: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    json_out(&out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn record(cam: &neutex::scene::Camera) -> Value {
    serde_json::to_value(CameraRecord::from(cam.clone())).unwrap()
}

/// Cube OBJ without UVs, four ring cameras, their poses and a views file
/// of ground-truth PFM images.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        let cube = cube_mesh(4).unwrap();
        write_obj(&p.join("cube.obj"), &cube.positions, None, &cube.faces).unwrap();
        let cams: Vec<_> = (0..4)
            .map(|i| ring_camera(i as f64 * 1.57 + 0.3, 0.3, 20, 16).unwrap())
            .collect();
        std::fs::write(p.join("poses.json"), Value::Array(cams.iter().map(record).collect()).to_string()).unwrap();
        std::fs::write(p.join("pose.json"), record(&cams[0]).to_string()).unwrap();
        let mut views = Vec::new();
        for (i, cam) in cams.iter().enumerate() {
            let file = format!("gt_{i}.pfm");
            render_ground_truth(cam).write(&p.join(&file)).unwrap();
            let mut v = record(cam);
            v["image"] = file.into();
            v.as_object_mut().unwrap().remove("width");
            v.as_object_mut().unwrap().remove("height");
            views.push(v);
        }
        std::fs::write(p.join("views.json"), Value::Array(views).to_string()).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn prep(&self, out: &str) -> Value {
        ok(&[
            "prep",
            "--in",
            s(&self.path("cube.obj")),
            "--cameras",
            s(&self.path("poses.json")),
            "--target-verts",
            "100",
            "--cell",
            "0.001",
            "--atlas-res",
            "32",
            "--feature-dim",
            "4",
            "--hidden",
            "8,8",
            "--codebook-size",
            "16",
            "--sky-res",
            "4",
            "--out",
            s(&self.path(out)),
        ])
    }

    fn train(&self, scene: &str, extra: &[&str]) -> Value {
        let base = ["train", "--scene", &self.path(scene).to_string_lossy(), "--views", s(&self.path("views.json"))]
            .map(String::from);
        let args: Vec<&str> = base.iter().map(String::as_str).chain(extra.iter().copied()).collect();
        ok(&args)
    }
}

#[test]
fn prep_builds_a_scene_from_a_plain_obj() {
    let f = Fixture::new();
    let r = f.prep("scene");
    let stages = r["stages"].as_array().unwrap();
    assert_eq!(stages[0]["vertices"], 24);
    assert_eq!(stages[1]["stage"], "clustered");
    assert_eq!(stages[1]["vertices"], 8);
    assert_eq!(r["reused_uvs"], false);
    let info = ok(&["info", s(&f.path("scene"))]);
    assert_eq!(info["kind"], "scene");
    assert_eq!(info["step"], 0);
    assert_eq!(info["atlas"], json!([32, 32]));
    assert_eq!(info["sky_layers"], 2);
}

#[test]
fn train_render_bake_and_info_round_trip() {
    let f = Fixture::new();
    f.prep("scene");
    let r = f.train("scene", &["--iters", "6", "--lambda-perc", "0", "--seed", "3"]);
    assert_eq!(r["step"], 6);
    assert_eq!(ok(&["info", s(&f.path("scene"))])["step"], 6);

    // Another call continues the same schedule.
    let r = f.train("scene", &["--iters", "8"]);
    assert_eq!((r["start_step"].clone(), r["step"].clone()), (json!(6), json!(8)));

    let pose = f.path("pose.json");
    let (a, b) = (f.path("a.png"), f.path("b.png"));
    let dump = f.path("buffers");
    ok(&["render", "--scene", s(&f.path("scene")), "--pose", s(&pose), "--out", s(&a), "--dump-buffers", s(&dump)]);
    ok(&["render", "--scene", s(&f.path("scene")), "--pose", s(&pose), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(dump.join("buffers.json").exists());
    assert!(dump.join("foreground_features.png").exists());

    // Warm-up is not over, so there are no codebooks yet.
    let out = neutex(&["bake", "--scene", s(&f.path("scene")), "--out", s(&f.path("bundle")), "--json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_out(&out)["error"]["kind"], "usage");

    let r = ok(&["bake", "--scene", s(&f.path("scene")), "--out", s(&f.path("bundle")), "--no-vq"]);
    assert_eq!(r["quantized"], false);
    let info = ok(&["info", s(&f.path("bundle"))]);
    assert_eq!(info["kind"], "bundle");
    assert_eq!(info["draws"], 3);
    let emulated = f.path("emulated.png");
    ok(&["render", "--bundle", s(&f.path("bundle")), "--pose", s(&pose), "--out", s(&emulated)]);
    let (x, y) = (neutex::image::Image::read(&a).unwrap(), neutex::image::Image::read(&emulated).unwrap());
    let worst = x.data.iter().zip(&y.data).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
    assert!(worst <= 1.5 / 255.0, "{worst}");
}

#[test]
fn quantized_training_bakes_index_maps() {
    let f = Fixture::new();
    f.prep("scene");
    // Shorten the warm-up so a four-step run reaches quantization.
    let info = ok(&["info", s(&f.path("scene"))]);
    assert_eq!(info["config"]["quantization"]["enabled"], true);
    let path = f.path("scene/manifest.json");
    let mut manifest: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest["train"]["vq_warmup"] = 2.into();
    std::fs::write(&path, manifest.to_string()).unwrap();
    f.train("scene", &["--iters", "4"]);
    assert_eq!(ok(&["info", s(&f.path("scene"))])["codebooks"], true);
    let r = ok(&["bake", "--scene", s(&f.path("scene")), "--out", s(&f.path("bundle"))]);
    assert_eq!(r["quantized"], true);
    assert!(f.path("bundle/atlas_fg.idx").exists());
}

#[test]
fn same_seed_gives_identical_scenes() {
    let f = Fixture::new();
    f.prep("a");
    f.prep("b");
    f.train("a", &["--iters", "5", "--seed", "11"]);
    f.train("b", &["--iters", "5", "--seed", "11"]);
    let read = |d: &str| std::fs::read_to_string(f.path(d).join("manifest.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn eval_of_identical_images_reports_infinite_psnr() {
    let f = Fixture::new();
    f.prep("scene");
    let renders = f.path("renders");
    ok(&["eval", "--scene", s(&f.path("scene")), "--views", s(&f.path("views.json")), "--save-renders", s(&renders)]);
    // The saved float renders become the targets of a second evaluation.
    let views: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(f.path("views.json")).unwrap()).unwrap();
    let same: Vec<Value> = views
        .into_iter()
        .enumerate()
        .map(|(i, mut v)| {
            v["image"] = format!("renders/view_{i}.pfm").into();
            v
        })
        .collect();
    std::fs::write(f.path("same.json"), Value::Array(same).to_string()).unwrap();
    let r = ok(&["eval", "--scene", s(&f.path("scene")), "--views", s(&f.path("same.json"))]);
    for row in r["views"].as_array().unwrap() {
        assert_eq!(row["psnr"], "inf");
        assert_eq!(row["mse"], 0.0);
        assert_eq!(row["ssim"], 1.0);
        assert_eq!(row["lpips"], "n/a");
        assert_eq!(row["fid"], "n/a");
    }
    assert_eq!(r["mean"]["psnr"], "inf");

    let out = neutex(&["eval", "--scene", s(&f.path("scene")), "--views", s(&f.path("same.json"))]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("inf") && text.contains("n/a"), "{text}");
}

#[test]
fn errors_map_to_exit_codes_and_json() {
    let f = Fixture::new();
    let pose = f.path("pose.json");
    let out = neutex(&["render", "--scene", "/nonexistent", "--pose", s(&pose), "--out", "x.png", "--json"]);
    assert_eq!(out.status.code(), Some(3));
    let e = json_out(&out);
    assert_eq!(e["error"]["kind"], "data");
    assert_eq!(e["error"]["exit_code"], 3);
    assert!(e["error"]["message"].as_str().unwrap().contains("nonexistent"));

    let out = neutex(&["train", "--bogus", "--json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json_out(&out)["error"]["kind"], "usage");

    let out = neutex(&["render", "--pose", "p.json", "--out", "x.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());

    f.prep("scene");
    let out = neutex(&[
        "train",
        "--scene",
        s(&f.path("scene")),
        "--views",
        s(&f.path("views.json")),
        "--iters",
        "3",
        "--lr",
        "1e300",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(json_out(&out)["error"]["kind"], "numeric");
}

#[test]
fn corrupt_bundle_blob_is_named() {
    let f = Fixture::new();
    f.prep("scene");
    ok(&["bake", "--scene", s(&f.path("scene")), "--out", s(&f.path("bundle")), "--no-vq"]);
    std::fs::write(f.path("bundle/mesh.bin"), b"junk").unwrap();
    let out = neutex(&["info", s(&f.path("bundle")), "--json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(json_out(&out)["error"]["message"].as_str().unwrap().contains("mesh.bin"));
}
