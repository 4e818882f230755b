//! Trains the procedural toy scene and reports PSNR and timing.
//!
//! `cargo run --release -p neutex-core --example train_toy -- [iterations] [flat|novq]`

use std::time::Instant;

use neutex::scene::Shading;
use neutex::synthetic::{toy_scene, ToySceneConfig};
use neutex::train::{fit, mean_psnr, prepare_views, FitOptions, PyramidProxy, TrainConfig};

fn main() -> neutex::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let variant = args.get(2).map(String::as_str).unwrap_or("");
    let cfg = ToySceneConfig {
        shading: if variant == "flat" { Shading::Flat } else { Shading::Neural },
        quantization: variant != "novq",
        ..ToySceneConfig::default()
    };
    let train = TrainConfig {
        iterations,
        validate_every: 250,
        ..TrainConfig::default()
    };
    let mut toy = toy_scene(&cfg, train)?;
    let views = prepare_views(&toy.state, &toy.train)?;
    let heldout = prepare_views(&toy.state, &toy.heldout)?;
    let start = Instant::now();
    let history = fit(
        &mut toy.state,
        &views,
        &FitOptions {
            checkpoint_dir: None,
            validation: &heldout,
        },
        &PyramidProxy::default(),
    )?;
    for (step, p) in &history.validation {
        println!("step {step}: held-out {p:.2} dB");
    }
    println!(
        "train {:.2} dB, held-out {:.2} dB, {:.1} s",
        mean_psnr(&toy.state, &views),
        mean_psnr(&toy.state, &heldout),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
