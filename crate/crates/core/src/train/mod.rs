//! Optimization of scene parameters against posed images.

mod adam;
mod config;
mod loss;
mod objective;
mod step;
mod views;

pub use adam::{AdamConfig, AdamState, Moments};
pub use config::TrainConfig;
pub use loss::{photometric_loss, PerceptualLoss, ProxyTerms, PyramidProxy};
pub use objective::{evaluate, LossReport, LossWeights, ObjectiveInput};
pub use step::{
    fit, init_codebooks, mean_psnr, prepare_views, render_camera, render_prepared, scheduled_view, train_step, view_psnr, FitHistory,
    FitOptions, PreparedView, StepReport, TrainView,
};
pub use views::{load_views, read_view_records, ViewRecord};
