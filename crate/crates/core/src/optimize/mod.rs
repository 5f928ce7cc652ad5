//! Losses, Adam and the training schedule.

mod adam;
mod config;
mod loss;
mod schedule;

pub use adam::{adam_step, AdamParams, AdamState};
pub use config::{BridgeFailure, InitSpec, RunConfig, ViewSpec};
pub use loss::{jerk_scale, mmse_loss, render_view, total_loss, view_loss, LossEval, LossSettings, ViewTarget};
pub use schedule::{run_schedule, IterRecord, LogLine, Observer, RunFailure, RunOutput};
