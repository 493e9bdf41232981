//! Pipeline orchestration for the KAFT toolchain: run configuration, stage
//! manifests, and the stage implementations behind the `kaft` binary.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::{Overrides, RunConfig, StageContext};
pub use manifest::StageManifest;
pub use stages::{dry_run_plan, render_report, run_pipeline, run_stage, StageOutcome};
