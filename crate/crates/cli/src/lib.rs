//! Pipeline orchestration and artifact emission for the planrl lab.

pub mod pipeline;
pub mod plots;

pub use pipeline::{run_pipeline, AblationSummary, RunPaths, RunSummary, StageFlags};
pub use plots::emit_plots;
