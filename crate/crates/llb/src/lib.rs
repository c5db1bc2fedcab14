//! Joint transduction/induction video object segmentation.
//!
//! Two branches read a shared memory of past frames: a lightweight
//! transformer propagates target encodings into the current frame via
//! cross-attention, while an online few-shot learner fits a linear target
//! model to the same memory by unrolled steepest descent. Labels for both
//! come from background-filtered frames encoded by the discriminative label
//! generation module, the branch outputs are merged by gated adaptive
//! fusion, and a small decoder produces per-object masks that are combined
//! across objects by soft aggregation.

pub mod backbone;
pub mod config;
pub mod datamodel;
pub mod dlgm;
pub mod error;
pub mod evalbench;
pub mod fusion_decode;
pub mod induction;
pub mod params;
pub mod pipeline;
pub mod transduction;

pub use config::PipelineConfig;
pub use error::{Error, Result};
