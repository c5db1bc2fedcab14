//! Synthetic data generation, DAVIS-format ingestion, J/F metrics, and the
//! evaluation/ablation harness.

pub mod davis;
pub mod metrics;
pub mod report;
pub mod synth;
