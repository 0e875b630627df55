//! Trace model, per-step uncertainty and quality metrics, and the statistics
//! used to relate them for robot-manipulation policy evaluation.
//!
//! ```
//! use vlaj_core::synth::{generate_synthetic, Profile};
//! use vlaj_core::{summarize_run, MetricConfig, MetricId, Task};
//!
//! let trace = generate_synthetic(Profile::Smooth, Task::PickUp, 1);
//! let summary = summarize_run(&trace, None, &MetricConfig::default());
//! assert!(summary.success);
//! assert!(summary.metric(MetricId::Ot).unwrap() < 0.5);
//! ```

pub mod geom;
pub mod labels;
pub mod metric;
pub mod oracle;
pub mod quality;
pub mod report;
pub mod stats;
pub mod summary;
pub mod synth;
pub mod trace;
pub mod uncertainty;
pub mod window;

pub use labels::{LabelSet, QualityLabel, QualityLevel};
pub use metric::{MetricConfig, MetricError, MetricId, MetricSeries};
pub use oracle::{derive_grasped, success_oracle};
pub use summary::{compute_metrics, summarize_run, RunMetrics, RunSummary};
pub use trace::{RunTrace, StepRecord, Task, TokenDistribution, TraceError, TraceHeader};
