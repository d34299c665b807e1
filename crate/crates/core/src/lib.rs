//! Emotion-guided hyperbole and metaphor detection over chat-completion
//! providers, plus the corpus loading, caching and evaluation around it.

pub mod corpus;
pub mod device;
pub mod eval;
pub mod experiment;
pub mod gateway;
pub mod pipeline;
pub mod prompts;
pub mod scalar;

pub use corpus::{Dataset, Label, SentenceRecord};
pub use device::Device;
pub use gateway::{CompletionRequest, CompletionResponse, Gateway};
pub use pipeline::{Pipeline, PipelineConfig, PipelineTrace, RunMode};
pub use prompts::TemplateSet;

/// Metrics in double precision, as written to run results.
pub type TaskMetricsF64 = eval::TaskMetrics<f64>;
pub type TaskMetricsF32 = eval::TaskMetrics<f32>;
/// Exact rational metrics, used by oracles and tests.
pub type ExactTaskMetrics = eval::TaskMetrics<num_rational::Ratio<i64>>;
