//! Retrieval service: wires the provider, geocell decoding, knowledge-graph
//! clients and similarity ranking into an HTTP API and an evaluation runner.

pub mod api;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod presets;
pub mod provider;

pub use config::{Config, ProviderMode};
pub use error::{ErrorEnvelope, ServiceError, Stage};
pub use evaluation::{run_eval, EvalConfig, EvalRun};
pub use pipeline::{ImageSource, RetrievalRequest, RetrievalResponse, Services};
