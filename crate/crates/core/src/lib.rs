pub mod agent;
pub mod canon;
pub mod cli;
pub mod config;
pub mod doc;
pub mod evalstore;
pub mod image;
pub mod manifest;
pub mod orchestrator;
pub mod pipeline;
pub mod postprocess;
pub mod predictor;
pub mod registry;
pub mod server;
pub mod synth;
pub mod tensor;
pub mod tracing;
pub mod version;
