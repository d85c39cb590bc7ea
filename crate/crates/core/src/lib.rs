//! Persistent, searchable explanation artifacts for text classifiers.

pub mod config;
pub mod dataset;
pub mod explain;
pub mod faithfulness;
pub mod index;
pub mod model;
pub mod platform;
pub mod rag;
pub mod rehydrate;
pub mod store;
pub mod text;
