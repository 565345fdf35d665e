//! Multi-persona debiasing harness: domain types, prompt templates, chat
//! backends, prompting methods, answer extraction, dataset ingestion and
//! bias metrics.

pub mod domain;
pub mod extract;
pub mod prompts;
pub mod backends;
pub mod methods;
pub mod metrics;
pub mod datasets;
