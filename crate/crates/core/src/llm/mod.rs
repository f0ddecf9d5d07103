//! Model-facing side of the system: prompt rendering, representation specs
//! and their expression language, chat-completion and stub clients, the
//! feedback loop, topology summaries, and action guidance.

pub mod client;
pub mod codec;
pub mod dsl;
pub mod feedback;
pub mod guide;
pub mod prompt;
pub mod spec;

pub use client::{request_representation, LiveClient, LlmClient, LlmEndpointConfig, SpecResponse, StubClient};
pub use codec::{decode_topology_summary, encode_topology_update, parse_topology_summary};
pub use feedback::{feedback_iteration, FeedbackAction, FeedbackOutcome};
pub use guide::{action_index, decode_action, guide_actions, migration_targets};
pub use prompt::{render_prompt, FeedbackReport, PromptTemplate, FEEDBACK_MARKER};
pub use spec::{CompiledSpec, Provenance, RepresentationSpec, SpecError};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("prompt needs {tokens} tokens, budget is {budget}")]
    TokenBudgetExceeded { tokens: usize, budget: usize },
    #[error("placeholder {0} left unfilled")]
    UnfilledPlaceholder(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("summary does not parse: {0:?}")]
    ParseFailed(String),
    #[error("invalid spec: {0}")]
    Spec(#[from] SpecError),
    #[error("feedback history is empty")]
    EmptyHistory,
    #[error("config: {0}")]
    Config(String),
}

#[cfg(test)]
mod tests;
