//! Active ownership learning.
//!
//! A robot that has already mapped an environment knows where every object is
//! and what it looks like, but not who owns it. This crate infers ownership
//! online with a Rao-Blackwellized particle filter over a collapsed Bayesian
//! mixture of positions, attributes and user answers, and picks the next
//! object to ask about by maximizing the expected information gain of the
//! answer.
//!
//! Modules:
//! - [`model`]: types, sufficient statistics and predictive densities
//! - [`rbpf`]: sequential assignment sampling, weighting and resampling
//! - [`selector`]: information gain and query strategies
//! - [`dialogue`]: shared/owned classification, question generation and
//!   answer interpretation behind a pluggable backend
//! - [`harness`]: scenarios, scripted users, the question loop, ARI and
//!   multi-trial experiments
//! - [`service`]: in-process session manager behind the HTTP API

pub mod dialogue;
pub mod error;
pub mod harness;
pub mod model;
pub mod rbpf;
pub mod rng;
pub mod selector;
pub mod service;

pub use error::{Error, Result};
pub use model::{
    AnswerLabel, AnswerOverlay, AnswerVocabulary, Assignment, AssignmentTable, AttributeVector, Evidence,
    Hyperparameters, Model, ObjectId, Observation, SufficientStats,
};
pub use rbpf::{map_assignments, update_model, FilterConfig, ParticleState};
pub use selector::{information_gain, select_next, IgConfig, IgEstimate, IgMode, Strategy};
pub use dialogue::{Dialogue, LlmDialogue, MockDialogue, QuestionRecord};
pub use harness::{run_experiment, run_trial, EngineConfig, Method, Scenario, Session, StepMetrics};
