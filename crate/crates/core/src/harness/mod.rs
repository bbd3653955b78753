//! Scenarios, scripted users, the question loop and experiment runs.

pub mod ari;
pub mod experiment;
pub mod oracle;
pub mod scenario;
pub mod session;

pub use ari::adjusted_rand_index;
pub use experiment::{aggregate, metrics_csv_string, run_experiment, run_llm_only, run_trial, write_metrics_csv, Aggregate, AggregateRow, ExperimentResult, TrialOutcome};
pub use oracle::{persona_for, scripted_answer};
pub use scenario::{Persona, PersonaConfig, Scenario, ScenarioObject};
pub use session::{
    Ablation, CandidateView, EngineConfig, FailureAction, FailurePolicy, IgModeName, InterpretationFailure, Method, ObjectView, Session,
    SessionSnapshot, StepMetrics,
};
