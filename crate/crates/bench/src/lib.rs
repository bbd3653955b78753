//! Shared fixtures for the benchmarks.

use actowl_core::harness::EngineConfig;
use actowl_core::{AnswerLabel, AnswerOverlay, FilterConfig, Model, Observation, ObjectId, Scenario};

pub struct Fixture {
    pub model: Model,
    pub observations: Vec<Observation>,
    /// Shared objects answered, as after classification.
    pub answers: AnswerOverlay,
    pub candidates: Vec<ObjectId>,
}

/// A shipped scenario in the state it has right after classification.
pub fn fixture(name: &str) -> Fixture {
    let scenario = Scenario::builtin(name).expect("shipped scenario");
    let engine = EngineConfig::default();
    let observations = engine.observations(&scenario);
    let model = Model::new(
        engine.hyperparameters(&scenario.hyperparameters),
        scenario.vocabulary().expect("vocabulary"),
        observations[0].attributes.dim(),
    )
    .expect("model");
    let mut answers = AnswerOverlay::new();
    let mut candidates = Vec::new();
    for o in &scenario.objects {
        if o.owner == AnswerLabel::Shared {
            answers.insert(o.id, AnswerLabel::Shared);
        } else {
            candidates.push(o.id);
        }
    }
    Fixture {
        model,
        observations,
        answers,
        candidates,
    }
}

pub fn filter_config(particles: usize) -> FilterConfig {
    FilterConfig {
        particles,
        seed: 11,
        ess_threshold: 0.5,
    }
}
