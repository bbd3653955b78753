//! Scripted users answering from ground truth.

use rand::seq::IndexedRandom;

use super::scenario::{Persona, Scenario};
use crate::error::{Error, Result};
use crate::model::{AnswerLabel, ObjectId};
use crate::rng::{self, TAG_PERSONA};

/// Picks the persona for one question.
pub fn persona_for(scenario: &Scenario, object_id: ObjectId, seed: u64) -> Persona {
    let mut rng = rng::stream(seed, &[TAG_PERSONA, u64::from(object_id.0)]);
    *scenario
        .personas
        .mix
        .choose(&mut rng)
        .unwrap_or(&Persona::Direct)
}

/// Answer text and responding user for `object_id` under `persona`.
pub fn scripted_answer(scenario: &Scenario, object_id: ObjectId, persona: Persona, seed: u64) -> Result<(String, String)> {
    let object = scenario.object(object_id).ok_or(Error::UnknownObject(object_id))?;
    let mut rng = rng::stream(seed, &[TAG_PERSONA, u64::from(object_id.0), 1]);
    let mut anyone = || scenario.users.choose(&mut rng).cloned().unwrap_or_default();
    let owner = match &object.owner {
        AnswerLabel::Owner(name) => name.clone(),
        _ => return Ok(("It's shared".to_string(), anyone())),
    };
    let referral = scenario.personas.relations.iter().find_map(|(responder, table)| {
        table
            .iter()
            .find(|(_, o)| **o == owner)
            .map(|(word, _)| (responder.clone(), word.clone()))
    });
    Ok(match (persona, referral) {
        (Persona::Possessive, _) => ("It's mine".to_string(), owner),
        (Persona::Referential, Some((responder, word))) => (format!("It's my {word}'s"), responder),
        (Persona::Direct, _) | (Persona::Referential, None) => (format!("It's {owner}'s"), anyone()),
    })
}
