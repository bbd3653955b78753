//! Scenario files: users, objects with ground-truth owners, hyperparameters
//! and answer personas.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{EnvironmentContext, MockDialogue, MockRules, ObjectRow};
use crate::error::{Error, Result};
use crate::model::{AnswerLabel, AnswerOverlay, AnswerVocabulary, AttributeVector, Hyperparameters, ObjectId, Observation};

pub const SCHEMA_VERSION: u32 = 1;

pub const COLORS: [&str; 6] = ["red", "blue", "yellow", "green", "black", "white"];
pub const SIZES: [&str; 3] = ["large", "medium", "small"];
pub const SHAPES: [&str; 3] = ["round", "square", "triangle"];

const BUILTIN: &[(&str, &str)] = &[
    ("exp1", include_str!("../../scenarios/exp1.json")),
    ("exp2", include_str!("../../scenarios/exp2.json")),
    ("exp3", include_str!("../../scenarios/exp3.json")),
];

/// Words the scripted answers and the mock interpreter give meaning to; they
/// cannot double as user names.
const RESERVED_NAMES: &[&str] = &["my", "mine", "it", "its", "s", "shared", "share", "everyone", "everybody", "communal", "common"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    /// "It's anna's", answered by anyone.
    Direct,
    /// "It's mine", answered by the owner.
    Possessive,
    /// "It's my father's", answered by someone related to the owner.
    Referential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonaConfig {
    /// Personas drawn uniformly per question.
    pub mix: Vec<Persona>,
    /// responder -> relation word -> owner.
    pub relations: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            mix: vec![Persona::Direct],
            relations: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioObject {
    pub id: ObjectId,
    pub class: String,
    pub color: String,
    pub size: String,
    pub shape: String,
    pub x: f64,
    pub y: f64,
    /// Ground truth: a user name or `Shared`.
    pub owner: AnswerLabel,
    pub position_component: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Coordinates were read off a drawing rather than measured.
    #[serde(default)]
    pub coordinates_approximate: bool,
    #[serde(default)]
    pub context: EnvironmentContext,
    pub users: Vec<String>,
    /// Class one-hot order. Defaults to order of first appearance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    pub objects: Vec<ScenarioObject>,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub personas: PersonaConfig,
}

impl Scenario {
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    /// One of the scenarios shipped with the crate.
    pub fn builtin(name: &str) -> Option<Scenario> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, src)| Scenario::from_json(src).expect("shipped scenario is valid"))
    }

    /// Parses and validates.
    pub fn from_json(src: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(src)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every invariant violation, empty when the scenario is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.name.trim().is_empty() {
            v.push("name is empty".into());
        }
        if let Err(e) = AnswerVocabulary::new(self.users.clone()) {
            v.push(e.to_string());
        }
        if self.users.is_empty() {
            v.push("at least one user is required".into());
        }
        for u in &self.users {
            if !u.chars().all(char::is_alphanumeric) {
                v.push(format!("user `{u}` must be a single alphanumeric word"));
            }
            if RESERVED_NAMES.contains(&u.to_lowercase().as_str()) {
                v.push(format!("user name `{u}` is reserved"));
            }
        }
        if self.objects.is_empty() {
            v.push("at least one object is required".into());
        }
        let mut seen = BTreeSet::new();
        let k = self.hyperparameters.num_components;
        for o in &self.objects {
            if !seen.insert(o.id) {
                v.push(format!("duplicate object id {}", o.id));
            }
            match &o.owner {
                AnswerLabel::Unknown => v.push(format!("object {} has no owner", o.id)),
                AnswerLabel::Owner(name) if !self.users.contains(name) => {
                    v.push(format!("object {} is owned by `{name}`, who is not a user", o.id))
                }
                _ => {}
            }
            if o.position_component >= k {
                v.push(format!("object {} uses position component {} but K = {k}", o.id, o.position_component));
            }
            if !(o.x.is_finite() && o.y.is_finite()) {
                v.push(format!("object {} has a non-finite position", o.id));
            }
            if o.class.trim().is_empty() {
                v.push(format!("object {} has an empty class", o.id));
            } else if !self.classes.is_empty() && !self.classes.contains(&o.class) {
                v.push(format!("object {} has class `{}` missing from classes", o.id, o.class));
            }
            for (what, value, allowed) in [("color", &o.color, &COLORS[..]), ("size", &o.size, &SIZES[..]), ("shape", &o.shape, &SHAPES[..])] {
                if !allowed.contains(&value.as_str()) {
                    v.push(format!("object {} has unknown {what} `{value}`", o.id));
                }
            }
        }
        let mut classes = BTreeSet::new();
        for c in &self.classes {
            if !classes.insert(c) {
                v.push(format!("duplicate class `{c}`"));
            }
        }
        for (responder, table) in &self.personas.relations {
            if !self.users.contains(responder) {
                v.push(format!("relation table for unknown user `{responder}`"));
            }
            for (word, owner) in table {
                if !self.users.contains(owner) {
                    v.push(format!("relation `{word}` of `{responder}` points to unknown user `{owner}`"));
                }
            }
        }
        if self.personas.mix.is_empty() {
            v.push("personas.mix is empty".into());
        }
        v.extend(self.hyperparameters.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(v.join("; ")))
        }
    }

    /// Class one-hot vocabulary.
    pub fn class_list(&self) -> Vec<String> {
        if !self.classes.is_empty() {
            return self.classes.clone();
        }
        let mut out: Vec<String> = Vec::new();
        for o in &self.objects {
            if !out.contains(&o.class) {
                out.push(o.class.clone());
            }
        }
        out
    }

    pub fn vocabulary(&self) -> Result<AnswerVocabulary> {
        AnswerVocabulary::new(self.users.clone())
    }

    /// Class + color + size + shape dimension.
    pub fn attribute_dim(&self) -> usize {
        self.class_list().len() + COLORS.len() + SIZES.len() + SHAPES.len()
    }

    pub fn object(&self, id: ObjectId) -> Option<&ScenarioObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn index_of(&self, id: ObjectId) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Concatenated one-hot blocks of one object.
    pub fn attribute_vector(&self, o: &ScenarioObject) -> AttributeVector {
        let classes = self.class_list();
        let mut v = vec![0u32; self.attribute_dim()];
        let mut offset = 0;
        for (value, vocab) in [(&o.class, classes.iter().map(String::as_str).collect::<Vec<_>>()), (&o.color, COLORS.to_vec()), (&o.size, SIZES.to_vec()), (&o.shape, SHAPES.to_vec())] {
            if let Some(i) = vocab.iter().position(|c| *c == value.as_str()) {
                v[offset + i] = 1;
            }
            offset += vocab.len();
        }
        AttributeVector::new(v)
    }

    /// Color block only.
    pub fn color_vector(&self, o: &ScenarioObject) -> AttributeVector {
        let mut v = vec![0u32; COLORS.len()];
        if let Some(i) = COLORS.iter().position(|c| *c == o.color) {
            v[i] = 1;
        }
        AttributeVector::new(v)
    }

    /// Observations in scenario order with every answer unknown.
    pub fn observations(&self, clamp_components: bool) -> Vec<Observation> {
        self.objects
            .iter()
            .map(|o| Observation {
                object_id: o.id,
                position: [o.x, o.y],
                attributes: self.attribute_vector(o),
                answer: AnswerLabel::Unknown,
                fixed_position_component: clamp_components.then_some(o.position_component),
            })
            .collect()
    }

    pub fn truth(&self) -> Vec<AnswerLabel> {
        self.objects.iter().map(|o| o.owner.clone()).collect()
    }

    /// Dialogue rows with owners as currently known.
    pub fn object_rows(&self, answers: &AnswerOverlay) -> Vec<ObjectRow> {
        self.objects
            .iter()
            .map(|o| ObjectRow {
                object_id: o.id,
                class: o.class.clone(),
                color: Some(o.color.clone()),
                attributes: self.attribute_vector(o).values().to_vec(),
                x: o.x,
                y: o.y,
                observed: answers.get(&o.id).cloned().unwrap_or_default(),
            })
            .collect()
    }

    /// Mock backend carrying this scenario's relation table, with `extra_shared`
    /// classes forced to shared.
    pub fn mock_dialogue(&self, extra_shared: &[String]) -> MockDialogue {
        let mut rules = MockRules {
            relations: self.personas.relations.clone(),
            ..MockRules::default()
        };
        rules.extra_shared.extend(extra_shared.iter().cloned());
        MockDialogue::new(rules)
    }
}
