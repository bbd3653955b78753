use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{closest_user, partition, Classification, Closest, Dialogue, EnvironmentContext, ObjectRow, QuestionRecord};
use crate::error::{Error, Result};
use crate::model::AnswerLabel;

const SHARED_CLASSES: &[&str] = &[
    "Clock",
    "Dining Table",
    "Printer",
    "Potted Plant",
    "Refrigerator",
    "Trash bin Can",
    "Sofa",
    "Couch",
    "Microwave",
    "Oven",
    "Sink",
    "Toilet",
    "Whiteboard",
];

const OWNED_CLASSES: &[&str] = &[
    "Backpack",
    "Bed",
    "Book",
    "Bottle",
    "Chair",
    "Cup",
    "Desk",
    "Handbag/Satchel",
    "Laptop",
    "Monitor/TV",
    "Mouse",
    "Pillow",
    "Toothbrush",
    "Umbrella",
    "Shoes",
    "Mug",
];

const SHARED_WORDS: &[&str] = &["shared", "share", "everyone", "everybody", "communal", "common"];

/// Rule tables for [`MockDialogue`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockRules {
    pub shared_classes: BTreeSet<String>,
    pub owned_classes: BTreeSet<String>,
    /// Classification of classes found in neither table.
    pub default_shared: bool,
    /// Classes forced to shared regardless of the tables.
    pub extra_shared: BTreeSet<String>,
    /// responder -> relation word -> owner, e.g. `ben -> father -> carl`.
    pub relations: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for MockRules {
    fn default() -> Self {
        Self {
            shared_classes: SHARED_CLASSES.iter().map(|s| s.to_string()).collect(),
            owned_classes: OWNED_CLASSES.iter().map(|s| s.to_string()).collect(),
            default_shared: false,
            extra_shared: BTreeSet::new(),
            relations: BTreeMap::new(),
        }
    }
}

fn contains_ci(set: &BTreeSet<String>, class: &str) -> bool {
    set.iter().any(|s| s.eq_ignore_ascii_case(class))
}

impl MockRules {
    pub fn is_shared(&self, class: &str) -> bool {
        if contains_ci(&self.extra_shared, class) || contains_ci(&self.shared_classes, class) {
            true
        } else if contains_ci(&self.owned_classes, class) {
            false
        } else {
            self.default_shared
        }
    }

    fn relation(&self, responder: &str, word: &str) -> Option<&String> {
        self.relations
            .get(responder)
            .and_then(|m| m.iter().find(|(k, _)| k.eq_ignore_ascii_case(word)))
            .map(|(_, v)| v)
    }
}

/// Deterministic rule-based backend. Every method is a pure function of its
/// arguments and the rule tables.
#[derive(Debug, Clone, Default)]
pub struct MockDialogue {
    pub rules: MockRules,
}

impl MockDialogue {
    pub fn new(rules: MockRules) -> Self {
        Self { rules }
    }

    fn interpret(&self, text: &str, responder: &str, users: &[String]) -> std::result::Result<AnswerLabel, String> {
        static WORDS: OnceLock<Regex> = OnceLock::new();
        static MY: OnceLock<Regex> = OnceLock::new();
        let words = WORDS.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").expect("pattern"));
        let my = MY.get_or_init(|| Regex::new(r"\bmy\s+([\p{L}]+)('s|’s)?").expect("pattern"));

        let lower = text.to_lowercase();
        let tokens: Vec<&str> = words.find_iter(&lower).map(|m| m.as_str()).collect();
        if tokens.is_empty() {
            return Err("empty answer".into());
        }
        if tokens.iter().any(|t| SHARED_WORDS.contains(t)) {
            return Ok(AnswerLabel::Shared);
        }

        let responder_owner = || {
            users
                .iter()
                .find(|u| u.eq_ignore_ascii_case(responder))
                .map(|u| AnswerLabel::Owner(u.clone()))
                .ok_or_else(|| format!("responder `{responder}` is not a known user"))
        };

        for caps in my.captures_iter(&lower) {
            let word = &caps[1];
            if let Some(owner) = self.rules.relation(responder, word) {
                return users
                    .iter()
                    .find(|u| u.eq_ignore_ascii_case(owner))
                    .map(|u| AnswerLabel::Owner(u.clone()))
                    .ok_or_else(|| format!("relation `{word}` points to unknown user `{owner}`"));
            }
            if caps.get(2).is_some() {
                return Err(format!("unknown relation `{word}` for `{responder}`"));
            }
        }
        if tokens.iter().any(|t| *t == "mine" || *t == "my") {
            return responder_owner();
        }

        let named: BTreeSet<&String> = tokens
            .iter()
            .filter_map(|t| users.iter().find(|u| u.eq_ignore_ascii_case(t)))
            .collect();
        match named.len() {
            1 => return Ok(AnswerLabel::Owner(named.into_iter().next().unwrap().clone())),
            n if n > 1 => return Err("answer names several users".into()),
            _ => {}
        }

        let mut found: Option<String> = None;
        for t in tokens.iter().filter(|t| t.chars().count() >= 3) {
            match closest_user(t, users) {
                Closest::One(u) => match &found {
                    Some(prev) if *prev != u => return Err("answer is close to several users".into()),
                    _ => found = Some(u),
                },
                Closest::Tie => return Err(format!("`{t}` is equally close to several users")),
                Closest::None => {}
            }
        }
        found
            .map(AnswerLabel::Owner)
            .ok_or_else(|| "no owner could be identified".into())
    }
}

/// Nearest row with a known label, ties broken by object id. Rows of the
/// same class as `target` count at half their distance when `class_bonus`.
fn nearest_labeled<'a>(target: &ObjectRow, rows: &'a [ObjectRow], class_bonus: bool) -> Option<&'a ObjectRow> {
    rows.iter()
        .filter(|r| r.object_id != target.object_id && r.observed.is_known())
        .map(|r| {
            let mut d = target.distance(r);
            if class_bonus && r.class == target.class {
                d *= 0.5;
            }
            (d, r)
        })
        .min_by(|(da, a), (db, b)| da.total_cmp(db).then(a.object_id.cmp(&b.object_id)))
        .map(|(_, r)| r)
}

impl Dialogue for MockDialogue {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn classify_shared_owned(&self, classes: &[String], _context: EnvironmentContext) -> Result<Classification> {
        Ok(partition(classes, |c| !self.rules.is_shared(c)))
    }

    fn generate_question(&self, target: &ObjectRow, others: &[ObjectRow], _object_labels: &[String]) -> Result<QuestionRecord> {
        let subject = match &target.color {
            Some(color) => format!("{color} {}", target.class),
            None => target.class.clone(),
        };
        let question_text = match nearest_labeled(target, others, false) {
            Some(n) => format!("Whose {subject} is this, the one near the {}?", n.class),
            None => format!("Whose {subject} is this?"),
        };
        Ok(QuestionRecord {
            target_object_id: target.object_id,
            question_text,
            context_objects: others.to_vec(),
        })
    }

    fn interpret_answer(&self, _question: &QuestionRecord, answer_text: &str, responding_user: &str, users: &[String]) -> Result<AnswerLabel> {
        self.interpret(answer_text, responding_user, users)
            .map_err(|reason| Error::Interpretation {
                raw: answer_text.to_string(),
                reason,
            })
    }

    fn predict_owners(&self, objects: &[ObjectRow], _users: &[String]) -> Result<Vec<AnswerLabel>> {
        Ok(objects
            .iter()
            .map(|o| {
                if o.observed.is_known() {
                    o.observed.clone()
                } else {
                    nearest_labeled(o, objects, true)
                        .map(|n| n.observed.clone())
                        .unwrap_or(AnswerLabel::Shared)
                }
            })
            .collect())
    }
}
