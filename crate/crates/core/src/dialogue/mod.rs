//! Language-facing side of the loop: shared/owned classification of object
//! classes, question generation and answer interpretation.
//!
//! Every capability sits behind [`Dialogue`]. [`MockDialogue`] is a pure
//! rule-based implementation used by all tests and experiments;
//! [`LlmDialogue`] talks to a chat-completion endpoint over HTTP.

mod llm;
mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnswerLabel, ObjectId};

pub use llm::{LlmConfig, LlmDialogue, TOKEN_ENV};
pub use mock::{MockDialogue, MockRules};

pub const CLASSIFY_TEMPLATE: &str = include_str!("../../prompts/classify.txt");
pub const QUESTION_TEMPLATE: &str = include_str!("../../prompts/question.txt");
pub const INTERPRET_TEMPLATE: &str = include_str!("../../prompts/interpret.txt");
const HOUSEHOLD_CONTEXT: &str = include_str!("../../prompts/context_household.txt");
const LABORATORY_CONTEXT: &str = include_str!("../../prompts/context_laboratory.txt");

/// Where the objects live; selects the context lines of the classification
/// prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentContext {
    #[default]
    Household,
    Laboratory,
}

impl EnvironmentContext {
    pub fn prompt_lines(self) -> &'static str {
        match self {
            EnvironmentContext::Household => HOUSEHOLD_CONTEXT.trim_end(),
            EnvironmentContext::Laboratory => LABORATORY_CONTEXT.trim_end(),
        }
    }
}

/// One object as the dialogue layer sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRow {
    pub object_id: ObjectId,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub attributes: Vec<u32>,
    pub x: f64,
    pub y: f64,
    /// Owner as currently known to the robot.
    pub observed: AnswerLabel,
}

impl ObjectRow {
    /// `-class, [a,b,...], x, y, observed user`
    pub fn prompt_line(&self) -> String {
        let attrs = self
            .attributes
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        format!("-{}, [{}], {}, {}, {}", self.class, attrs, self.x, self.y, self.observed)
    }

    pub fn distance(&self, other: &ObjectRow) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub target_object_id: ObjectId,
    pub question_text: String,
    pub context_objects: Vec<ObjectRow>,
}

/// Partition of class names into shared and owned.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub shared: BTreeSet<String>,
    pub owned: BTreeSet<String>,
}

impl Classification {
    pub fn is_shared(&self, class: &str) -> bool {
        self.shared.contains(class)
    }
}

pub trait Dialogue: Send + Sync {
    fn name(&self) -> &'static str;

    fn classify_shared_owned(&self, classes: &[String], context: EnvironmentContext) -> Result<Classification>;

    /// `object_labels` is the class one-hot vocabulary in attribute order.
    fn generate_question(&self, target: &ObjectRow, others: &[ObjectRow], object_labels: &[String]) -> Result<QuestionRecord>;

    fn interpret_answer(&self, question: &QuestionRecord, answer_text: &str, responding_user: &str, users: &[String]) -> Result<AnswerLabel>;

    /// Owner prediction for every object without the probabilistic model.
    fn predict_owners(&self, objects: &[ObjectRow], users: &[String]) -> Result<Vec<AnswerLabel>>;
}

fn markers() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            "OTHER_OBJECT_LIST|TARGET_OBJECT_LIST|OBJECT_LIST|ENVIRONMENT_CONTEXT|LABEL_COUNT|LABEL_LIST|QUESTION_TEXT|USER_ANSWER|USER_LIST|RESPONDING_USER",
        )
        .expect("marker pattern")
    })
}

/// Single-pass marker substitution: substituted text is never rescanned.
/// Markers without a value are left untouched.
pub fn render_template(template: &str, values: &BTreeMap<&str, String>) -> String {
    markers()
        .replace_all(template, |caps: &regex::Captures<'_>| {
            let m = &caps[0];
            values.get(m).cloned().unwrap_or_else(|| m.to_string())
        })
        .into_owned()
}

pub fn render_classify_prompt(classes: &[String], context: EnvironmentContext) -> String {
    let values = BTreeMap::from([
        ("OBJECT_LIST", classes.join(", ")),
        ("ENVIRONMENT_CONTEXT", context.prompt_lines().to_string()),
    ]);
    render_template(CLASSIFY_TEMPLATE, &values)
}

pub fn render_question_prompt(target: &ObjectRow, others: &[ObjectRow], object_labels: &[String]) -> String {
    let mut other_list = String::new();
    for row in others {
        let _ = write!(other_list, "\n{}", row.prompt_line());
    }
    let values = BTreeMap::from([
        ("LABEL_COUNT", object_labels.len().to_string()),
        ("LABEL_LIST", object_labels.join(", ")),
        ("OTHER_OBJECT_LIST", other_list),
        ("TARGET_OBJECT_LIST", format!("\n{}", target.prompt_line())),
    ]);
    render_template(QUESTION_TEMPLATE, &values)
}

pub fn render_interpret_prompt(question: &str, answer: &str, users: &[String], responding_user: &str) -> String {
    let list = users
        .iter()
        .map(|u| format!("\"{u}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let values = BTreeMap::from([
        ("QUESTION_TEXT", question.to_string()),
        ("USER_ANSWER", answer.to_string()),
        ("USER_LIST", format!("[{list}]")),
        ("RESPONDING_USER", responding_user.to_string()),
    ]);
    render_template(INTERPRET_TEMPLATE, &values)
}

fn strip_quotes(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '“' | '”' | '‘' | '’'))
        .trim()
}

/// Parses `Owned_object = [a, b]` and partitions `classes` accordingly.
/// Listed names that are not among `classes` are ignored.
pub fn parse_classification(raw: &str, classes: &[String]) -> Result<Classification> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?s)Owned_object\s*=\s*\[(.*?)\]").expect("pattern"));
    let caps = re.captures(raw).ok_or_else(|| Error::Parse {
        message: "no `Owned_object = [...]` list in output".into(),
        raw: raw.to_string(),
    })?;
    let listed: Vec<String> = caps[1]
        .split(',')
        .map(strip_quotes)
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect();
    Ok(partition(classes, |c| listed.contains(&c.to_lowercase())))
}

pub(crate) fn partition(classes: &[String], mut owned: impl FnMut(&str) -> bool) -> Classification {
    let mut out = Classification::default();
    for c in classes {
        if owned(c) {
            out.owned.insert(c.clone());
        } else {
            out.shared.insert(c.clone());
        }
    }
    out
}

/// Extracts the value of `answer_output = ...`.
pub fn parse_answer_output(raw: &str) -> Result<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"answer_output\s*=\s*([^\r\n]+)").expect("pattern"));
    let value = re
        .captures(raw)
        .map(|c| strip_quotes(&c[1]).to_string())
        .filter(|v| !v.is_empty());
    value.ok_or_else(|| Error::Parse {
        message: "no `answer_output = ...` line in output".into(),
        raw: raw.to_string(),
    })
}

/// Maps a free-form name onto the closed vocabulary: `Shared`, an exact
/// (case-insensitive) user, or the unique closest user within edit distance
/// 2 (and less than half the name's length).
pub fn resolve_name(candidate: &str, users: &[String]) -> std::result::Result<AnswerLabel, String> {
    let c = candidate.trim();
    if c.eq_ignore_ascii_case(AnswerLabel::SHARED) {
        return Ok(AnswerLabel::Shared);
    }
    if let Some(u) = users.iter().find(|u| u.eq_ignore_ascii_case(c)) {
        return Ok(AnswerLabel::Owner(u.clone()));
    }
    match closest_user(c, users) {
        Closest::One(u) => Ok(AnswerLabel::Owner(u)),
        Closest::Tie => Err(format!("`{c}` is equally close to several users")),
        Closest::None => Err(format!("`{c}` does not name a known user")),
    }
}

pub(crate) enum Closest {
    One(String),
    Tie,
    None,
}

pub(crate) fn closest_user(token: &str, users: &[String]) -> Closest {
    let t = token.to_lowercase();
    let mut best: Option<(usize, Vec<&String>)> = None;
    for u in users {
        let d = strsim::levenshtein(&t, &u.to_lowercase());
        if d > 2 || 2 * d >= u.chars().count() {
            continue;
        }
        match &mut best {
            Some((bd, list)) if d == *bd => list.push(u),
            Some((bd, _)) if d > *bd => {}
            _ => best = Some((d, vec![u])),
        }
    }
    match best {
        None => Closest::None,
        Some((_, list)) if list.len() == 1 => Closest::One(list[0].clone()),
        Some(_) => Closest::Tie,
    }
}
