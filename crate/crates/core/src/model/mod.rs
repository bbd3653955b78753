//! Generative ownership model.
//!
//! Each object `n` carries a 2-D map position `x_n`, a multi-hot attribute
//! count vector `o_n` and (possibly missing) answer `w_n`. Objects are tied to
//! an ownership concept `C_n` and a position component `i_n`:
//!
//! - `C_n ~ Cat(π)`, `π ~ Dir(γ)` over `L` concepts
//! - `i_n ~ Cat(φ_{C_n})`, `φ_l ~ Dir(λ/K)` over `K` shared position components
//! - `x_n ~ N(μ_{i_n}, Σ_{i_n})` with a Normal–inverse-Wishart prior per component
//! - `o_n ~ Mult(ϕ_{C_n})`, `ϕ_l ~ Dir(α)`
//! - `w_n ~ Mult(η_{C_n})`, `η_l ~ Dir(β)`
//!
//! All continuous parameters are integrated out; [`SufficientStats`] holds the
//! counts that the collapsed predictive densities in [`predictive`] need.

pub mod predictive;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use predictive::{AssignmentTable, Evidence};
pub use stats::{PositionStats, SufficientStats};

/// Dimension of object positions (map x/y).
pub const POSITION_DIM: usize = 2;

/// Scenario-level object identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Model hyperparameters. Field names in JSON follow the usual notation
/// (`alpha`, `V0`, `L`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Dirichlet concentration per attribute dimension.
    pub alpha: f64,
    /// Dirichlet concentration per answer vocabulary entry.
    pub beta: f64,
    /// Dirichlet concentration per ownership concept.
    pub gamma: f64,
    /// Total concentration of the per-concept component mixture (split as λ/K).
    pub lambda: f64,
    pub m0: [f64; POSITION_DIM],
    pub kappa0: f64,
    #[serde(rename = "V0")]
    pub v0: [[f64; POSITION_DIM]; POSITION_DIM],
    pub nu0: f64,
    #[serde(rename = "L")]
    pub num_concepts: usize,
    #[serde(rename = "K")]
    pub num_components: usize,
    pub w_answer: f64,
    pub w_attribute: f64,
    pub w_position: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.01,
            gamma: 5.0,
            lambda: 1.0,
            m0: [0.0, 0.0],
            kappa0: 1.0,
            v0: [[0.1, 0.0], [0.0, 0.1]],
            nu0: 5.0,
            num_concepts: 4,
            num_components: 4,
            w_answer: 1.0,
            w_attribute: 1.0,
            w_position: 1.0,
        }
    }
}

impl Hyperparameters {
    /// Checks every constraint and returns the list of violations.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("kappa0", self.kappa0),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be a positive finite number (got {v})"));
            }
        }
        if !(self.nu0.is_finite() && self.nu0 > POSITION_DIM as f64 + 1.0) {
            out.push(format!(
                "nu0 must exceed {} (got {})",
                POSITION_DIM + 1,
                self.nu0
            ));
        }
        if self.m0.iter().any(|v| !v.is_finite()) {
            out.push("m0 must be finite".into());
        }
        let v0 = self.v0_matrix();
        if v0.iter().any(|v| !v.is_finite()) || (v0 - v0.transpose()).abs().max() > 1e-12 {
            out.push("V0 must be a finite symmetric matrix".into());
        } else if v0.cholesky().is_none() {
            out.push("V0 must be positive definite".into());
        }
        if self.num_concepts == 0 {
            out.push("L must be at least 1".into());
        }
        if self.num_components == 0 {
            out.push("K must be at least 1".into());
        }
        for (name, w) in [
            ("w_answer", self.w_answer),
            ("w_attribute", self.w_attribute),
            ("w_position", self.w_position),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                out.push(format!("{name} must be a non-negative finite number (got {w})"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Hyperparameters(v.join("; ")))
        }
    }

    pub fn m0_vector(&self) -> Vector2<f64> {
        Vector2::new(self.m0[0], self.m0[1])
    }

    pub fn v0_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.v0[0][0], self.v0[0][1], self.v0[1][0], self.v0[1][1])
    }
}

/// Multi-hot attribute counts laid out as `[class | color(6) | size(3) | shape(3)]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeVector {
    values: Vec<u32>,
}

impl AttributeVector {
    pub fn new(values: Vec<u32>) -> Self {
        Self { values }
    }

    /// Builds a vector from signed counts, rejecting negatives.
    pub fn from_counts(counts: &[i64]) -> Result<Self> {
        let values = counts
            .iter()
            .map(|&c| {
                u32::try_from(c).map_err(|_| Error::Input(format!("attribute count {c} is negative or too large")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { values })
    }

    pub fn one_hot(dim: usize, index: usize) -> Self {
        let mut values = vec![0; dim];
        values[index] = 1;
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| u64::from(v)).sum()
    }
}

/// A user's answer about an object. `Unknown` is missing data, not a
/// vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum AnswerLabel {
    #[default]
    Unknown,
    Shared,
    Owner(String),
}

impl AnswerLabel {
    pub const SHARED: &'static str = "Shared";
    pub const UNKNOWN: &'static str = "unknown";

    pub fn is_known(&self) -> bool {
        !matches!(self, AnswerLabel::Unknown)
    }

    /// Parses the textual form produced by `Display`.
    pub fn parse(s: &str) -> Self {
        let t = s.trim();
        if t.is_empty() || t.eq_ignore_ascii_case(Self::UNKNOWN) {
            AnswerLabel::Unknown
        } else if t.eq_ignore_ascii_case(Self::SHARED) {
            AnswerLabel::Shared
        } else {
            AnswerLabel::Owner(t.to_string())
        }
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerLabel::Unknown => f.write_str(Self::UNKNOWN),
            AnswerLabel::Shared => f.write_str(Self::SHARED),
            AnswerLabel::Owner(name) => f.write_str(name),
        }
    }
}

impl Serialize for AnswerLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnswerLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(AnswerLabel::parse(&s))
    }
}

/// Known answers keyed by object.
pub type AnswerOverlay = BTreeMap<ObjectId, AnswerLabel>;

/// Closed answer vocabulary: every user, then `Shared`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerVocabulary {
    users: Vec<String>,
}

impl AnswerVocabulary {
    pub fn new(users: Vec<String>) -> Result<Self> {
        for (i, u) in users.iter().enumerate() {
            if u.trim().is_empty() {
                return Err(Error::Input("user names must be non-empty".into()));
            }
            if u.eq_ignore_ascii_case(AnswerLabel::SHARED) || u.eq_ignore_ascii_case(AnswerLabel::UNKNOWN) {
                return Err(Error::Input(format!("`{u}` is reserved and cannot be a user name")));
            }
            if users[..i].contains(u) {
                return Err(Error::Input(format!("duplicate user `{u}`")));
            }
        }
        Ok(Self { users })
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    /// `V_w = |users| + 1`.
    pub fn len(&self) -> usize {
        self.users.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shared_index(&self) -> usize {
        self.users.len()
    }

    /// Vocabulary index of a label; `None` for `Unknown`.
    pub fn index(&self, label: &AnswerLabel) -> Result<Option<usize>> {
        match label {
            AnswerLabel::Unknown => Ok(None),
            AnswerLabel::Shared => Ok(Some(self.shared_index())),
            AnswerLabel::Owner(name) => self
                .users
                .iter()
                .position(|u| u == name)
                .map(Some)
                .ok_or_else(|| Error::Vocabulary(name.clone())),
        }
    }

    pub fn label(&self, index: usize) -> AnswerLabel {
        if index == self.shared_index() {
            AnswerLabel::Shared
        } else {
            AnswerLabel::Owner(self.users[index].clone())
        }
    }
}

/// Evidence about one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub object_id: ObjectId,
    pub position: [f64; POSITION_DIM],
    pub attributes: AttributeVector,
    #[serde(default)]
    pub answer: AnswerLabel,
    /// Ground-truth position component when component assignments are clamped.
    #[serde(default)]
    pub fixed_position_component: Option<usize>,
}

/// A sampled latent assignment `(C_n, i_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub concept: usize,
    pub component: usize,
}

/// Hyperparameters together with the vocabulary and attribute dimension they
/// apply to. Everything in here is immutable once built.
#[derive(Debug, Clone)]
pub struct Model {
    h: Hyperparameters,
    vocab: AnswerVocabulary,
    attribute_dim: usize,
    m0: Vector2<f64>,
    v0: Matrix2<f64>,
}

impl Model {
    pub fn new(h: Hyperparameters, vocab: AnswerVocabulary, attribute_dim: usize) -> Result<Self> {
        h.validate()?;
        if attribute_dim == 0 {
            return Err(Error::Input("attribute dimension must be at least 1".into()));
        }
        let m0 = h.m0_vector();
        let v0 = h.v0_matrix();
        Ok(Self {
            h,
            vocab,
            attribute_dim,
            m0,
            v0,
        })
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.h
    }

    pub fn vocabulary(&self) -> &AnswerVocabulary {
        &self.vocab
    }

    pub fn attribute_dim(&self) -> usize {
        self.attribute_dim
    }

    pub fn num_concepts(&self) -> usize {
        self.h.num_concepts
    }

    pub fn num_components(&self) -> usize {
        self.h.num_components
    }

    pub fn answer_vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn empty_stats(&self) -> SufficientStats {
        SufficientStats::new(self.num_concepts(), self.num_components(), self.attribute_dim, self.vocab.len())
    }

    pub(crate) fn prior_mean(&self) -> Vector2<f64> {
        self.m0
    }

    pub(crate) fn prior_scale(&self) -> Matrix2<f64> {
        self.v0
    }
}
