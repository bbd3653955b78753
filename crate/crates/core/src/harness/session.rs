//! The question loop: explore, classify, then ask until no candidates remain.
//!
//! Step −1 runs the filter with every answer unknown. Step 0 classifies
//! object classes as shared or owned, marks shared objects with the `Shared`
//! pseudo-answer and reruns the filter; owned objects become candidates.
//! Every answered question advances the step by one.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ari::adjusted_rand_index;
use super::scenario::Scenario;
use crate::dialogue::{Classification, Dialogue, QuestionRecord};
use crate::error::{Error, Result};
use crate::model::{AnswerLabel, AnswerOverlay, Hyperparameters, Model, ObjectId, Observation};
use crate::rbpf::{map_assignments, update_model, FilterConfig, ParticleState};
use crate::rng::{derive_seed, TAG_SELECT, TAG_STEP};
use crate::selector::{ensemble_predictive, select_next, IgConfig, IgEstimate, IgMode, Strategy};

/// Comparison methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Classification, then highest-IG questions.
    #[default]
    IgMax,
    /// Classification, then lowest-IG questions.
    IgMin,
    /// Classification, then uniformly random questions.
    Random,
    /// Highest-IG questions over every object, no classification.
    NoLlm,
    /// Owner prediction from the dialogue backend alone.
    LlmOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::IgMax, Method::IgMin, Method::Random, Method::NoLlm, Method::LlmOnly];

    pub fn name(self) -> &'static str {
        match self {
            Method::IgMax => "ig-max",
            Method::IgMin => "ig-min",
            Method::Random => "random",
            Method::NoLlm => "no-llm",
            Method::LlmOnly => "llm-only",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Input(format!("unknown strategy `{s}` (expected one of ig-max, ig-min, random, no-llm, llm-only)")))
    }
}

/// Modality masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Attribute vector reduced to its color block.
    ColorOnly,
    /// Attribute likelihood switched off.
    PositionOnly,
    /// Position likelihood switched off and components left free.
    AttributeOnly,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Ablation::None),
            "color-only" => Ok(Ablation::ColorOnly),
            "position-only" => Ok(Ablation::PositionOnly),
            "attribute-only" => Ok(Ablation::AttributeOnly),
            other => Err(Error::Input(format!(
                "unknown ablation `{other}` (expected none, color-only, position-only, attribute-only)"
            ))),
        }
    }
}

/// What to do when an answer cannot be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Move the object to the back of the queue; drop it after a second failure.
    #[default]
    SkipRequeue,
    /// End the trial.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IgModeName {
    #[default]
    Sampled,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub particles: usize,
    pub pseudo_samples: usize,
    pub ig_mode: IgModeName,
    pub ess_threshold: f64,
    /// Fix each object's position component to the scenario's index.
    pub clamp_components: bool,
    pub ablation: Ablation,
    pub on_interpretation_error: FailurePolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            pseudo_samples: 10,
            ig_mode: IgModeName::Sampled,
            ess_threshold: 0.5,
            clamp_components: true,
            ablation: Ablation::None,
            on_interpretation_error: FailurePolicy::SkipRequeue,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Input("particles must be at least 1".into()));
        }
        if self.pseudo_samples == 0 {
            return Err(Error::Input("pseudo_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return Err(Error::Input("ess_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn ig_mode(&self) -> IgMode {
        match self.ig_mode {
            IgModeName::Sampled => IgMode::Sampled {
                pseudo_samples: self.pseudo_samples,
            },
            IgModeName::Exact => IgMode::Exact,
        }
    }

    /// Hyperparameters after applying the ablation mask.
    pub fn hyperparameters(&self, base: &Hyperparameters) -> Hyperparameters {
        let mut h = base.clone();
        match self.ablation {
            Ablation::PositionOnly => h.w_attribute = 0.0,
            Ablation::AttributeOnly => h.w_position = 0.0,
            Ablation::None | Ablation::ColorOnly => {}
        }
        h
    }

    /// Observations after applying the ablation mask.
    pub fn observations(&self, scenario: &Scenario) -> Vec<Observation> {
        let clamp = self.clamp_components && self.ablation != Ablation::AttributeOnly;
        let mut obs = scenario.observations(clamp);
        if self.ablation == Ablation::ColorOnly {
            for (o, so) in obs.iter_mut().zip(&scenario.objects) {
                o.attributes = scenario.color_vector(so);
            }
        }
        obs
    }
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub trial: usize,
    pub step: i64,
    pub strategy: String,
    pub selected_object: Option<ObjectId>,
    pub ig_value: Option<f64>,
    pub question: Option<String>,
    pub answer: Option<String>,
    pub ari: f64,
    pub n_questions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureAction {
    Requeued,
    Dropped,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationFailure {
    pub trial: usize,
    /// Step the answer would have produced.
    pub step: i64,
    pub object_id: ObjectId,
    pub answer_text: String,
    pub reason: String,
    pub action: FailureAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub object_id: ObjectId,
    pub class: String,
    /// IG from the most recent selection; absent before the first one.
    pub ig: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub object_id: ObjectId,
    pub class: String,
    pub color: String,
    pub x: f64,
    pub y: f64,
    pub answer: AnswerLabel,
    pub map_concept: usize,
    /// Entropy (nats) of the ensemble answer predictive.
    pub answer_entropy: f64,
}

/// Read-only view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub scenario: String,
    pub method: Method,
    pub step: i64,
    pub complete: bool,
    pub users: Vec<String>,
    pub candidates: Vec<CandidateView>,
    pub question: Option<QuestionRecord>,
    pub objects: Vec<ObjectView>,
    pub history: Vec<StepMetrics>,
}

#[derive(Debug, Clone)]
struct Pending {
    question: QuestionRecord,
    ig_value: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Session {
    scenario: Scenario,
    config: EngineConfig,
    method: Method,
    trial: usize,
    seed: u64,
    model: Model,
    observations: Vec<Observation>,
    truth: Vec<AnswerLabel>,
    answers: AnswerOverlay,
    classification: Option<Classification>,
    candidates: BTreeSet<ObjectId>,
    deferred: BTreeSet<ObjectId>,
    step: i64,
    questions: usize,
    state: ParticleState,
    history: Vec<StepMetrics>,
    last_estimates: Vec<IgEstimate>,
    pending: Option<Pending>,
    failures: Vec<InterpretationFailure>,
}

impl Session {
    /// Runs step −1 and, unless the method skips classification, step 0.
    pub fn start(scenario: &Scenario, config: &EngineConfig, method: Method, trial: usize, seed: u64, dialogue: &dyn Dialogue) -> Result<Session> {
        if method == Method::LlmOnly {
            return Err(Error::Input("llm-only does not run the question loop".into()));
        }
        scenario.validate()?;
        config.validate()?;
        let observations = config.observations(scenario);
        let attribute_dim = observations[0].attributes.dim();
        let model = Model::new(config.hyperparameters(&scenario.hyperparameters), scenario.vocabulary()?, attribute_dim)?;
        let answers = AnswerOverlay::new();
        let state = run_filter(&model, &observations, &answers, config, seed, -1)?;
        let mut session = Session {
            scenario: scenario.clone(),
            config: *config,
            method,
            trial,
            seed,
            model,
            observations,
            truth: scenario.truth(),
            answers,
            classification: None,
            candidates: scenario.objects.iter().map(|o| o.id).collect(),
            deferred: BTreeSet::new(),
            step: -1,
            questions: 0,
            state,
            history: Vec::new(),
            last_estimates: Vec::new(),
            pending: None,
            failures: Vec::new(),
        };
        session.record(None, None, None, None)?;

        if method != Method::NoLlm {
            let c = dialogue.classify_shared_owned(&scenario.class_list(), scenario.context)?;
            for o in &scenario.objects {
                if c.is_shared(&o.class) {
                    session.answers.insert(o.id, AnswerLabel::Shared);
                    session.candidates.remove(&o.id);
                }
            }
            session.classification = Some(c);
            session.step = 0;
            session.refilter()?;
            session.record(None, None, None, None)?;
        }
        Ok(session)
    }

    fn refilter(&mut self) -> Result<()> {
        self.state = run_filter(&self.model, &self.observations, &self.answers, &self.config, self.seed, self.step)?;
        Ok(())
    }

    fn record(&mut self, selected: Option<ObjectId>, ig: Option<f64>, question: Option<String>, answer: Option<String>) -> Result<StepMetrics> {
        let m = StepMetrics {
            trial: self.trial,
            step: self.step,
            strategy: self.method.name().to_string(),
            selected_object: selected,
            ig_value: ig,
            question,
            answer,
            ari: self.ari()?,
            n_questions: self.questions,
        };
        self.history.push(m.clone());
        Ok(m)
    }

    /// ARI of the MAP particle's concepts against the true owners.
    pub fn ari(&self) -> Result<f64> {
        adjusted_rand_index(&map_assignments(&self.state), &self.truth)
    }

    /// Selects the next object and phrases the question.
    pub fn ask(&mut self, dialogue: &dyn Dialogue) -> Result<QuestionRecord> {
        if self.pending.is_some() {
            return Err(Error::Conflict("a question is already awaiting its answer".into()));
        }
        let pool: Vec<ObjectId> = if self.candidates.is_empty() {
            self.deferred.iter().copied().collect()
        } else {
            self.candidates.iter().copied().collect()
        };
        if pool.is_empty() {
            return Err(Error::NoCandidates);
        }
        let next = (self.step + 1) as u64;
        let strategy = match self.method {
            Method::IgMax | Method::NoLlm => Strategy::IgMax,
            Method::IgMin => Strategy::IgMin,
            Method::Random => Strategy::Random {
                seed: derive_seed(self.seed, &[TAG_SELECT, next]),
            },
            Method::LlmOnly => unreachable!("rejected in start"),
        };
        let cfg = IgConfig {
            mode: self.config.ig_mode(),
            seed: derive_seed(self.seed, &[TAG_SELECT, next, 1]),
            keep_predictives: false,
        };
        let (target, estimates) = select_next(&self.state, &pool, strategy, &cfg)?;
        let ig_value = estimates.iter().find(|e| e.object_id == target).map(|e| e.value);
        if !estimates.is_empty() {
            self.last_estimates = estimates;
        }

        let rows = self.scenario.object_rows(&self.answers);
        let idx = self.scenario.index_of(target).ok_or(Error::UnknownObject(target))?;
        let others: Vec<_> = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .map(|(_, r)| r.clone())
            .collect();
        let question = dialogue.generate_question(&rows[idx], &others, &self.scenario.class_list())?;
        if question.question_text.trim().is_empty() {
            return Err(Error::Generation);
        }
        self.pending = Some(Pending {
            question: question.clone(),
            ig_value,
        });
        Ok(question)
    }

    /// Interprets an answer to the pending question and folds it in. On an
    /// interpretation error the question stays pending.
    pub fn answer(&mut self, dialogue: &dyn Dialogue, text: &str, responding_user: &str) -> Result<StepMetrics> {
        let pending = self
            .pending
            .clone()
            .ok_or_else(|| Error::Conflict("no question is awaiting an answer".into()))?;
        let label = dialogue.interpret_answer(&pending.question, text, responding_user, &self.scenario.users)?;
        if !label.is_known() || self.model.vocabulary().index(&label).is_err() {
            return Err(Error::Interpretation {
                raw: text.to_string(),
                reason: format!("`{label}` is not a user or Shared"),
            });
        }
        let target = pending.question.target_object_id;
        self.answers.insert(target, label.clone());
        self.candidates.remove(&target);
        self.deferred.remove(&target);
        self.pending = None;
        self.step += 1;
        self.questions += 1;
        self.refilter()?;
        self.record(Some(target), pending.ig_value, Some(pending.question.question_text), Some(label.to_string()))
    }

    /// Gives up on the pending question after an interpretation failure.
    pub fn skip_pending(&mut self, answer_text: &str, reason: &str) -> Result<FailureAction> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Conflict("no question is awaiting an answer".into()))?;
        let id = pending.question.target_object_id;
        let action = if self.deferred.remove(&id) {
            FailureAction::Dropped
        } else {
            self.candidates.remove(&id);
            self.deferred.insert(id);
            FailureAction::Requeued
        };
        self.push_failure(id, answer_text, reason, action);
        Ok(action)
    }

    /// Ends the loop after an interpretation failure.
    pub fn abort_pending(&mut self, answer_text: &str, reason: &str) -> Result<()> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Conflict("no question is awaiting an answer".into()))?;
        self.push_failure(pending.question.target_object_id, answer_text, reason, FailureAction::Aborted);
        self.candidates.clear();
        self.deferred.clear();
        Ok(())
    }

    fn push_failure(&mut self, object_id: ObjectId, answer_text: &str, reason: &str, action: FailureAction) {
        self.failures.push(InterpretationFailure {
            trial: self.trial,
            step: self.step + 1,
            object_id,
            answer_text: answer_text.to_string(),
            reason: reason.to_string(),
            action,
        });
    }

    pub fn is_complete(&self) -> bool {
        self.pending.is_none() && self.candidates.is_empty() && self.deferred.is_empty()
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn history(&self) -> &[StepMetrics] {
        &self.history
    }

    pub fn failures(&self) -> &[InterpretationFailure] {
        &self.failures
    }

    pub fn answers(&self) -> &AnswerOverlay {
        &self.answers
    }

    pub fn classification(&self) -> Option<&Classification> {
        self.classification.as_ref()
    }

    /// Unanswered candidates, deferred ones included.
    pub fn candidates(&self) -> Vec<ObjectId> {
        self.candidates.iter().chain(&self.deferred).copied().collect()
    }

    pub fn pending_question(&self) -> Option<&QuestionRecord> {
        self.pending.as_ref().map(|p| &p.question)
    }

    pub fn particle_state(&self) -> &ParticleState {
        &self.state
    }

    pub fn last_estimates(&self) -> &[IgEstimate] {
        &self.last_estimates
    }

    pub fn snapshot(&self) -> Result<SessionSnapshot> {
        let concepts = map_assignments(&self.state);
        let objects = self
            .scenario
            .objects
            .iter()
            .enumerate()
            .map(|(n, o)| {
                let p = ensemble_predictive(&self.state, n)?;
                let entropy = -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>();
                Ok(ObjectView {
                    object_id: o.id,
                    class: o.class.clone(),
                    color: o.color.clone(),
                    x: o.x,
                    y: o.y,
                    answer: self.answers.get(&o.id).cloned().unwrap_or_default(),
                    map_concept: concepts[n],
                    answer_entropy: entropy.max(0.0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let candidates = self
            .candidates()
            .into_iter()
            .map(|id| CandidateView {
                object_id: id,
                class: self.scenario.object(id).map(|o| o.class.clone()).unwrap_or_default(),
                ig: self.last_estimates.iter().find(|e| e.object_id == id).map(|e| e.value),
            })
            .collect();
        Ok(SessionSnapshot {
            scenario: self.scenario.name.clone(),
            method: self.method,
            step: self.step,
            complete: self.is_complete(),
            users: self.scenario.users.clone(),
            candidates,
            question: self.pending_question().cloned(),
            objects,
            history: self.history.clone(),
        })
    }
}

fn run_filter(model: &Model, observations: &[Observation], answers: &AnswerOverlay, config: &EngineConfig, seed: u64, step: i64) -> Result<ParticleState> {
    let cfg = FilterConfig {
        particles: config.particles,
        seed: derive_seed(seed, &[TAG_STEP, (step + 1) as u64]),
        ess_threshold: config.ess_threshold,
    };
    update_model(model, observations, answers, &cfg)
}
