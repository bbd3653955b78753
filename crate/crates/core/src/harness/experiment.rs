//! Trials with scripted users, multi-trial experiments and their outputs.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ari::adjusted_rand_index;
use super::oracle::{persona_for, scripted_answer};
use super::scenario::Scenario;
use super::session::{EngineConfig, FailurePolicy, InterpretationFailure, Method, Session, StepMetrics};
use crate::dialogue::Dialogue;
use crate::error::{Error, Result};
use crate::model::{AnswerLabel, AnswerOverlay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<StepMetrics>,
    pub failures: Vec<InterpretationFailure>,
}

/// One full session driven by the scripted users.
pub fn run_trial(scenario: &Scenario, method: Method, dialogue: &dyn Dialogue, config: &EngineConfig, trial: usize, seed: u64) -> Result<TrialOutcome> {
    if method == Method::LlmOnly {
        return run_llm_only(scenario, dialogue, trial, seed);
    }
    let mut session = Session::start(scenario, config, method, trial, seed, dialogue)?;
    loop {
        let question = match session.ask(dialogue) {
            Ok(q) => q,
            Err(Error::NoCandidates) => break,
            Err(e) => return Err(e),
        };
        let target = question.target_object_id;
        let persona = persona_for(scenario, target, seed);
        let (text, responder) = scripted_answer(scenario, target, persona, seed)?;
        match session.answer(dialogue, &text, &responder) {
            Ok(_) => {}
            Err(Error::Interpretation { reason, .. }) => {
                tracing::warn!(trial, %target, %reason, "answer could not be interpreted");
                match config.on_interpretation_error {
                    FailurePolicy::SkipRequeue => {
                        session.skip_pending(&text, &reason)?;
                    }
                    FailurePolicy::Abort => {
                        session.abort_pending(&text, &reason)?;
                        break;
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrialOutcome {
        method,
        trial,
        seed,
        records: session.history().to_vec(),
        failures: session.failures().to_vec(),
    })
}

/// Classification followed by a single owner prediction from the dialogue
/// backend. The resulting ARI is repeated for steps −1 through the number of
/// owned objects so the curve lines up with the other methods.
pub fn run_llm_only(scenario: &Scenario, dialogue: &dyn Dialogue, trial: usize, seed: u64) -> Result<TrialOutcome> {
    scenario.validate()?;
    let classification = dialogue.classify_shared_owned(&scenario.class_list(), scenario.context)?;
    let mut answers = AnswerOverlay::new();
    for o in &scenario.objects {
        if classification.is_shared(&o.class) {
            answers.insert(o.id, AnswerLabel::Shared);
        }
    }
    let predicted = dialogue.predict_owners(&scenario.object_rows(&answers), &scenario.users)?;
    if predicted.len() != scenario.objects.len() {
        return Err(Error::Backend {
            message: format!("{} predictions for {} objects", predicted.len(), scenario.objects.len()),
            raw: None,
        });
    }
    let ari = adjusted_rand_index(&predicted, &scenario.truth())?;
    let owned = scenario.objects.len() - answers.len();
    let records = (-1..=owned as i64)
        .map(|step| StepMetrics {
            trial,
            step,
            strategy: Method::LlmOnly.name().to_string(),
            selected_object: None,
            ig_value: None,
            question: None,
            answer: None,
            ari,
            n_questions: 0,
        })
        .collect();
    Ok(TrialOutcome {
        method: Method::LlmOnly,
        trial,
        seed,
        records,
        failures: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub step: i64,
    pub mean_ari: f64,
    /// Population standard deviation over trials.
    pub std_ari: f64,
    /// Mean IG of the selected object over trials that recorded one.
    pub mean_ig: Option<f64>,
}

pub type Aggregate = BTreeMap<String, Vec<AggregateRow>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub outcomes: Vec<TrialOutcome>,
    pub aggregate: Aggregate,
}

impl ExperimentResult {
    /// Every record, grouped by method (in request order), then trial.
    pub fn records(&self) -> impl Iterator<Item = &StepMetrics> {
        self.outcomes.iter().flat_map(|o| o.records.iter())
    }

    pub fn rows(&self, method: Method) -> &[AggregateRow] {
        self.aggregate.get(method.name()).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Runs `trials` trials per method with seeds `base_seed..base_seed + trials`.
/// Trials run in parallel on the current rayon pool; results are ordered.
pub fn run_experiment(scenario: &Scenario, methods: &[Method], trials: usize, base_seed: u64, config: &EngineConfig, dialogue: &dyn Dialogue) -> Result<ExperimentResult> {
    if trials == 0 {
        return Err(Error::Input("at least one trial is required".into()));
    }
    if methods.is_empty() {
        return Err(Error::Input("at least one strategy is required".into()));
    }
    scenario.validate()?;
    config.validate()?;
    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..trials).map(move |t| (m, t)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(m, t)| run_trial(scenario, m, dialogue, config, t, base_seed + t as u64))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(outcomes.iter().flat_map(|o| o.records.iter()));
    Ok(ExperimentResult { outcomes, aggregate })
}

/// Per-strategy, per-step mean and spread of ARI plus mean selected IG.
pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a StepMetrics>) -> Aggregate {
    let mut groups: BTreeMap<String, BTreeMap<i64, Vec<&StepMetrics>>> = BTreeMap::new();
    for r in records {
        groups
            .entry(r.strategy.clone())
            .or_default()
            .entry(r.step)
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(strategy, steps)| {
            let rows = steps
                .into_iter()
                .map(|(step, rs)| {
                    let n = rs.len() as f64;
                    let mean = rs.iter().map(|r| r.ari).sum::<f64>() / n;
                    let var = rs.iter().map(|r| (r.ari - mean).powi(2)).sum::<f64>() / n;
                    let igs: Vec<f64> = rs.iter().filter_map(|r| r.ig_value).collect();
                    AggregateRow {
                        step,
                        mean_ari: mean,
                        std_ari: var.sqrt(),
                        mean_ig: (!igs.is_empty()).then(|| igs.iter().sum::<f64>() / igs.len() as f64),
                    }
                })
                .collect();
            (strategy, rows)
        })
        .collect()
}

/// Writes the metrics table with its header.
pub fn write_metrics_csv<'a, W: Write>(records: impl IntoIterator<Item = &'a StepMetrics>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut any = false;
    for r in records {
        w.serialize(r)?;
        any = true;
    }
    if !any {
        w.write_record(["trial", "step", "strategy", "selected_object", "ig_value", "question", "answer", "ari", "n_questions"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_csv_string<'a>(records: impl IntoIterator<Item = &'a StepMetrics>) -> Result<String> {
    let mut buf = Vec::new();
    write_metrics_csv(records, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(strategy: &str, step: i64, ari: f64, ig: Option<f64>) -> StepMetrics {
        StepMetrics {
            trial: 0,
            step,
            strategy: strategy.into(),
            selected_object: None,
            ig_value: ig,
            question: None,
            answer: None,
            ari,
            n_questions: step.max(0) as usize,
        }
    }

    #[test]
    fn single_trial_aggregate_has_zero_spread() {
        let rs = vec![record("ig-max", -1, 0.2, None), record("ig-max", 1, 0.5, Some(0.3))];
        let a = aggregate(&rs);
        let rows = &a["ig-max"];
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].mean_ari, 0.5);
        assert_eq!(rows[1].std_ari, 0.0);
        assert_eq!(rows[1].mean_ig, Some(0.3));
        assert_eq!(rows[0].mean_ig, None);
    }

    #[test]
    fn population_std() {
        let rs = vec![record("random", 1, 0.0, None), record("random", 1, 1.0, None)];
        assert_eq!(aggregate(&rs)["random"][0].std_ari, 0.5);
    }

    #[test]
    fn csv_header_and_quoting() {
        let mut r = record("ig-max", 1, 0.25, Some(0.5));
        r.question = Some("Whose red Cup is this, the one near the \"Book\"?".into());
        let s = metrics_csv_string([&r]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "trial,step,strategy,selected_object,ig_value,question,answer,ari,n_questions");
        assert_eq!(lines.next().unwrap(), "0,1,ig-max,,0.5,\"Whose red Cup is this, the one near the \"\"Book\"\"?\",,0.25,1");
        assert_eq!(metrics_csv_string([]).unwrap().lines().count(), 1);
    }

    #[test]
    fn llm_only_replicates_one_point() {
        let s = Scenario::builtin("exp1").unwrap();
        let out = run_llm_only(&s, &s.mock_dialogue(&[]), 0, 0).unwrap();
        assert_eq!(out.records.len(), 11);
        assert!(out.records.windows(2).all(|w| w[0].ari == w[1].ari));
    }
}
