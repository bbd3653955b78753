//! Information-gain estimation and query selection.
//!
//! The information gain of asking about object `a` is the mutual information
//! between the particle identity (weighted by the filter weights) and the
//! answer `w_a`:
//!
//! ```text
//! IG_a = Σ_r ω_r Σ_v p(v | Z_r) ln( p(v | Z_r) / Σ_r' ω_r' p(v | Z_r') )
//! ```
//!
//! [`IgMode::Exact`] sums over the answer vocabulary; [`IgMode::Sampled`]
//! replaces the inner sum by the average over `J` pseudo-answers drawn from
//! each particle's predictive.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnswerLabel, AnswerVocabulary, Assignment, Evidence, Model, ObjectId, Observation, SufficientStats};
use crate::rbpf::ParticleState;
use crate::rng::{self, TAG_PSEUDO, TAG_SELECT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IgMode {
    /// Monte Carlo over `pseudo_samples` pseudo-answers per particle.
    Sampled { pseudo_samples: usize },
    /// Exact sum over the answer vocabulary.
    Exact,
}

impl Default for IgMode {
    fn default() -> Self {
        IgMode::Sampled { pseudo_samples: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgEstimate {
    pub object_id: ObjectId,
    /// Nats.
    pub value: f64,
    pub mode: IgMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_particle_predictives: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    IgMax,
    IgMin,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IgConfig {
    pub mode: IgMode,
    pub seed: u64,
    /// Keep the `R × V_w` predictive table in each estimate.
    pub keep_predictives: bool,
}

/// Answer distribution for evidence `ev` under fixed statistics: the concept
/// marginal of the assignment table mixed with each concept's answer
/// predictive.
pub fn answer_mixture(model: &Model, stats: &SufficientStats, ev: &Evidence) -> Result<Vec<f64>> {
    let unanswered = ev.with_answer(None);
    let table = model.assignment_table(stats, &unanswered)?;
    let mut out = vec![0.0; model.answer_vocab_len()];
    for (l, mass) in table.concept_marginals().into_iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(model.answer_predictive(stats, l)) {
            *o += mass * p;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

/// Predictive of the answer for one object under the statistics of
/// `particle`, with the object's own contribution removed first when the
/// particle has already processed it.
fn leave_one_out_predictive(state: &ParticleState, stats: &SufficientStats, assignments: &[Assignment], ev: &Evidence, index: Option<usize>) -> Result<Vec<f64>> {
    match index.filter(|&n| n < assignments.len()) {
        Some(n) => {
            let mut held_out = stats.clone();
            held_out.remove(&state.evidence()[n], assignments[n])?;
            answer_mixture(state.model(), &held_out, ev)
        }
        None => answer_mixture(state.model(), stats, ev),
    }
}

fn candidate_evidence(state: &ParticleState, obs: &Observation) -> Result<(Evidence, Option<usize>)> {
    if obs.answer.is_known() {
        return Err(Error::AlreadyAnswered(obs.object_id));
    }
    match state.index_of(obs.object_id) {
        Some(n) => {
            if state.processed()[n].answer.is_known() {
                return Err(Error::AlreadyAnswered(obs.object_id));
            }
            Ok((state.evidence()[n].clone(), Some(n)))
        }
        None => Ok((state.model().evidence(obs)?, None)),
    }
}

/// `p(w_a | Z_r, x_a, o_a, W_known)` for particle `particle`.
pub fn predictive_answer_distribution(state: &ParticleState, particle: usize, obs: &Observation) -> Result<Vec<f64>> {
    let (ev, index) = candidate_evidence(state, obs)?;
    let p = state
        .particles()
        .get(particle)
        .ok_or_else(|| Error::Input(format!("particle {particle} out of range")))?;
    leave_one_out_predictive(state, &p.stats, &p.assignments, &ev, index)
}

/// Answer predictive for object at processing index `index`, ignoring whether
/// it has been answered (its answer, if any, is held out together with the
/// rest of its contribution).
pub fn held_out_predictive(state: &ParticleState, particle: usize, index: usize) -> Result<Vec<f64>> {
    let p = &state.particles()[particle];
    let ev = state.evidence()[index].with_answer(None);
    leave_one_out_predictive(state, &p.stats, &p.assignments, &ev, Some(index))
}

/// Weight-averaged held-out answer predictive of the object at processing
/// index `index`.
pub fn ensemble_predictive(state: &ParticleState, index: usize) -> Result<Vec<f64>> {
    let ev = state
        .evidence()
        .get(index)
        .ok_or_else(|| Error::Input(format!("no processed observation at index {index}")))?
        .with_answer(None);
    let rows = particle_predictives(state, &ev, Some(index))?;
    let mut out = vec![0.0; state.model().answer_vocab_len()];
    for (w, row) in state.normalized_weights().iter().zip(&rows) {
        for (o, p) in out.iter_mut().zip(row) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Per-particle predictives, computed once per distinct assignment history.
fn particle_predictives(state: &ParticleState, ev: &Evidence, index: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut cache: HashMap<&[Assignment], usize> = HashMap::new();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut rows = Vec::with_capacity(state.len());
    for p in state.particles() {
        let slot = match cache.get(p.assignments.as_slice()) {
            Some(&slot) => slot,
            None => {
                unique.push(leave_one_out_predictive(state, &p.stats, &p.assignments, ev, index)?);
                cache.insert(p.assignments.as_slice(), unique.len() - 1);
                unique.len() - 1
            }
        };
        rows.push(slot);
    }
    Ok(rows.into_iter().map(|slot| unique[slot].clone()).collect())
}

/// Draws `count` i.i.d. answers from a categorical predictive.
pub fn sample_pseudo_answers(predictive: &[f64], vocab: &AnswerVocabulary, count: usize, seed: u64) -> Result<Vec<AnswerLabel>> {
    let mut rng = rng::stream(seed, &[TAG_PSEUDO]);
    Ok(sample_indices(predictive, count, &mut rng)?
        .into_iter()
        .map(|v| vocab.label(v))
        .collect())
}

fn sample_indices<R: Rng + ?Sized>(predictive: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(predictive)
        .map_err(|e| Error::Input(format!("invalid predictive distribution: {e}")))?;
    Ok((0..count).map(|_| dist.sample(rng)).collect())
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Mutual information from explicit weights and per-particle predictives.
///
/// Particles with bit-identical predictives are merged before summation and
/// groups are visited in a canonical order, so the result does not depend on
/// particle order.
pub fn information_gain_from_predictives(object_id: ObjectId, weights: &[f64], predictives: &[Vec<f64>], mode: IgMode, seed: u64) -> Result<f64> {
    if weights.len() != predictives.len() || weights.is_empty() {
        return Err(Error::Input("one predictive row per weighted particle required".into()));
    }
    let width = predictives[0].len();
    if predictives.iter().any(|p| p.len() != width) {
        return Err(Error::Input("predictive rows differ in length".into()));
    }

    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| cmp_rows(&predictives[a], &predictives[b]).then(weights[a].total_cmp(&weights[b])));
    let mut groups: Vec<(&[f64], f64)> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some((row, w)) if cmp_rows(row, &predictives[i]).is_eq() => *w += weights[i],
            _ => groups.push((&predictives[i], weights[i])),
        }
    }
    if groups.len() == 1 {
        return Ok(0.0);
    }

    let total: f64 = groups.iter().map(|(_, w)| w).sum();
    let mut mixture = vec![0.0; width];
    for (row, w) in &groups {
        for (m, p) in mixture.iter_mut().zip(row.iter()) {
            *m += w / total * p;
        }
    }

    let mut ig = 0.0;
    for (g, (row, w)) in groups.iter().enumerate() {
        let inner: f64 = match mode {
            IgMode::Exact => row
                .iter()
                .zip(&mixture)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, m)| p * (p / m).ln())
                .sum(),
            IgMode::Sampled { pseudo_samples } => {
                if pseudo_samples == 0 {
                    return Err(Error::Input("at least one pseudo-sample is required".into()));
                }
                let mut rng = rng::stream(seed, &[TAG_PSEUDO, u64::from(object_id.0), g as u64]);
                let mut hits = vec![0usize; width];
                for v in sample_indices(row, pseudo_samples, &mut rng)? {
                    hits[v] += 1;
                }
                hits.iter()
                    .enumerate()
                    .filter(|(_, &n)| n > 0)
                    .map(|(v, &n)| {
                        assert!(mixture[v] > 0.0, "sampled answer has zero mixture probability");
                        n as f64 / pseudo_samples as f64 * (row[v] / mixture[v]).ln()
                    })
                    .sum()
            }
        };
        ig += w / total * inner;
    }
    Ok(match mode {
        IgMode::Exact => ig.max(0.0),
        IgMode::Sampled { .. } => ig,
    })
}

/// Information gain of asking about `obs` under the current ensemble.
pub fn information_gain(state: &ParticleState, obs: &Observation, mode: IgMode, seed: u64) -> Result<IgEstimate> {
    estimate(state, obs, &IgConfig { mode, seed, keep_predictives: false })
}

fn estimate(state: &ParticleState, obs: &Observation, cfg: &IgConfig) -> Result<IgEstimate> {
    let (ev, index) = candidate_evidence(state, obs)?;
    let predictives = particle_predictives(state, &ev, index)?;
    let value = information_gain_from_predictives(obs.object_id, state.normalized_weights(), &predictives, cfg.mode, cfg.seed)?;
    Ok(IgEstimate {
        object_id: obs.object_id,
        value,
        mode: cfg.mode,
        per_particle_predictives: cfg.keep_predictives.then_some(predictives),
    })
}

/// Picks the next object to ask about. Returns every IG estimate computed
/// (none for [`Strategy::Random`]). Ties go to the lowest object id.
pub fn select_next(state: &ParticleState, candidates: &[ObjectId], strategy: Strategy, cfg: &IgConfig) -> Result<(ObjectId, Vec<IgEstimate>)> {
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::NoCandidates);
    }
    if let Strategy::Random { seed } = strategy {
        let mut rng = rng::stream(seed, &[TAG_SELECT]);
        return Ok((ids[rng.random_range(0..ids.len())], Vec::new()));
    }

    let estimates = ids
        .par_iter()
        .map(|&id| {
            let n = state.index_of(id).ok_or(Error::UnknownObject(id))?;
            let obs = &state.processed()[n];
            estimate(state, obs, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0;
    for (i, e) in estimates.iter().enumerate().skip(1) {
        let better = match strategy {
            Strategy::IgMax => e.value > estimates[best].value,
            Strategy::IgMin => e.value < estimates[best].value,
            Strategy::Random { .. } => unreachable!(),
        };
        if better {
            best = i;
        }
    }
    Ok((ids[best], estimates))
}
