//! Rao-Blackwellized particle filter over ownership assignments.
//!
//! Particles carry only discrete assignments `(C_n, i_n)` and the sufficient
//! statistics they induce; all continuous parameters stay collapsed. Each
//! observation is proposed from the exact one-step posterior
//! ([`Model::assignment_table`]) and the particle weight is multiplied by that
//! table's normalizer, i.e. the marginal likelihood of the observation given
//! the particle's past.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnswerOverlay, Assignment, Evidence, Model, Observation, SufficientStats};
use crate::rng::{self, TAG_PROPOSAL, TAG_RESAMPLE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Number of particles `R`.
    pub particles: usize,
    pub seed: u64,
    /// Resample when ESS falls below this fraction of `R`.
    pub ess_threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            seed: 0,
            ess_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    /// Assignments of processed observations, in processing order.
    pub assignments: Vec<Assignment>,
    pub stats: SufficientStats,
    /// Log weight accumulated since the last resampling.
    pub log_weight: f64,
}

impl Particle {
    pub fn empty(model: &Model) -> Self {
        Self {
            assignments: Vec::new(),
            stats: model.empty_stats(),
            log_weight: 0.0,
        }
    }

    /// Builds a particle by folding the given assignments into fresh statistics.
    pub fn from_assignments(model: &Model, evidence: &[Evidence], assignments: Vec<Assignment>) -> Result<Self> {
        if evidence.len() != assignments.len() {
            return Err(Error::Input(format!(
                "{} assignments for {} observations",
                assignments.len(),
                evidence.len()
            )));
        }
        let mut stats = model.empty_stats();
        for (ev, &a) in evidence.iter().zip(&assignments) {
            stats.add(ev, a)?;
        }
        Ok(Self {
            assignments,
            stats,
            log_weight: 0.0,
        })
    }

    pub fn concepts(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.concept).collect()
    }
}

/// The particle ensemble after a pass over the observations.
#[derive(Debug, Clone)]
pub struct ParticleState {
    model: Model,
    particles: Vec<Particle>,
    normalized_weights: Vec<f64>,
    seed: u64,
    processed: Vec<Observation>,
    evidence: Vec<Evidence>,
    resamples: usize,
}

impl ParticleState {
    /// Assembles a state from explicit particles; weights are normalized here.
    pub fn from_parts(model: Model, processed: Vec<Observation>, particles: Vec<Particle>, weights: &[f64]) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::EmptyState);
        }
        if weights.len() != particles.len() {
            return Err(Error::Input("one weight per particle required".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Input("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate("all particle weights are zero".into()));
        }
        let evidence = processed
            .iter()
            .map(|o| model.evidence(o))
            .collect::<Result<Vec<_>>>()?;
        for p in &particles {
            if p.assignments.len() > evidence.len() {
                return Err(Error::Input("particle has more assignments than observations".into()));
            }
        }
        Ok(Self {
            model,
            particles,
            normalized_weights: weights.iter().map(|w| w / total).collect(),
            seed: 0,
            processed,
            evidence,
            resamples: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn normalized_weights(&self) -> &[f64] {
        &self.normalized_weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn processed(&self) -> &[Observation] {
        &self.processed
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    /// How many times the ensemble was resampled during the pass.
    pub fn resample_count(&self) -> usize {
        self.resamples
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.normalized_weights)
    }

    /// Position of an object in processing order.
    pub fn index_of(&self, id: crate::model::ObjectId) -> Option<usize> {
        self.processed.iter().position(|o| o.object_id == id)
    }
}

/// `1 / Σ ω²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

fn normalize_log_weights(particles: &[Particle]) -> Vec<f64> {
    let max = particles
        .iter()
        .map(|p| p.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = particles.iter().map(|p| (p.log_weight - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Ancestor indices chosen by systematic resampling with offset `u0 ∈ [0, 1)`.
pub fn systematic_indices(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let u = (u0 + i as f64) * step;
        while j + 1 < n && cumulative[j] <= u {
            j += 1;
        }
        out.push(j);
    }
    out
}

fn resample_particles(particles: &[Particle], weights: &[f64], seed: u64, coords: &[u64]) -> Result<Vec<Particle>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate("cannot resample with zero total weight".into()));
    }
    let u0: f64 = rng::stream(seed, coords).random();
    let normalized: Vec<f64> = weights.iter().map(|w| w / total).collect();
    Ok(systematic_indices(&normalized, u0)
        .into_iter()
        .map(|i| Particle {
            log_weight: 0.0,
            ..particles[i].clone()
        })
        .collect())
}

/// Systematic resampling; every output particle carries weight `1/R`.
pub fn resample(state: &ParticleState, seed: u64) -> Result<ParticleState> {
    let particles = resample_particles(&state.particles, &state.normalized_weights, seed, &[TAG_RESAMPLE])?;
    let r = particles.len();
    Ok(ParticleState {
        particles,
        normalized_weights: vec![1.0 / r as f64; r],
        resamples: state.resamples + 1,
        ..state.clone()
    })
}

/// Runs a full sequential pass over `observations` with `answers` overlaid on
/// their answer fields. Deterministic for a fixed `config.seed`.
pub fn update_model(model: &Model, observations: &[Observation], answers: &AnswerOverlay, config: &FilterConfig) -> Result<ParticleState> {
    if observations.is_empty() {
        return Err(Error::EmptyState);
    }
    if config.particles == 0 {
        return Err(Error::Input("at least one particle is required".into()));
    }
    for id in answers.keys() {
        if !observations.iter().any(|o| o.object_id == *id) {
            return Err(Error::UnknownObject(*id));
        }
    }
    let processed: Vec<Observation> = observations
        .iter()
        .map(|o| {
            let mut o = o.clone();
            if let Some(label) = answers.get(&o.object_id) {
                o.answer = label.clone();
            }
            o
        })
        .collect();
    let evidence = processed
        .iter()
        .map(|o| model.evidence(o))
        .collect::<Result<Vec<_>>>()?;

    let r = config.particles;
    let mut particles = vec![Particle::empty(model); r];
    let mut weights = vec![1.0 / r as f64; r];
    let mut resamples = 0;
    for (n, ev) in evidence.iter().enumerate() {
        if n > 0 && effective_sample_size(&weights) < config.ess_threshold * r as f64 {
            particles = resample_particles(&particles, &weights, config.seed, &[TAG_RESAMPLE, n as u64])?;
            resamples += 1;
        }
        particles
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(idx, p)| -> Result<()> {
                let table = model.assignment_table(&p.stats, ev)?;
                let mut rng = rng::stream(config.seed, &[TAG_PROPOSAL, n as u64, idx as u64]);
                let a = table.sample(&mut rng);
                p.stats.add(ev, a)?;
                p.assignments.push(a);
                p.log_weight += table.log_normalizer();
                Ok(())
            })?;
        weights = normalize_log_weights(&particles);
    }

    Ok(ParticleState {
        model: model.clone(),
        particles,
        normalized_weights: weights,
        seed: config.seed,
        processed,
        evidence,
        resamples,
    })
}

/// Concept labels of the highest-weight particle (ties to the lowest index).
pub fn map_assignments(state: &ParticleState) -> Vec<usize> {
    let mut best = 0;
    for (i, &w) in state.normalized_weights.iter().enumerate() {
        if w > state.normalized_weights[best] {
            best = i;
        }
    }
    state.particles[best].concepts()
}
