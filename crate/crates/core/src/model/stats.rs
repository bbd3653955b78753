//! Sufficient statistics of the collapsed model.

use nalgebra::{Matrix2, Vector2};

use super::predictive::Evidence;
use super::Assignment;
use crate::error::{Error, Result};

/// Per-component position statistics: count, coordinate sum and the sum of
/// outer products (raw second moment).
#[derive(Debug, Clone, PartialEq)]
pub struct PositionStats {
    pub count: u32,
    pub sum: Vector2<f64>,
    pub outer: Matrix2<f64>,
}

impl Default for PositionStats {
    fn default() -> Self {
        Self {
            count: 0,
            sum: Vector2::zeros(),
            outer: Matrix2::zeros(),
        }
    }
}

impl PositionStats {
    /// Centered scatter `Σ (x - x̄)(x - x̄)ᵀ`.
    pub fn scatter(&self) -> Matrix2<f64> {
        if self.count == 0 {
            return Matrix2::zeros();
        }
        let n = f64::from(self.count);
        self.outer - self.sum * self.sum.transpose() / n
    }

    pub fn mean(&self) -> Option<Vector2<f64>> {
        (self.count > 0).then(|| self.sum / f64::from(self.count))
    }
}

/// Counts feeding every collapsed predictive. Matrices are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    num_concepts: usize,
    num_components: usize,
    attribute_dim: usize,
    vocab_len: usize,
    pub(crate) observations: u32,
    pub(crate) concept_counts: Vec<u32>,
    pub(crate) concept_component_counts: Vec<u32>,
    pub(crate) attribute_counts: Vec<u32>,
    pub(crate) attribute_totals: Vec<u64>,
    pub(crate) answer_counts: Vec<u32>,
    pub(crate) answer_totals: Vec<u32>,
    pub(crate) position: Vec<PositionStats>,
}

impl SufficientStats {
    pub fn new(num_concepts: usize, num_components: usize, attribute_dim: usize, vocab_len: usize) -> Self {
        Self {
            num_concepts,
            num_components,
            attribute_dim,
            vocab_len,
            observations: 0,
            concept_counts: vec![0; num_concepts],
            concept_component_counts: vec![0; num_concepts * num_components],
            attribute_counts: vec![0; num_concepts * attribute_dim],
            attribute_totals: vec![0; num_concepts],
            answer_counts: vec![0; num_concepts * vocab_len],
            answer_totals: vec![0; num_concepts],
            position: vec![PositionStats::default(); num_components],
        }
    }

    pub fn num_concepts(&self) -> usize {
        self.num_concepts
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn attribute_dim(&self) -> usize {
        self.attribute_dim
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    /// Number of observations folded in.
    pub fn observations(&self) -> u32 {
        self.observations
    }

    pub fn concept_counts(&self) -> &[u32] {
        &self.concept_counts
    }

    pub fn concept_component_count(&self, concept: usize, component: usize) -> u32 {
        self.concept_component_counts[concept * self.num_components + component]
    }

    pub fn attribute_counts(&self, concept: usize) -> &[u32] {
        let d = self.attribute_dim;
        &self.attribute_counts[concept * d..(concept + 1) * d]
    }

    pub fn answer_counts(&self, concept: usize) -> &[u32] {
        let v = self.vocab_len;
        &self.answer_counts[concept * v..(concept + 1) * v]
    }

    pub fn position_stats(&self, component: usize) -> &PositionStats {
        &self.position[component]
    }

    fn check(&self, ev: &Evidence, a: Assignment) -> Result<()> {
        if a.concept >= self.num_concepts || a.component >= self.num_components {
            return Err(Error::Input(format!(
                "assignment ({}, {}) outside {}x{}",
                a.concept, a.component, self.num_concepts, self.num_components
            )));
        }
        if ev.attribute_dim() != self.attribute_dim {
            return Err(Error::Input(format!(
                "attribute dimension {} does not match model dimension {}",
                ev.attribute_dim(),
                self.attribute_dim
            )));
        }
        if let Some(v) = ev.answer {
            if v >= self.vocab_len {
                return Err(Error::Input(format!("answer index {v} outside vocabulary")));
            }
        }
        Ok(())
    }

    /// Folds one observation with its assignment into the statistics.
    pub fn add(&mut self, ev: &Evidence, a: Assignment) -> Result<()> {
        self.check(ev, a)?;
        let (l, k) = (a.concept, a.component);
        self.observations += 1;
        self.concept_counts[l] += 1;
        self.concept_component_counts[l * self.num_components + k] += 1;
        let row = l * self.attribute_dim;
        for &(j, c) in &ev.nonzero {
            self.attribute_counts[row + j] += c;
        }
        self.attribute_totals[l] += ev.attribute_total;
        if let Some(v) = ev.answer {
            self.answer_counts[l * self.vocab_len + v] += 1;
            self.answer_totals[l] += 1;
        }
        let p = &mut self.position[k];
        p.count += 1;
        p.sum += ev.position;
        p.outer += ev.position * ev.position.transpose();
        Ok(())
    }

    /// Exact inverse of [`add`](Self::add) for counts. Fails without touching
    /// anything when the observation was never added under this assignment.
    pub fn remove(&mut self, ev: &Evidence, a: Assignment) -> Result<()> {
        self.check(ev, a)?;
        let (l, k) = (a.concept, a.component);
        let underflow = || Error::Input(format!("removing an observation never added to ({l}, {k})"));
        let row = l * self.attribute_dim;
        let lk = l * self.num_components + k;
        if self.concept_counts[l] == 0
            || self.concept_component_counts[lk] == 0
            || self.position[k].count == 0
            || ev.nonzero.iter().any(|&(j, c)| self.attribute_counts[row + j] < c)
            || ev
                .answer
                .is_some_and(|v| self.answer_counts[l * self.vocab_len + v] == 0)
        {
            return Err(underflow());
        }
        self.observations -= 1;
        self.concept_counts[l] -= 1;
        self.concept_component_counts[lk] -= 1;
        for &(j, c) in &ev.nonzero {
            self.attribute_counts[row + j] -= c;
        }
        self.attribute_totals[l] -= ev.attribute_total;
        if let Some(v) = ev.answer {
            self.answer_counts[l * self.vocab_len + v] -= 1;
            self.answer_totals[l] -= 1;
        }
        let p = &mut self.position[k];
        p.count -= 1;
        if p.count == 0 {
            // drop accumulated rounding once the component is empty
            *p = PositionStats::default();
        } else {
            p.sum -= ev.position;
            p.outer -= ev.position * ev.position.transpose();
        }
        Ok(())
    }
}
