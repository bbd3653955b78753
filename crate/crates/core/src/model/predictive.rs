//! Collapsed posterior-predictive densities and the joint assignment table.
//!
//! Everything is evaluated in log space. Modality weights act as exponents on
//! the corresponding likelihood terms.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::stats::{PositionStats, SufficientStats};
use super::{Assignment, AttributeVector, Model, ObjectId, Observation, POSITION_DIM};
use crate::error::{Error, Result};

const CHOLESKY_JITTER: f64 = 1e-9;

/// An observation pre-encoded against a [`Model`]: answer resolved to a
/// vocabulary index, attribute counts reduced to their non-zero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub object_id: ObjectId,
    pub position: Vector2<f64>,
    pub(crate) nonzero: Vec<(usize, u32)>,
    pub(crate) attribute_total: u64,
    attribute_dim: usize,
    log_multinomial_coef: f64,
    pub answer: Option<usize>,
    pub fixed_component: Option<usize>,
}

impl Evidence {
    pub fn attribute_dim(&self) -> usize {
        self.attribute_dim
    }

    /// Same evidence with the answer replaced (`None` = unknown).
    pub fn with_answer(&self, answer: Option<usize>) -> Self {
        Self {
            answer,
            ..self.clone()
        }
    }
}

/// `ln Γ(a + n) - ln Γ(a)`.
fn log_rising(a: f64, n: u64) -> f64 {
    match n {
        0 => 0.0,
        1 => a.ln(),
        2..=16 => (0..n).map(|m| (a + m as f64).ln()).sum(),
        _ => ln_gamma(a + n as f64) - ln_gamma(a),
    }
}

fn log_multinomial_coef(attrs: &AttributeVector) -> f64 {
    // ln(M! / Π o_j!)
    let mut acc = log_rising(1.0, attrs.total());
    for &c in attrs.values() {
        if c > 1 {
            acc -= log_rising(1.0, u64::from(c));
        }
    }
    acc
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalized probability table over `(C, i)` pairs, row-major in `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTable {
    num_concepts: usize,
    num_components: usize,
    log_weights: Vec<f64>,
    log_normalizer: f64,
}

impl AssignmentTable {
    fn from_log_weights(num_concepts: usize, num_components: usize, log_weights: Vec<f64>) -> Result<Self> {
        let log_normalizer = log_sum_exp(&log_weights);
        if !log_normalizer.is_finite() {
            return Err(Error::Underflow(
                "assignment table has no finite mass".into(),
            ));
        }
        Ok(Self {
            num_concepts,
            num_components,
            log_weights,
            log_normalizer,
        })
    }

    /// Log of the unnormalized total mass; the particle weight increment.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Unnormalized log mass of `(concept, component)`.
    pub fn log_weight(&self, concept: usize, component: usize) -> f64 {
        self.log_weights[concept * self.num_components + component]
    }

    pub fn probability(&self, concept: usize, component: usize) -> f64 {
        (self.log_weight(concept, component) - self.log_normalizer).exp()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .map(|w| (w - self.log_normalizer).exp())
            .collect()
    }

    /// `p(C = l)` summed over components.
    pub fn concept_marginals(&self) -> Vec<f64> {
        let probs = self.probabilities();
        probs
            .chunks(self.num_components)
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_concepts, self.num_components)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (idx, w) in self.log_weights.iter().enumerate() {
            let p = (w - self.log_normalizer).exp();
            if p <= 0.0 {
                continue;
            }
            last = idx;
            acc += p;
            if u < acc {
                break;
            }
        }
        Assignment {
            concept: last / self.num_components,
            component: last % self.num_components,
        }
    }
}

impl Model {
    /// Encodes an observation for this model, resolving its answer against the
    /// vocabulary.
    pub fn evidence(&self, obs: &Observation) -> Result<Evidence> {
        if obs.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "object {} has a non-finite position",
                obs.object_id
            )));
        }
        if obs.attributes.dim() != self.attribute_dim() {
            return Err(Error::Input(format!(
                "object {} has attribute dimension {}, model expects {}",
                obs.object_id,
                obs.attributes.dim(),
                self.attribute_dim()
            )));
        }
        if let Some(k) = obs.fixed_position_component {
            if k >= self.num_components() {
                return Err(Error::Input(format!(
                    "object {} is clamped to component {k} but K = {}",
                    obs.object_id,
                    self.num_components()
                )));
            }
        }
        let answer = self.vocabulary().index(&obs.answer)?;
        let nonzero = obs
            .attributes
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
            .collect();
        Ok(Evidence {
            object_id: obs.object_id,
            position: Vector2::new(obs.position[0], obs.position[1]),
            nonzero,
            attribute_total: obs.attributes.total(),
            attribute_dim: obs.attributes.dim(),
            log_multinomial_coef: log_multinomial_coef(&obs.attributes),
            answer,
            fixed_component: obs.fixed_position_component,
        })
    }

    /// Student-t posterior predictive of component `k` evaluated at `x`.
    pub fn position_predictive_logdensity(&self, stats: &SufficientStats, k: usize, x: [f64; POSITION_DIM]) -> Result<f64> {
        if k >= self.num_components() {
            return Err(Error::Input(format!("component {k} out of range")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("position must be finite".into()));
        }
        self.position_logpdf(stats.position_stats(k), &Vector2::new(x[0], x[1]))
    }

    /// Posterior location, degrees of freedom and scale matrix of the
    /// Student-t predictive for one component.
    pub fn position_predictive_params(&self, ps: &PositionStats) -> (Vector2<f64>, f64, Matrix2<f64>) {
        let h = self.hyperparameters();
        let n = f64::from(ps.count);
        let kappa_n = h.kappa0 + n;
        let nu_n = h.nu0 + n;
        let m0 = self.prior_mean();
        let mean = (m0 * h.kappa0 + ps.sum) / kappa_n;
        let mut v_n = self.prior_scale() + ps.outer + m0 * m0.transpose() * h.kappa0 - mean * mean.transpose() * kappa_n;
        // keep exact symmetry
        let off = 0.5 * (v_n[(0, 1)] + v_n[(1, 0)]);
        v_n[(0, 1)] = off;
        v_n[(1, 0)] = off;
        let dof = nu_n - POSITION_DIM as f64 + 1.0;
        let scale = v_n * ((kappa_n + 1.0) / (kappa_n * dof));
        (mean, dof, scale)
    }

    fn position_logpdf(&self, ps: &PositionStats, x: &Vector2<f64>) -> Result<f64> {
        let (mean, dof, scale) = self.position_predictive_params(ps);
        let chol = match scale.cholesky() {
            Some(c) => c,
            None => (scale + Matrix2::identity() * CHOLESKY_JITTER)
                .cholesky()
                .ok_or_else(|| {
                    Error::Degenerate(format!(
                        "position scale matrix is not positive definite ({} points)",
                        ps.count
                    ))
                })?,
        };
        let lower = chol.l();
        let log_det = 2.0 * (lower[(0, 0)].ln() + lower[(1, 1)].ln());
        let delta = x - mean;
        let z = chol.l().solve_lower_triangular(&delta).ok_or_else(|| {
            Error::Degenerate("singular Cholesky factor".into())
        })?;
        let maha = z.norm_squared();
        let d = POSITION_DIM as f64;
        Ok(ln_gamma((dof + d) / 2.0)
            - ln_gamma(dof / 2.0)
            - (d / 2.0) * (dof * std::f64::consts::PI).ln()
            - 0.5 * log_det
            - ((dof + d) / 2.0) * (maha / dof).ln_1p())
    }

    /// Dirichlet-multinomial log-probability of the counts `o` under concept
    /// `l`, multinomial coefficient included.
    pub fn attribute_predictive_loglik(&self, stats: &SufficientStats, l: usize, o: &AttributeVector) -> Result<f64> {
        if l >= self.num_concepts() {
            return Err(Error::Input(format!("concept {l} out of range")));
        }
        if o.dim() != self.attribute_dim() {
            return Err(Error::Input(format!(
                "attribute dimension {} does not match {}",
                o.dim(),
                self.attribute_dim()
            )));
        }
        let nonzero: Vec<(usize, u32)> = o
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
            .collect();
        Ok(log_multinomial_coef(o) + self.attribute_kernel(stats, l, &nonzero, o.total()))
    }

    /// Dirichlet-multinomial log-probability without the multinomial
    /// coefficient (constant across concepts).
    fn attribute_kernel(&self, stats: &SufficientStats, l: usize, nonzero: &[(usize, u32)], total: u64) -> f64 {
        if total == 0 {
            return 0.0;
        }
        let alpha = self.hyperparameters().alpha;
        let counts = stats.attribute_counts(l);
        let concentration = stats.attribute_totals[l] as f64 + self.attribute_dim() as f64 * alpha;
        let mut acc = -log_rising(concentration, total);
        for &(j, c) in nonzero {
            acc += log_rising(f64::from(counts[j]) + alpha, u64::from(c));
        }
        acc
    }

    /// Predictive answer distribution of concept `l`.
    pub fn answer_predictive(&self, stats: &SufficientStats, l: usize) -> Vec<f64> {
        let beta = self.hyperparameters().beta;
        let counts = stats.answer_counts(l);
        let denom = f64::from(stats.answer_totals[l]) + counts.len() as f64 * beta;
        counts.iter().map(|&c| (f64::from(c) + beta) / denom).collect()
    }

    fn log_answer_predictive(&self, stats: &SufficientStats, l: usize, v: usize) -> f64 {
        let beta = self.hyperparameters().beta;
        let c = stats.answer_counts(l)[v];
        let denom = f64::from(stats.answer_totals[l]) + stats.vocab_len() as f64 * beta;
        (f64::from(c) + beta).ln() - denom.ln()
    }

    /// Posterior over `(C, i)` for a new observation given the statistics.
    pub fn assignment_posterior(&self, stats: &SufficientStats, obs: &Observation) -> Result<AssignmentTable> {
        let ev = self.evidence(obs)?;
        self.assignment_table(stats, &ev)
    }

    /// Same as [`assignment_posterior`](Self::assignment_posterior) on
    /// pre-encoded evidence. The table's log-normalizer is the particle weight
    /// increment `Σ_{C,i} p(x,o,w | past) p(C,i | past)`.
    pub fn assignment_table(&self, stats: &SufficientStats, ev: &Evidence) -> Result<AssignmentTable> {
        let h = self.hyperparameters();
        let (nl, nk) = (self.num_concepts(), self.num_components());
        if ev.attribute_dim != self.attribute_dim() {
            return Err(Error::Input("evidence encoded for a different model".into()));
        }

        let mut position_terms = vec![f64::NEG_INFINITY; nk];
        for (k, term) in position_terms.iter_mut().enumerate() {
            if ev.fixed_component.is_some_and(|fixed| fixed != k) {
                continue;
            }
            *term = if h.w_position > 0.0 {
                h.w_position * self.position_logpdf(stats.position_stats(k), &ev.position)?
            } else {
                0.0
            };
        }

        let total = f64::from(stats.observations);
        let log_concept_denom = (total + nl as f64 * h.gamma).ln();
        let component_prior = h.lambda / nk as f64;
        let mut log_weights = Vec::with_capacity(nl * nk);
        for l in 0..nl {
            let n_l = f64::from(stats.concept_counts[l]);
            let mut concept_term = (n_l + h.gamma).ln() - log_concept_denom;
            if h.w_attribute > 0.0 {
                concept_term += h.w_attribute
                    * (ev.log_multinomial_coef + self.attribute_kernel(stats, l, &ev.nonzero, ev.attribute_total));
            }
            if let Some(v) = ev.answer {
                if h.w_answer > 0.0 {
                    concept_term += h.w_answer * self.log_answer_predictive(stats, l, v);
                }
            }
            let log_component_denom = (n_l + h.lambda).ln();
            for (k, &pos) in position_terms.iter().enumerate() {
                if pos == f64::NEG_INFINITY {
                    log_weights.push(f64::NEG_INFINITY);
                    continue;
                }
                let n_lk = f64::from(stats.concept_component_count(l, k));
                let component_term = (n_lk + component_prior).ln() - log_component_denom;
                log_weights.push(concept_term + component_term + pos);
            }
        }
        AssignmentTable::from_log_weights(nl, nk, log_weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnswerLabel, AnswerVocabulary, Hyperparameters};
    use approx::assert_relative_eq;

    fn model(l: usize, k: usize, dim: usize, users: &[&str]) -> Model {
        let h = Hyperparameters {
            num_concepts: l,
            num_components: k,
            ..Hyperparameters::default()
        };
        let vocab = AnswerVocabulary::new(users.iter().map(|s| s.to_string()).collect()).unwrap();
        Model::new(h, vocab, dim).unwrap()
    }

    fn obs(id: u32, pos: [f64; 2], attrs: AttributeVector, answer: AnswerLabel) -> Observation {
        Observation {
            object_id: ObjectId(id),
            position: pos,
            attributes: attrs,
            answer,
            fixed_position_component: None,
        }
    }

    #[test]
    fn prior_position_predictive_is_symmetric_about_m0() {
        let m = model(2, 2, 3, &["anna"]);
        let stats = m.empty_stats();
        for delta in [[0.3, -0.1], [1.0, 2.0], [-0.05, 0.7]] {
            let a = m.position_predictive_logdensity(&stats, 0, delta).unwrap();
            let b = m.position_predictive_logdensity(&stats, 0, [-delta[0], -delta[1]]).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn one_observation_moves_location_halfway() {
        let m = model(1, 1, 3, &["anna"]);
        let mut stats = m.empty_stats();
        let ev = m
            .evidence(&obs(0, [2.0, 0.0], AttributeVector::one_hot(3, 0), AnswerLabel::Unknown))
            .unwrap();
        stats.add(&ev, Assignment { concept: 0, component: 0 }).unwrap();
        let (mean, dof, _) = m.position_predictive_params(stats.position_stats(0));
        assert_relative_eq!(mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(mean[1], 0.0, epsilon = 1e-15);
        assert_eq!(dof, 5.0);
    }

    #[test]
    fn non_finite_position_is_rejected() {
        let m = model(1, 1, 3, &["anna"]);
        let err = m
            .position_predictive_logdensity(&m.empty_stats(), 0, [f64::NAN, 0.0])
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn single_draw_attribute_predictive() {
        let m = model(2, 1, 21, &["anna"]);
        let mut stats = m.empty_stats();
        let o = AttributeVector::one_hot(21, 4);
        assert_relative_eq!(
            m.attribute_predictive_loglik(&stats, 0, &o).unwrap().exp(),
            1.0 / 21.0,
            epsilon = 1e-14
        );
        for _ in 0..3 {
            let ev = m.evidence(&obs(0, [0.0, 0.0], o.clone(), AnswerLabel::Unknown)).unwrap();
            stats.add(&ev, Assignment { concept: 1, component: 0 }).unwrap();
        }
        assert_relative_eq!(
            m.attribute_predictive_loglik(&stats, 1, &o).unwrap().exp(),
            1.0 / 6.0,
            epsilon = 1e-14
        );
        let empty = AttributeVector::new(vec![0; 21]);
        assert_eq!(m.attribute_predictive_loglik(&stats, 1, &empty).unwrap(), 0.0);
    }

    #[test]
    fn negative_attribute_counts_are_rejected() {
        assert!(matches!(
            AttributeVector::from_counts(&[1, -1, 0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn answer_predictive_examples() {
        let m = model(1, 1, 3, &["anna", "ben", "carl"]);
        let mut stats = m.empty_stats();
        assert_eq!(m.answer_predictive(&stats, 0), vec![0.25; 4]);
        for _ in 0..3 {
            let ev = m
                .evidence(&obs(0, [0.0, 0.0], AttributeVector::one_hot(3, 0), AnswerLabel::Owner("anna".into())))
                .unwrap();
            stats.add(&ev, Assignment { concept: 0, component: 0 }).unwrap();
        }
        let p = m.answer_predictive(&stats, 0);
        assert_relative_eq!(p[0], 3.01 / 3.04, epsilon = 1e-15);
        assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_model_table_is_uniform() {
        let m = model(3, 4, 5, &["anna"]);
        let t = m
            .assignment_posterior(&m.empty_stats(), &obs(0, [0.4, 0.2], AttributeVector::one_hot(5, 1), AnswerLabel::Unknown))
            .unwrap();
        for p in t.probabilities() {
            assert_relative_eq!(p, 1.0 / 12.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn clamped_component_gets_all_mass() {
        let m = model(3, 4, 5, &["anna"]);
        let mut o = obs(0, [0.4, 0.2], AttributeVector::one_hot(5, 1), AnswerLabel::Unknown);
        o.fixed_position_component = Some(2);
        let t = m.assignment_posterior(&m.empty_stats(), &o).unwrap();
        for l in 0..3 {
            for k in 0..4 {
                if k != 2 {
                    assert_eq!(t.probability(l, k), 0.0);
                }
            }
        }
        assert_relative_eq!(t.concept_marginals().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unknown_user_is_a_vocabulary_error() {
        let m = model(1, 1, 3, &["anna"]);
        let err = m
            .evidence(&obs(0, [0.0, 0.0], AttributeVector::one_hot(3, 0), AnswerLabel::Owner("zed".into())))
            .unwrap_err();
        assert!(matches!(err, Error::Vocabulary(name) if name == "zed"));
    }
}
