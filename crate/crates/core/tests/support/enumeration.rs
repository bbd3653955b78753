//! Brute-force posterior over every assignment vector, built from the
//! closed-form conjugate marginals of whole groups rather than sequential
//! predictives.

#![allow(dead_code)]

use std::collections::BTreeMap;

use actowl_core::{AnswerLabel, AnswerOverlay, AnswerVocabulary, AttributeVector, Hyperparameters, Model, ObjectId, Observation, ParticleState};
use nalgebra::{Matrix2, Vector2};
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone)]
pub struct OracleObject {
    pub position: [f64; 2],
    pub attributes: Vec<u32>,
    /// Fixed position component, or free when `None`.
    pub component: Option<usize>,
    /// Vocabulary index of the answer.
    pub answer: Option<usize>,
}

/// Log-probability of a token sequence with these counts under a symmetric
/// Dirichlet-multinomial.
fn dirichlet_multinomial(counts: &[f64], concentration: f64) -> f64 {
    let n: f64 = counts.iter().sum();
    let d = counts.len() as f64;
    let mut acc = ln_gamma(d * concentration) - ln_gamma(n + d * concentration);
    for &c in counts {
        acc += ln_gamma(c + concentration) - ln_gamma(concentration);
    }
    acc
}

fn ln_multigamma2(a: f64) -> f64 {
    0.5 * std::f64::consts::PI.ln() + ln_gamma(a) + ln_gamma(a - 0.5)
}

/// Marginal likelihood of points under a Normal–inverse-Wishart prior.
fn niw_marginal(points: &[[f64; 2]], h: &Hyperparameters) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let m0 = Vector2::new(h.m0[0], h.m0[1]);
    let v0 = Matrix2::new(h.v0[0][0], h.v0[0][1], h.v0[1][0], h.v0[1][1]);
    let xs: Vec<Vector2<f64>> = points.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    let mean = xs.iter().sum::<Vector2<f64>>() / n;
    let scatter = xs.iter().map(|x| (x - mean) * (x - mean).transpose()).sum::<Matrix2<f64>>();
    let kn = h.kappa0 + n;
    let nun = h.nu0 + n;
    let d = mean - m0;
    let vn = v0 + scatter + d * d.transpose() * (h.kappa0 * n / kn);
    -n * std::f64::consts::PI.ln() + ln_multigamma2(nun / 2.0) - ln_multigamma2(h.nu0 / 2.0) + h.nu0 / 2.0 * v0.determinant().ln()
        - nun / 2.0 * vn.determinant().ln()
        + (h.kappa0 / kn).ln()
}

/// Relabels concepts in order of first appearance.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn log_joint(h: &Hyperparameters, vocab_len: usize, objects: &[OracleObject], concepts: &[usize], components: &[usize]) -> f64 {
    let (nl, nk) = (h.num_concepts, h.num_components);
    let dim = objects[0].attributes.len();
    let mut concept_counts = vec![0.0; nl];
    for &c in concepts {
        concept_counts[c] += 1.0;
    }
    let mut acc = dirichlet_multinomial(&concept_counts, h.gamma);
    for l in 0..nl {
        let members: Vec<usize> = (0..objects.len()).filter(|&n| concepts[n] == l).collect();
        if members.is_empty() {
            continue;
        }
        let mut comp = vec![0.0; nk];
        let mut attrs = vec![0.0; dim];
        let mut answers = vec![0.0; vocab_len];
        for &n in &members {
            comp[components[n]] += 1.0;
            for (a, &v) in attrs.iter_mut().zip(&objects[n].attributes) {
                *a += f64::from(v);
            }
            if let Some(v) = objects[n].answer {
                answers[v] += 1.0;
            }
        }
        acc += dirichlet_multinomial(&comp, h.lambda / nk as f64);
        acc += h.w_attribute * dirichlet_multinomial(&attrs, h.alpha);
        acc += h.w_answer * dirichlet_multinomial(&answers, h.beta);
    }
    for k in 0..nk {
        let pts: Vec<[f64; 2]> = (0..objects.len()).filter(|&n| components[n] == k).map(|n| objects[n].position).collect();
        acc += h.w_position * niw_marginal(&pts, h);
    }
    acc
}

fn odometer(digits: &mut [usize], limits: &[Vec<usize>], pos: &mut [usize]) -> bool {
    for i in 0..digits.len() {
        pos[i] += 1;
        if pos[i] < limits[i].len() {
            digits[i] = limits[i][pos[i]];
            return true;
        }
        pos[i] = 0;
        digits[i] = limits[i][0];
    }
    false
}

/// Exact posterior over concept partitions (canonical labelings).
pub fn partition_posterior(h: &Hyperparameters, vocab_len: usize, objects: &[OracleObject]) -> BTreeMap<Vec<usize>, f64> {
    let n = objects.len();
    let concept_choices: Vec<Vec<usize>> = vec![(0..h.num_concepts).collect(); n];
    let component_choices: Vec<Vec<usize>> = objects
        .iter()
        .map(|o| match o.component {
            Some(k) => vec![k],
            None => (0..h.num_components).collect(),
        })
        .collect();
    let mut terms: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut c: Vec<usize> = concept_choices.iter().map(|v| v[0]).collect();
    let mut cp = vec![0; n];
    loop {
        let mut i: Vec<usize> = component_choices.iter().map(|v| v[0]).collect();
        let mut ip = vec![0; n];
        loop {
            terms.push((canonical(&c), log_joint(h, vocab_len, objects, &c, &i)));
            if !odometer(&mut i, &component_choices, &mut ip) {
                break;
            }
        }
        if !odometer(&mut c, &concept_choices, &mut cp) {
            break;
        }
    }
    let max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let mut out: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (p, lj) in &terms {
        *out.entry(p.clone()).or_default() += (lj - max).exp();
    }
    let total: f64 = out.values().sum();
    out.values_mut().for_each(|v| *v /= total);
    out
}

/// Weighted particle estimate of the same distribution.
pub fn filter_partition_posterior(state: &ParticleState) -> BTreeMap<Vec<usize>, f64> {
    let mut out: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (p, &w) in state.particles().iter().zip(state.normalized_weights()) {
        *out.entry(canonical(&p.concepts())).or_default() += w;
    }
    out
}

pub fn total_variation(a: &BTreeMap<Vec<usize>, f64>, b: &BTreeMap<Vec<usize>, f64>) -> f64 {
    let mut keys: Vec<&Vec<usize>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Four objects, two users, `L = K = 2`: two answered objects and two
/// ambiguous ones.
pub struct Instance {
    pub model: Model,
    pub observations: Vec<Observation>,
    pub answers: AnswerOverlay,
    pub oracle: Vec<OracleObject>,
}

type Row = ([f64; 2], [u32; 6], usize, Option<&'static str>);

pub fn four_object_instance(clamped: bool) -> Instance {
    let h = Hyperparameters {
        num_concepts: 2,
        num_components: 2,
        ..Hyperparameters::default()
    };
    let vocab = AnswerVocabulary::new(vec!["anna".into(), "ben".into()]).unwrap();
    let rows: [Row; 4] = [
        ([0.0, 0.1], [1, 0, 1, 0, 0, 0], 0, Some("anna")),
        ([0.2, -0.1], [1, 0, 0, 1, 0, 0], 0, None),
        ([1.0, 1.1], [0, 1, 1, 0, 1, 0], 1, None),
        ([1.2, 0.9], [0, 1, 0, 0, 0, 1], 1, Some("ben")),
    ];
    let mut observations = Vec::new();
    let mut answers = AnswerOverlay::new();
    let mut oracle = Vec::new();
    for (n, (pos, attrs, comp, owner)) in rows.iter().enumerate() {
        let id = ObjectId(n as u32);
        observations.push(Observation {
            object_id: id,
            position: *pos,
            attributes: AttributeVector::new(attrs.to_vec()),
            answer: AnswerLabel::Unknown,
            fixed_position_component: clamped.then_some(*comp),
        });
        let answer = owner.map(|o| {
            let label = AnswerLabel::Owner(o.to_string());
            answers.insert(id, label.clone());
            vocab.index(&label).unwrap().unwrap()
        });
        oracle.push(OracleObject {
            position: *pos,
            attributes: attrs.to_vec(),
            component: clamped.then_some(*comp),
            answer,
        });
    }
    let model = Model::new(h, vocab, 6).unwrap();
    Instance {
        model,
        observations,
        answers,
        oracle,
    }
}

/// The clamped instance's partition posterior, computed separately with
/// SciPy's `gammaln` and NumPy determinants.
pub const FOUR_OBJECT_CLAMPED: [([usize; 4], f64); 8] = [
    ([0, 0, 0, 0], 0.0017850222817885563),
    ([0, 0, 0, 1], 0.11065485348679971),
    ([0, 0, 1, 0], 0.00241721767325533),
    ([0, 0, 1, 1], 0.7824878925137984),
    ([0, 1, 0, 0], 0.0032229568976737933),
    ([0, 1, 0, 1], 0.04347154958410019),
    ([0, 1, 1, 0], 0.0006330808191859246),
    ([0, 1, 1, 1], 0.05532742674339995),
];

/// Same, with position components left free.
pub const FOUR_OBJECT_FREE: [([usize; 4], f64); 8] = [
    ([0, 0, 0, 0], 0.0024774639960022564),
    ([0, 0, 0, 1], 0.12432907991355974),
    ([0, 0, 1, 0], 0.0027161646993516452),
    ([0, 0, 1, 1], 0.7060098806838486),
    ([0, 1, 0, 0], 0.005046385646433535),
    ([0, 1, 0, 1], 0.07143866433580069),
    ([0, 1, 1, 0], 0.0010399375549081395),
    ([0, 1, 1, 1], 0.08694242317009483),
];
