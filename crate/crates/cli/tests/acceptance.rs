//! End-to-end acceptance checks, one PASS/FAIL line each. Everything runs on
//! the mock dialogue backend. Exits non-zero when any check fails.

#[path = "../../core/tests/support/enumeration.rs"]
mod enumeration;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use actowl_core::dialogue::{render_classify_prompt, render_interpret_prompt, EnvironmentContext};
use actowl_core::harness::{adjusted_rand_index, scripted_answer, Persona};
use actowl_core::rbpf::Particle;
use actowl_core::selector::information_gain_from_predictives;
use actowl_core::{
    information_gain, update_model, AnswerLabel, AnswerVocabulary, Assignment, AttributeVector, Dialogue, FilterConfig, Hyperparameters, IgMode, Model,
    ObjectId, Observation, ParticleState, QuestionRecord, Scenario, SufficientStats,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    trial: usize,
    step: i64,
    strategy: String,
    ig_value: Option<f64>,
    ari: f64,
    n_questions: usize,
}

struct Runs {
    rows: Vec<Row>,
}

impl Runs {
    fn load(csv_path: &Path) -> Result<Runs, String> {
        let mut reader = csv::Reader::from_path(csv_path).map_err(|e| e.to_string())?;
        let rows = reader.deserialize().collect::<Result<Vec<Row>, _>>().map_err(|e| e.to_string())?;
        Ok(Runs { rows })
    }

    fn of<'a>(&'a self, strategy: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.strategy == strategy)
    }

    fn mean_ari_at(&self, strategy: &str, step: i64) -> f64 {
        mean(self.of(strategy).filter(|r| r.step == step).map(|r| r.ari))
    }

    /// Last row of every trial.
    fn finals<'a>(&'a self, strategy: &'a str) -> Vec<&'a Row> {
        let mut last: BTreeMap<usize, &Row> = BTreeMap::new();
        for r in self.of(strategy) {
            let e = last.entry(r.trial).or_insert(r);
            if r.step >= e.step {
                *e = r;
            }
        }
        last.into_values().collect()
    }

    fn mean_final_ari(&self, strategy: &str) -> f64 {
        mean(self.finals(strategy).into_iter().map(|r| r.ari))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn cli_run(out: &Path, extra: &[&str]) -> Result<Runs, String> {
    let mut args = vec!["actowl", "run", "--trials", "20", "--seed", "0", "--particles", "100", "--pseudo-samples", "10", "--out-dir"];
    let dir = out.to_str().unwrap();
    args.push(dir);
    args.extend_from_slice(extra);
    let code = actowl_cli::main_with(args);
    ensure(code == ExitCode::SUCCESS, format!("actowl run exited with {code:?}"))?;
    Runs::load(&out.join("metrics.csv"))
}

fn oracle_equivalence() -> Check {
    let inst = enumeration::four_object_instance(true);
    let exact = enumeration::partition_posterior(inst.model.hyperparameters(), 3, &inst.oracle);
    let mut detail = Vec::new();
    for (particles, bound) in [(2000, 0.10), (8000, 0.05)] {
        let state = update_model(&inst.model, &inst.observations, &inst.answers, &FilterConfig { particles, seed: 5, ess_threshold: 0.5 })
            .map_err(|e| e.to_string())?;
        let tv = enumeration::total_variation(&enumeration::filter_partition_posterior(&state), &exact);
        ensure(tv <= bound, format!("R={particles}: TV {tv:.4} > {bound}"))?;
        detail.push(format!("R={particles} TV {tv:.4}"));
    }
    Ok(detail.join(", "))
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Objects a (answered anna), b (answered ben) and c (unanswered). With
/// `split` the first particle puts a and b in different concepts and the
/// second puts them together; otherwise the particles are identical. Attribute
/// and position weights are zero so only the concept prior and the answer
/// counts shape c's predictive.
fn two_particle_state(split: bool) -> Result<(ParticleState, Observation), String> {
    let h = Hyperparameters {
        num_concepts: 2,
        num_components: 1,
        w_answer: 5.0,
        w_attribute: 0.0,
        w_position: 0.0,
        ..Hyperparameters::default()
    };
    let vocab = AnswerVocabulary::new(vec!["anna".into(), "ben".into()]).map_err(|e| e.to_string())?;
    let m = Model::new(h, vocab, 3).map_err(|e| e.to_string())?;
    let obs: Vec<Observation> = [(AnswerLabel::Owner("anna".into()), 0.0), (AnswerLabel::Owner("ben".into()), 1.0), (AnswerLabel::Unknown, 0.5)]
        .into_iter()
        .enumerate()
        .map(|(n, (answer, x))| Observation {
            object_id: ObjectId(n as u32),
            position: [x, 0.0],
            attributes: AttributeVector::one_hot(3, n),
            answer,
            fixed_position_component: Some(0),
        })
        .collect();
    let ev = obs.iter().map(|o| m.evidence(o)).collect::<Result<Vec<_>, _>>().map_err(|e| e.to_string())?;
    let particle = |concepts: [usize; 3]| {
        let a = concepts.iter().map(|&l| Assignment { concept: l, component: 0 }).collect();
        Particle::from_assignments(&m, &ev, a).map_err(|e| e.to_string())
    };
    let second = if split { [0, 0, 0] } else { [0, 1, 0] };
    let particles = vec![particle([0, 1, 0])?, particle(second)?];
    let target = obs[2].clone();
    let state = ParticleState::from_parts(m, obs, particles, &[0.5, 0.5]).map_err(|e| e.to_string())?;
    Ok((state, target))
}

fn mix(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

fn ig_exactness() -> Check {
    let ln2 = information_gain_from_predictives(ObjectId(0), &[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]], IgMode::Exact, 0).map_err(|e| e.to_string())?;
    ensure((ln2 - std::f64::consts::LN_2).abs() <= 1e-9, format!("one-hot split gives {ln2}, expected ln 2"))?;

    // By hand, labels ordered (anna, ben, shared), γ = 5, β = 0.01. With c
    // held out, particle 1 has one object per concept, so c lands in either
    // with probability 1/2; particle 2 has both in concept 0, so c lands
    // there with (2+γ)/(2+2γ) and in the empty concept (uniform answers)
    // otherwise.
    let (beta, gamma) = (0.01, 5.0);
    let anna = [(1.0 + beta) / (1.0 + 3.0 * beta), beta / (1.0 + 3.0 * beta), beta / (1.0 + 3.0 * beta)];
    let ben = [anna[1], anna[0], anna[2]];
    let both = [(1.0 + beta) / (2.0 + 3.0 * beta), (1.0 + beta) / (2.0 + 3.0 * beta), beta / (2.0 + 3.0 * beta)];
    let uniform = [1.0 / 3.0; 3];
    let p1 = mix(&anna, 0.5, &ben, 0.5);
    let together = (2.0 + gamma) / (2.0 + 2.0 * gamma);
    let p2 = mix(&both, together, &uniform, 1.0 - together);
    let hand = entropy(&mix(&p1, 0.5, &p2, 0.5)) - 0.5 * entropy(&p1) - 0.5 * entropy(&p2);
    let (state, target) = two_particle_state(true)?;
    let got = information_gain(&state, &target, IgMode::Exact, 0).map_err(|e| e.to_string())?.value;
    ensure(hand > 0.0 && (got - hand).abs() <= 1e-9, format!("two-particle state: {got} vs hand {hand}"))?;

    let (same, target) = two_particle_state(false)?;
    for mode in [IgMode::Exact, IgMode::Sampled { pseudo_samples: 10 }] {
        let ig = information_gain(&same, &target, mode, 7).map_err(|e| e.to_string())?.value;
        ensure(ig == 0.0, format!("identical particles give {ig} under {mode:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let r = rng.random_range(2..8);
        let v = rng.random_range(2..6);
        let norm = |xs: Vec<f64>| {
            let s: f64 = xs.iter().sum();
            xs.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let weights = norm((0..r).map(|_| rng.random_range(0.01..1.0)).collect());
        let rows: Vec<Vec<f64>> = (0..r).map(|_| norm((0..v).map(|_| rng.random_range(0.001..1.0)).collect())).collect();
        let exact = information_gain_from_predictives(ObjectId(1), &weights, &rows, IgMode::Exact, 0).map_err(|e| e.to_string())?;
        let sampled = mean((0..50).map(|s| information_gain_from_predictives(ObjectId(1), &weights, &rows, IgMode::Sampled { pseudo_samples: 200 }, s).unwrap()));
        worst = worst.max((sampled - exact).abs());
    }
    ensure(worst <= 0.05, format!("sampled mean off by {worst:.4} nats"))?;
    Ok(format!("ln2 ok, hand MI {hand:.6} ok, identical 0, sampled max dev {worst:.4}"))
}

fn exp1_ordering(runs: &Runs) -> Check {
    let (max5, rnd5, min5) = (runs.mean_ari_at("ig-max", 5), runs.mean_ari_at("random", 5), runs.mean_ari_at("ig-min", 5));
    let (max_f, rnd_f) = (runs.mean_final_ari("ig-max"), runs.mean_final_ari("random"));
    ensure(max5 >= rnd5, format!("step 5: ig-max {max5:.3} < random {rnd5:.3}"))?;
    ensure(max_f >= rnd_f, format!("final: ig-max {max_f:.3} < random {rnd_f:.3}"))?;
    ensure(max5 >= min5, format!("step 5: ig-max {max5:.3} < ig-min {min5:.3}"))?;
    let last = runs.finals("ig-max").iter().map(|r| r.step).max().unwrap_or(i64::MAX);
    ensure(last <= 9, format!("ig-max still asking at step {last}"))?;
    Ok(format!(
        "step 5 ig-max {max5:.3} / random {rnd5:.3} / ig-min {min5:.3}; final ig-max {max_f:.3} / random {rnd_f:.3}; done by step {last}"
    ))
}

fn exp1_convergence(runs: &Runs) -> Check {
    let f = runs.mean_final_ari("ig-max");
    ensure(f >= 0.9, format!("final ig-max ARI {f:.3} < 0.9"))?;
    Ok(format!("final ig-max ARI {f:.3}"))
}

fn exp1_question_counts(runs: &Runs) -> Check {
    let s = Scenario::builtin("exp1").ok_or("exp1 missing")?;
    let classes = s.mock_dialogue(&[]).classify_shared_owned(&s.class_list(), s.context).map_err(|e| e.to_string())?;
    let owned = s.objects.iter().filter(|o| !classes.is_shared(&o.class)).count();
    let ig: Vec<usize> = runs.finals("ig-max").iter().map(|r| r.n_questions).collect();
    let no: Vec<usize> = runs.finals("no-llm").iter().map(|r| r.n_questions).collect();
    ensure(ig.len() == 20 && no.len() == 20, "expected 20 trials per strategy")?;
    ensure(ig.iter().all(|&n| n == owned), format!("ig-max asked {ig:?}, owned {owned}"))?;
    ensure(no.iter().all(|&n| n <= s.objects.len() && n > owned), format!("no-llm asked {no:?}"))?;
    Ok(format!("ig-max asks {owned} (= owned) in every trial, no-llm asks {} of {}", no[0], s.objects.len()))
}

fn exp1_ig_decay(runs: &Runs) -> Check {
    let first = mean(runs.of("ig-max").filter(|r| r.step == 1).filter_map(|r| r.ig_value));
    let last = mean(runs.finals("ig-max").into_iter().filter_map(|r| r.ig_value));
    ensure(first > last, format!("mean IG step 1 {first:.4} <= final {last:.4}"))?;
    Ok(format!("mean IG step 1 {first:.4} > final questioning step {last:.4}"))
}

fn exp2_fault(dir: &Path) -> Check {
    let runs = cli_run(dir, &["--scenario", "exp2", "--strategy", "ig-max,no-llm", "--mock-extra-shared", "Box"])?;
    let (ig, no) = (runs.mean_final_ari("ig-max"), runs.mean_final_ari("no-llm"));
    ensure(ig < no, format!("ig-max {ig:.3} >= no-llm {no:.3}"))?;
    Ok(format!("Box misclassified as shared: final ig-max {ig:.3} < no-llm {no:.3}"))
}

fn determinism(first: &Path, second: &Path) -> Check {
    cli_run(second, EXP1)?;
    let a = std::fs::read(first.join("metrics.csv")).map_err(|e| e.to_string())?;
    let b = std::fs::read(second.join("metrics.csv")).map_err(|e| e.to_string())?;
    ensure(a == b, "metrics.csv differs between identical runs")?;
    Ok(format!("{} bytes identical", a.len()))
}

fn pairwise_ari(p: &[usize], t: &[usize]) -> f64 {
    let mut c = [0.0f64; 4];
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            c[usize::from(p[i] == p[j]) * 2 + usize::from(t[i] == t[j])] += 1.0;
        }
    }
    let [neither, only_t, only_p, both] = c;
    let denom = (both + only_p) * (only_p + neither) + (both + only_t) * (only_t + neither);
    if denom == 0.0 {
        return if only_p + only_t == 0.0 { 1.0 } else { 0.0 };
    }
    2.0 * (both * neither - only_p * only_t) / denom
}

/// Quick seeded sweep over the invariants that also have full property
/// suites in the core crate.
fn invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let users = vec!["anna".to_string(), "ben".into(), "carl".into()];

    let neg = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).map_err(|e| e.to_string())?;
    ensure((neg + 0.5).abs() < 1e-12, format!("ARI of the crossed 2x2 case is {neg}"))?;
    for _ in 0..300 {
        let n = rng.random_range(2..12);
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let fast = adjusted_rand_index(&p, &t).map_err(|e| e.to_string())?;
        ensure((fast - pairwise_ari(&p, &t)).abs() <= 1e-12, format!("ARI mismatch on {p:?} {t:?}"))?;
    }

    let h = Hyperparameters {
        num_concepts: 3,
        num_components: 2,
        ..Hyperparameters::default()
    };
    let m = Model::new(h, AnswerVocabulary::new(users.clone()).map_err(|e| e.to_string())?, 4).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let mut stats: SufficientStats = m.empty_stats();
        let mut added = Vec::new();
        for k in 0..rng.random_range(0..8) {
            let label = match rng.random_range(0..5) {
                0 => AnswerLabel::Unknown,
                1 => AnswerLabel::Shared,
                u => AnswerLabel::Owner(users[u - 2].clone()),
            };
            let o = Observation {
                object_id: ObjectId(k),
                position: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                attributes: AttributeVector::new((0..4).map(|_| rng.random_range(0..3)).collect()),
                answer: label,
                fixed_position_component: None,
            };
            let a = Assignment { concept: rng.random_range(0..3), component: rng.random_range(0..2) };
            let ev = m.evidence(&o).map_err(|e| e.to_string())?;
            stats.add(&ev, a).map_err(|e| e.to_string())?;
            added.push((ev, a));
        }
        let probe = Observation {
            object_id: ObjectId(99),
            position: [0.3, -0.2],
            attributes: AttributeVector::new(vec![1, 0, 2, 0]),
            answer: AnswerLabel::Unknown,
            fixed_position_component: None,
        };
        let total: f64 = m.assignment_posterior(&stats, &probe).map_err(|e| e.to_string())?.probabilities().iter().sum();
        ensure((total - 1.0).abs() <= 1e-9, format!("assignment table sums to {total}"))?;
        for l in 0..3 {
            let s: f64 = m.answer_predictive(&stats, l).iter().sum();
            ensure((s - 1.0).abs() <= 1e-9, format!("answer predictive sums to {s}"))?;
        }
        for (ev, a) in added.iter().rev() {
            stats.remove(ev, *a).map_err(|e| e.to_string())?;
        }
        ensure(stats.observations() == 0 && stats.concept_counts().iter().all(|&c| c == 0), "add/remove left residue")?;
    }

    for name in Scenario::builtin_names() {
        let s = Scenario::builtin(name).ok_or("missing scenario")?;
        let mock = s.mock_dialogue(&[]);
        for (o, truth) in s.objects.iter().zip(s.truth()) {
            for persona in [Persona::Direct, Persona::Possessive, Persona::Referential] {
                let (text, who) = scripted_answer(&s, o.id, persona, 1).map_err(|e| e.to_string())?;
                let q = QuestionRecord { target_object_id: o.id, question_text: String::new(), context_objects: vec![] };
                let got = mock.interpret_answer(&q, &text, &who, &s.users).map_err(|e| e.to_string())?;
                ensure(got == truth, format!("{name}: {text:?} by {who} read as {got}"))?;
            }
        }
    }

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let golden = |f: &str| std::fs::read_to_string(fixtures.join(f)).map_err(|e| format!("{f}: {e}"));
    let exp1 = Scenario::builtin("exp1").ok_or("exp1 missing")?;
    ensure(render_classify_prompt(&exp1.class_list(), EnvironmentContext::Household) == golden("classify_household.txt")?, "classification prompt drifted")?;
    let interpret = render_interpret_prompt("Whose red Cup is this, the one near the Book?", "It's mine", &users, "anna");
    ensure(interpret == golden("interpret.txt")?, "interpretation prompt drifted")?;

    Ok("ARI vs pair counting (incl. -0.5), predictive normalization, add/remove symmetry, scripted round-trip, prompt goldens".into())
}

const EXP1: &[&str] = &["--scenario", "exp1", "--strategy", "ig-max,ig-min,random,no-llm"];

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let mut result = f();
        let took = start.elapsed();
        if let (Ok(_), Some(limit)) = (&result, limit) {
            if took > limit {
                result = Err(format!("took {took:.1?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("PASS  {name} [{:.1}s]: {detail}", took.as_secs_f64()),
            Err(why) => {
                self.failed += 1;
                println!("FAIL  {name} [{:.1}s]: {why}", took.as_secs_f64());
            }
        }
    }
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut report = Report { failed: 0 };

    report.check("oracle equivalence", Some(Duration::from_secs(30)), oracle_equivalence);
    report.check("IG exactness", Some(Duration::from_secs(10)), ig_exactness);

    let first = tmp.path().join("exp1-a");
    let mut runs: Option<Runs> = None;
    report.check("Exp.1 ordering", Some(Duration::from_secs(300)), || {
        let r = cli_run(&first, EXP1)?;
        let out = exp1_ordering(&r);
        runs = Some(r);
        out
    });
    let runs = runs.ok_or(());
    let runs = &runs;
    let with_runs = |f: fn(&Runs) -> Check| move || runs.as_ref().map_err(|_| "Exp.1 run failed".to_string()).and_then(f);
    report.check("Exp.1 final convergence", None, with_runs(exp1_convergence));
    report.check("Exp.1 question counts", None, with_runs(exp1_question_counts));
    report.check("Exp.1 IG decay", None, with_runs(exp1_ig_decay));
    report.check("Exp.2 fault injection", None, || exp2_fault(&tmp.path().join("exp2")));
    report.check("determinism", None, || determinism(&first, &tmp.path().join("exp1-b")));
    report.check("invariant suites", None, invariants);

    println!("{} failed", report.failed);
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
