//! Central finite-difference checks of every hand-derived gradient, in f64 on
//! networks small enough to perturb each parameter. Each check panics on a
//! mismatch.

use std::cell::Cell;

use msda_core::corpus::{Content, Example, SparseVector};
use msda_core::nets::{
    param_l2_distance, param_l2_gradient, AdversarialLoss, Dropout, EncoderConfig, ModelConfig, ParameterSet,
    SharedPrivateModel,
};
use msda_core::pretrain::{discriminator_objective, main_objective, DomainBatch, LabeledBatch};
use msda_core::sda::{da_objective, init_sda, sda_objective, SdaState};
use msda_core::toe::finetune_objective;
use rand::Rng as _;

const EPS: f64 = 1e-6;
pub const TOL: f64 = 1e-4;
const MAX_PARAMS: usize = 50;
const INPUT_DIM: usize = 3;

type Model = SharedPrivateModel<f64>;

thread_local! {
    static WORST: Cell<f64> = const { Cell::new(0.0) };
}

/// Largest relative error seen on this thread since the last call; resets it.
pub fn take_worst_error() -> f64 {
    WORST.with(|w| w.replace(0.0))
}

/// Every check, by name.
pub const CHECKS: &[(&str, fn())] = &[
    ("discriminator", discriminator_objective_matches_finite_differences),
    ("main", main_objective_matches_finite_differences),
    ("critic", critic_objective_matches_finite_differences),
    ("adaptation", adaptation_objective_matches_finite_differences),
    ("parameter_constraint", parameter_constraint_matches_finite_differences),
    ("finetune", finetune_objective_matches_finite_differences),
    ("convolutional", convolutional_extractors_match_finite_differences),
];

fn tiny_config(discriminator_loss: AdversarialLoss) -> ModelConfig {
    let ff = |hidden_dim, output_dim| EncoderConfig::Feedforward {
        input_dim: INPUT_DIM,
        hidden_dim,
        output_dim,
    };
    let mut cfg = ModelConfig::with_encoders(ff(2, 2), ff(1, 1));
    cfg.head_hidden = 2;
    cfg.discriminator_loss = discriminator_loss;
    cfg
}

fn tiny_model(loss: AdversarialLoss, seed: u64) -> Model {
    // With one- and two-unit layers a random draw can leave a ReLU dead for the
    // whole batch; take the first initialization from `seed` on without one.
    (seed..seed + 100)
        .map(|s| {
            let names = vec!["a".to_string(), "b".to_string()];
            let mut m = Model::init(&tiny_config(loss), &names, Some("t"), s).unwrap();
            enliven(m.shared.params_mut());
            for p in &mut m.privates {
                enliven(p.params_mut());
            }
            enliven(m.classifier.params_mut());
            enliven(m.discriminator.params_mut());
            m
        })
        .find(all_units_live)
        .expect("an initialization without dead units")
}

/// Scales the small initial weights up so losses are far from flat, and moves
/// biases off zero: a zero bias behind a dead unit puts the next ReLU exactly
/// on its kink, where a central difference reads half the one-sided slope.
fn enliven(p: &mut ParameterSet<f64>) {
    p.scale(3.0);
    for i in 0..p.len() {
        if p.names()[i].starts_with('b') {
            p.tensor_mut(i).mapv_inplace(|v| v + 0.1);
        }
    }
}

fn all_units_live(m: &Model) -> bool {
    let xs: Vec<Vec<Example>> = (0..3).map(|d| examples(4, 90 + d)).collect();
    let labeled: Vec<LabeledBatch> = (0..2).map(|j| LabeledBatch { source: j, examples: refs(&xs[j]) }).collect();
    let domains: Vec<DomainBatch> = (0..3).map(|d| DomainBatch { domain: d, examples: refs(&xs[d]) }).collect();
    let (_, g) = main_objective(m, &labeled, Some(&refs(&xs[2])), 0.5, &mut Dropout::off()).unwrap();
    let (_, gd) = discriminator_objective(m, &domains, &mut Dropout::off()).unwrap();
    let sets: Vec<&ParameterSet<f64>> = std::iter::once(&g.shared)
        .chain(&g.privates)
        .chain([&g.classifier, &gd])
        .collect();
    // Weight gradients only: a critic's output bias cancels out of its score gap.
    sets.iter().all(|p| p.iter().filter(|(n, _)| n.starts_with('w')).all(|(_, t)| t.iter().any(|v| v.abs() > 1e-8)))
}

fn examples(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = msda_core::seeded(seed);
    (0..n)
        .map(|i| {
            let entries = (0..INPUT_DIM as u32).map(|j| (j, rng.random_range(0.2f32..2.0))).collect();
            Example::new(Content::Features(SparseVector::new(INPUT_DIM, entries).unwrap()), Some((i % 2) as u8))
        })
        .collect()
}

/// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` over all checked entries.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Numeric gradient of `f` with respect to the parameter set picked by `pick`.
fn numeric<S>(state: &S, pick: impl Fn(&mut S) -> &mut ParameterSet<f64>, f: impl Fn(&S) -> f64) -> Vec<f64>
where
    S: Clone,
{
    let mut work = state.clone();
    let base = pick(&mut work).flatten();
    (0..base.len())
        .map(|i| {
            let mut at = |delta: f64| {
                let mut flat = base.clone();
                flat[i] += delta;
                pick(&mut work).unflatten(&flat).unwrap();
                f(&work)
            };
            (at(EPS) - at(-EPS)) / (2.0 * EPS)
        })
        .collect()
}

fn assert_close(what: &str, analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length mismatch");
    assert!(analytic.iter().any(|g| g.abs() > 1e-8), "{what}: gradient is identically zero");
    let err = relative_error(analytic, numeric);
    WORST.with(|w| w.set(w.get().max(err)));
    assert!(err <= TOL, "{what}: relative error {err:.3e} > {TOL:e}\n analytic {analytic:?}\n numeric  {numeric:?}");
}

fn refs(xs: &[Example]) -> Vec<&Example> {
    xs.iter().collect()
}

pub fn discriminator_objective_matches_finite_differences() {
    for loss in [AdversarialLoss::Nll, AdversarialLoss::Wasserstein] {
        let model = tiny_model(loss, 1);
        assert!(model.discriminator.params().num_params() <= MAX_PARAMS);
        let data: Vec<Vec<Example>> = (0..3).map(|d| examples(4, 10 + d)).collect();
        let batches: Vec<DomainBatch> = data
            .iter()
            .enumerate()
            .map(|(d, xs)| DomainBatch { domain: d, examples: refs(xs) })
            .collect();
        let (_, g) = discriminator_objective(&model, &batches, &mut Dropout::off()).unwrap();
        let n = numeric(&model, |m| m.discriminator.params_mut(), |m| {
            discriminator_objective(m, &batches, &mut Dropout::off()).unwrap().0
        });
        assert_close(&format!("J_D ({loss:?})"), &g.flatten(), &n);
    }
}

pub fn main_objective_matches_finite_differences() {
    for (loss, with_target, dropout_seed) in [
        (AdversarialLoss::Nll, true, None),
        (AdversarialLoss::Nll, false, None),
        (AdversarialLoss::Wasserstein, true, None),
        (AdversarialLoss::Nll, true, Some(7)),
    ] {
        let model = tiny_model(loss, 2);
        let trained = model.shared.params().num_params()
            + model.privates.iter().map(|p| p.params().num_params()).sum::<usize>()
            + model.classifier.params().num_params();
        assert!(trained <= MAX_PARAMS, "{trained} parameters");
        let (xa, xb, xt) = (examples(4, 20), examples(4, 21), examples(4, 22));
        let labeled = vec![
            LabeledBatch { source: 0, examples: refs(&xa) },
            LabeledBatch { source: 1, examples: refs(&xb) },
        ];
        let target = refs(&xt);
        let target = with_target.then_some(target.as_slice());
        // A fresh generator per evaluation replays the same dropout masks.
        let eval = |m: &Model| {
            let mut rng = msda_core::seeded(dropout_seed.unwrap_or(0));
            let mut drop = match dropout_seed {
                Some(_) => Dropout::train(0.3, &mut rng),
                None => Dropout::off(),
            };
            main_objective(m, &labeled, target, 0.7, &mut drop).unwrap()
        };
        let (_, g) = eval(&model);
        let what = format!("J_1 ({loss:?}, target {with_target}, dropout {dropout_seed:?})");
        let n = numeric(&model, |m| m.shared.params_mut(), |m| eval(m).0.j_1);
        assert_close(&format!("{what} / shared"), &g.shared.flatten(), &n);
        for j in 0..2 {
            let n = numeric(&model, |m| m.privates[j].params_mut(), |m| eval(m).0.j_1);
            assert_close(&format!("{what} / private {j}"), &g.privates[j].flatten(), &n);
        }
        let n = numeric(&model, |m| m.classifier.params_mut(), |m| eval(m).0.j_1);
        assert_close(&format!("{what} / classifier"), &g.classifier.flatten(), &n);
    }
}

fn tiny_sda(loss: AdversarialLoss) -> SdaState<f64> {
    let mut state = init_sda(&tiny_model(AdversarialLoss::Nll, 3), "b", loss, 5).unwrap();
    enliven(state.da.params_mut());
    // Move F_t away from θ_s so the constraint term has a gradient.
    let mut flat = state.target_extractor.params().flatten();
    for (i, v) in flat.iter_mut().enumerate() {
        *v += 0.05 * (i as f64 + 1.0);
    }
    state.target_extractor.params_mut().unflatten(&flat).unwrap();
    state
}

pub fn critic_objective_matches_finite_differences() {
    for loss in [AdversarialLoss::Nll, AdversarialLoss::Wasserstein] {
        let state = tiny_sda(loss);
        assert!(state.da.params().num_params() <= MAX_PARAMS);
        let (xs, xt) = (examples(5, 30), examples(3, 31));
        let eval = |s: &SdaState<f64>| da_objective(s, &refs(&xs), &refs(&xt), &mut Dropout::off()).unwrap();
        let (_, g) = eval(&state);
        let n = numeric(&state, |s| s.da.params_mut(), |s| eval(s).0);
        assert_close(&format!("J_Da ({loss:?})"), &g.flatten(), &n);
    }
}

pub fn adaptation_objective_matches_finite_differences() {
    for loss in [AdversarialLoss::Wasserstein, AdversarialLoss::Nll] {
        let state = tiny_sda(loss);
        let trained = state.target_extractor.params().num_params() + state.classifier.params().num_params();
        assert!(trained <= MAX_PARAMS, "{trained} parameters");
        let (xl, xs, xt) = (examples(4, 40), examples(4, 41), examples(4, 42));
        let eval = |s: &SdaState<f64>| {
            sda_objective(s, &refs(&xl), &refs(&xs), &refs(&xt), 0.5, 0.3, &mut Dropout::off()).unwrap()
        };
        let (losses, g) = eval(&state);
        assert!(losses.j_theta > 0.0);
        let n = numeric(&state, |s| s.target_extractor.params_mut(), |s| eval(s).0.j_2);
        assert_close(&format!("J_2 ({loss:?}) / F_t"), &g.target_extractor.flatten(), &n);
        let n = numeric(&state, |s| s.classifier.params_mut(), |s| eval(s).0.j_2);
        assert_close(&format!("J_2 ({loss:?}) / C"), &g.classifier.flatten(), &n);
    }
}

pub fn parameter_constraint_matches_finite_differences() {
    let state = tiny_sda(AdversarialLoss::Wasserstein);
    let reference = state.frozen_source_ref.clone();
    let current = state.target_extractor.params().clone();
    let g = param_l2_gradient(&reference, &current).unwrap();
    let n = numeric(&current, |p| p, |p| param_l2_distance(&reference, p).unwrap());
    assert_close("‖θs − θt‖²", &g.flatten(), &n);
}

pub fn finetune_objective_matches_finite_differences() {
    let model = tiny_model(AdversarialLoss::Nll, 4);
    let xs = examples(6, 50);
    let labels: Vec<usize> = (0..6).map(|i| (i * 7 % 3 % 2) as usize).collect();
    let sources = [1usize, 0];
    let eval = |m: &Model| finetune_objective(m, &sources, &refs(&xs), &labels, &mut Dropout::off()).unwrap();
    let (_, g_p, g_c) = eval(&model);
    for (k, &j) in sources.iter().enumerate() {
        let n = numeric(&model, |m| m.privates[j].params_mut(), |m| eval(m).0);
        assert_close(&format!("J_C2 / private {j}"), &g_p[k].flatten(), &n);
    }
    let n = numeric(&model, |m| m.classifier.params_mut(), |m| eval(m).0);
    assert_close("J_C2 / classifier", &g_c.flatten(), &n);
}

pub fn convolutional_extractors_match_finite_differences() {
    let conv = |output_dim| EncoderConfig::Convolutional {
        vocab_size: 4,
        embedding_dim: 1,
        kernel_widths: vec![1, 2],
        output_dim,
    };
    let mut cfg = ModelConfig::with_encoders(conv(2), conv(2));
    cfg.head_hidden = 2;
    let mut rng = msda_core::seeded(12);
    let docs: Vec<Example> = (0..8)
        .map(|i| {
            let len = rng.random_range(2..6);
            let toks = (0..len).map(|_| rng.random_range(1u32..4)).collect();
            Example::new(Content::Tokens(toks), Some((i % 2) as u8))
        })
        .collect();
    let labeled = vec![
        LabeledBatch { source: 0, examples: refs(&docs[..4]) },
        LabeledBatch { source: 1, examples: refs(&docs[4..]) },
    ];
    let eval = |m: &Model| main_objective(m, &labeled, None, 0.3, &mut Dropout::off()).unwrap();
    let names = vec!["a".to_string(), "b".to_string()];
    // As for the feedforward fixtures: skip draws where a channel never fires.
    let model = (11..111)
        .map(|seed| {
            let mut m = Model::init(&cfg, &names, None, seed).unwrap();
            enliven(m.shared.params_mut());
            for p in &mut m.privates {
                enliven(p.params_mut());
            }
            enliven(m.classifier.params_mut());
            m
        })
        .find(|m| {
            let (_, g) = eval(m);
            std::iter::once(&g.shared)
                .chain(&g.privates)
                .all(|p| p.tensors().iter().skip(1).all(|t| t.iter().any(|v| v.abs() > 1e-8)))
        })
        .expect("an initialization without dead channels");
    let trained = model.shared.params().num_params()
        + model.privates.iter().map(|p| p.params().num_params()).sum::<usize>()
        + model.classifier.params().num_params();
    assert!(trained <= MAX_PARAMS, "{trained} parameters");
    let (_, g) = eval(&model);
    let n = numeric(&model, |m| m.shared.params_mut(), |m| eval(m).0.j_1);
    assert_close("J_1 conv / shared", &g.shared.flatten(), &n);
    for j in 0..2 {
        let n = numeric(&model, |m| m.privates[j].params_mut(), |m| eval(m).0.j_1);
        assert_close(&format!("J_1 conv / private {j}"), &g.privates[j].flatten(), &n);
    }
}
