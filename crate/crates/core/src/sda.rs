//! Selective domain adaptation: align the target's private features with
//! those of the single closest source.
//!
//! The target extractor `F_t` starts as a copy of the selected source's
//! private extractor. A fresh domain critic `D_a` learns to separate
//! `F_t(source)` from `F_t(target)`, while `F_t` and the classifier minimize
//! `J_C1 − λ2·J_Da + λθ·‖θ_s − θ_t‖²`: source classification, confusion of
//! the critic, and a pull towards the source weights `θ_s`. The shared
//! extractor, the Stage-1 discriminator and every other private extractor
//! stay frozen.

use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainDataset, Example};
use crate::divergence::{select_closest, DistanceMatrix};
use crate::error::{ensure, Error, Result};
use crate::nets::{
    clip_weights, concat_features, critic_gap, nll, param_l2_distance, param_l2_gradient, Adam, AdversarialLoss,
    Checkpoint, Dropout, Extractor, Head, HeadConfig, ParameterSet, PrivateFeatures, Real, SharedPrivateModel,
};
use crate::pretrain::{labels_of, unmask, write_file, BatchSampler, StepRecord, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdaConfig {
    /// Weight of the alignment (critic-confusion) term.
    pub lambda2: f64,
    /// Weight of the parameter constraint `‖θ_s − θ_t‖²`.
    pub lambda_theta: f64,
    /// Critic warm-up updates before adaptation starts.
    pub iter1: usize,
    /// Adaptation rounds.
    pub iter2: usize,
    /// Critic updates per adaptation round.
    pub n_critic: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub da_loss: AdversarialLoss,
    pub seed: u64,
}

impl Default for SdaConfig {
    fn default() -> Self {
        SdaConfig {
            lambda2: 0.05,
            lambda_theta: 0.1,
            iter1: 500,
            iter2: 2000,
            n_critic: 5,
            learning_rate: 1e-4,
            batch_size: 16,
            da_loss: AdversarialLoss::Wasserstein,
            seed: 0,
        }
    }
}

impl SdaConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lambda2 >= 0.0 && self.lambda_theta >= 0.0, "SDA weights must be ≥ 0");
        ensure!(self.learning_rate > 0.0, "learning_rate must be positive");
        ensure!(self.batch_size >= 1, "batch_size must be ≥ 1");
        ensure!(self.n_critic >= 1, "n_critic must be ≥ 1");
        Ok(())
    }
}

/// Everything SDA trains or reads.
#[derive(Clone, Debug, PartialEq)]
pub struct SdaState<T: Real = f32> {
    pub selected_source: String,
    /// Trainable target extractor `F_t`.
    pub target_extractor: Extractor<T>,
    /// Trainable classifier, initialized from Stage 1.
    pub classifier: Head<T>,
    /// Alignment critic `D_a`.
    pub da: Head<T>,
    pub da_loss: AdversarialLoss,
    /// Snapshot `θ_s` of the selected source's private extractor.
    pub frozen_source_ref: ParameterSet<T>,
    /// Frozen Stage-1 model (shared extractor, discriminator, source extractors).
    pub stage1: SharedPrivateModel<T>,
}

pub const SDA_CHECKPOINT_KIND: &str = "sda_state";

/// Starts SDA from `j_star`: `F_t` is an exact copy of its private extractor,
/// `D_a` is freshly initialized from `seed`.
pub fn init_sda<T: Real>(
    model: &SharedPrivateModel<T>,
    j_star: &str,
    da_loss: AdversarialLoss,
    seed: u64,
) -> Result<SdaState<T>> {
    let source = model.private(j_star)?.clone();
    let outputs = match da_loss {
        AdversarialLoss::Wasserstein => 1,
        AdversarialLoss::Nll => 2,
    };
    let da_cfg = HeadConfig {
        input_dim: model.config.private_dim(),
        hidden_dim: model.config.head_hidden,
        output_dim: outputs,
    };
    let da = Head::init(da_cfg, &mut crate::seeded(seed))?;
    Ok(SdaState {
        selected_source: j_star.to_string(),
        frozen_source_ref: source.params().clone(),
        target_extractor: source,
        classifier: model.classifier.clone(),
        da,
        da_loss,
        stage1: model.clone(),
    })
}

/// Critic objective on `F_t` features of the two sides.
///
/// Wasserstein: `mean D_a(F_t(source)) − mean D_a(F_t(target))`.
/// NLL: mean negative log-likelihood of side labels (source 0, target 1).
/// Returns the loss and its gradients with respect to the source and target
/// feature rows.
fn critic_loss<T: Real>(
    da: &Head<T>,
    kind: AdversarialLoss,
    f_src: &Array2<T>,
    f_tgt: &Array2<T>,
    grads: &mut ParameterSet<T>,
) -> Result<(T, Array2<T>, Array2<T>)> {
    let n_src = f_src.nrows();
    let feats = concatenate(Axis(0), &[f_src.view(), f_tgt.view()]).expect("equal widths");
    let (scores, cache) = da.forward(feats.view())?;
    let (loss, d_scores) = match kind {
        AdversarialLoss::Wasserstein => {
            let a = scores.slice(ndarray::s![..n_src, ..]).to_owned();
            let b = scores.slice(ndarray::s![n_src.., ..]).to_owned();
            let (l, ga, gb) = critic_gap(&a, &b)?;
            (l, concatenate(Axis(0), &[ga.view(), gb.view()]).expect("one column"))
        }
        AdversarialLoss::Nll => {
            let sides: Vec<usize> = (0..feats.nrows()).map(|r| usize::from(r >= n_src)).collect();
            nll(&scores, &sides)?
        }
    };
    let d_feats = da.backward(&cache, &d_scores, grads);
    let d_src = d_feats.slice(ndarray::s![..n_src, ..]).to_owned();
    let d_tgt = d_feats.slice(ndarray::s![n_src.., ..]).to_owned();
    Ok((loss, d_src, d_tgt))
}

/// `J_Da` and its gradient with respect to the critic; `F_t` is only read.
pub fn da_objective<T: Real>(
    state: &SdaState<T>,
    source_batch: &[&Example],
    target_batch: &[&Example],
    dropout: &mut Dropout<'_>,
) -> Result<(T, ParameterSet<T>)> {
    ensure!(!source_batch.is_empty() && !target_batch.is_empty(), "empty batch");
    let (f_src, _) = state.target_extractor.forward(source_batch)?;
    let (f_src, _) = dropout.apply(f_src);
    let (f_tgt, _) = state.target_extractor.forward(target_batch)?;
    let (f_tgt, _) = dropout.apply(f_tgt);
    let mut grads = state.da.params().zeros_like();
    let (loss, _, _) = critic_loss(&state.da, state.da_loss, &f_src, &f_tgt, &mut grads)?;
    Ok((loss, grads))
}

/// Values of the adaptation objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdaLosses<T> {
    pub j_c1: T,
    pub j_da: T,
    pub j_theta: T,
    /// `j_c1 − λ2·j_da + λθ·j_theta`.
    pub j_2: T,
}

/// Gradients of the adaptation objective for the two trainable modules.
pub struct SdaGrads<T: Real> {
    pub target_extractor: ParameterSet<T>,
    pub classifier: ParameterSet<T>,
}

/// Adaptation objective and its gradient with respect to `F_t` and `C`. The
/// critic and the shared extractor are only read.
pub fn sda_objective<T: Real>(
    state: &SdaState<T>,
    labeled_source: &[&Example],
    source_batch: &[&Example],
    target_batch: &[&Example],
    lambda2: T,
    lambda_theta: T,
    dropout: &mut Dropout<'_>,
) -> Result<(SdaLosses<T>, SdaGrads<T>)> {
    ensure!(!labeled_source.is_empty(), "empty labeled batch");
    ensure!(!source_batch.is_empty() && !target_batch.is_empty(), "empty batch");
    let labels = labels_of(labeled_source)?;
    let mut g_ft = state.target_extractor.params().zeros_like();
    let mut g_c = state.classifier.params().zeros_like();

    // Source classification through (F_s, F_t).
    let (shared, _) = state.stage1.shared.forward(labeled_source)?;
    let (shared, _) = dropout.apply(shared);
    let (private, p_cache) = state.target_extractor.forward(labeled_source)?;
    let (private, p_mask) = dropout.apply(private);
    let x = concat_features(shared.view(), private.view())?;
    let (logits, c_cache) = state.classifier.forward(x.view())?;
    let (j_c1, d_logits) = nll(&logits, &labels)?;
    let d_x = state.classifier.backward(&c_cache, &d_logits, &mut g_c);
    let mut d_p = d_x.slice(ndarray::s![.., shared.ncols()..]).to_owned();
    unmask(&mut d_p, &p_mask);
    state.target_extractor.backward(&p_cache, &d_p, &mut g_ft);

    // Alignment: F_t maximizes the critic's loss.
    let (f_src, src_cache) = state.target_extractor.forward(source_batch)?;
    let (f_src, src_mask) = dropout.apply(f_src);
    let (f_tgt, tgt_cache) = state.target_extractor.forward(target_batch)?;
    let (f_tgt, tgt_mask) = dropout.apply(f_tgt);
    let mut scratch = state.da.params().zeros_like();
    let (j_da, mut d_src, mut d_tgt) = critic_loss(&state.da, state.da_loss, &f_src, &f_tgt, &mut scratch)?;
    d_src.mapv_inplace(|v| -lambda2 * v);
    d_tgt.mapv_inplace(|v| -lambda2 * v);
    unmask(&mut d_src, &src_mask);
    unmask(&mut d_tgt, &tgt_mask);
    state.target_extractor.backward(&src_cache, &d_src, &mut g_ft);
    state.target_extractor.backward(&tgt_cache, &d_tgt, &mut g_ft);

    // Parameter constraint.
    let j_theta = param_l2_distance(&state.frozen_source_ref, state.target_extractor.params())?;
    let g_theta = param_l2_gradient(&state.frozen_source_ref, state.target_extractor.params())?;
    g_ft.add_scaled(lambda_theta, &g_theta);

    Ok((
        SdaLosses {
            j_c1,
            j_da,
            j_theta,
            j_2: j_c1 - lambda2 * j_da + lambda_theta * j_theta,
        },
        SdaGrads {
            target_extractor: g_ft,
            classifier: g_c,
        },
    ))
}

/// Optimizer state of the three trainable SDA modules.
pub struct SdaOptimizers {
    target_extractor: Adam,
    classifier: Adam,
    da: Adam,
}

impl SdaOptimizers {
    pub fn new(state: &SdaState, learning_rate: f64) -> Self {
        SdaOptimizers {
            target_extractor: Adam::new(state.target_extractor.params(), learning_rate),
            classifier: Adam::new(state.classifier.params(), learning_rate),
            da: Adam::new(state.da.params(), learning_rate),
        }
    }
}

/// One critic update; `F_t` and `C` stay untouched. In Wasserstein mode the
/// critic's weights are clipped afterwards.
pub fn da_step(
    state: &mut SdaState,
    source_batch: &[&Example],
    target_batch: &[&Example],
    opt: &mut SdaOptimizers,
    rng: &mut crate::Rng,
) -> Result<f32> {
    let dropout_rate = state.stage1.config.dropout;
    let (loss, grads) = da_objective(state, source_batch, target_batch, &mut Dropout::train(dropout_rate, rng))?;
    opt.da.step(state.da.params_mut(), &grads);
    if state.da_loss == AdversarialLoss::Wasserstein {
        let c = state.stage1.config.clip as f32;
        clip_weights(state.da.params_mut(), c);
    }
    Ok(loss)
}

/// One update of `F_t` and `C`; the critic stays untouched.
pub fn sda_main_step(
    state: &mut SdaState,
    labeled_source: &[&Example],
    source_batch: &[&Example],
    target_batch: &[&Example],
    config: &SdaConfig,
    opt: &mut SdaOptimizers,
    rng: &mut crate::Rng,
) -> Result<SdaLosses<f32>> {
    let dropout_rate = state.stage1.config.dropout;
    let (losses, grads) = sda_objective(
        state,
        labeled_source,
        source_batch,
        target_batch,
        config.lambda2 as f32,
        config.lambda_theta as f32,
        &mut Dropout::train(dropout_rate, rng),
    )?;
    if !losses.j_2.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite SDA loss (J_C1 = {}, J_Da = {}, J_θ = {})",
            losses.j_c1, losses.j_da, losses.j_theta
        )));
    }
    opt.target_extractor.step(state.target_extractor.params_mut(), &grads.target_extractor);
    opt.classifier.step(state.classifier.params_mut(), &grads.classifier);
    Ok(losses)
}

/// Full SDA: picks the source closest to `target` in `matrix`, then adapts.
pub fn run_sda(
    model: &SharedPrivateModel,
    sources: &[&DomainDataset],
    target: &DomainDataset,
    matrix: &DistanceMatrix,
    config: &SdaConfig,
    out_dir: Option<&Path>,
) -> Result<(SdaState, TrainLog)> {
    let j_star = select_closest(matrix, target.name())?;
    let source = sources
        .iter()
        .find(|d| d.name() == j_star)
        .ok_or_else(|| Error::Validation(format!("no training data for selected source '{j_star}'")))?;
    adapt_from(model, source, target, config, out_dir)
}

/// Runs `iter1` critic warm-up updates, then `iter2` rounds of `n_critic`
/// critic updates followed by one adaptation update, all against `source`.
pub fn adapt_from(
    model: &SharedPrivateModel,
    source: &DomainDataset,
    target: &DomainDataset,
    config: &SdaConfig,
    out_dir: Option<&Path>,
) -> Result<(SdaState, TrainLog)> {
    config.validate()?;
    ensure!(source.is_labeled(), "source '{}' must be labeled", source.name());
    ensure!(!target.is_labeled(), "target '{}' must be unlabeled during adaptation", target.name());
    let started = std::time::Instant::now();
    let mut state = init_sda(model, source.name(), config.da_loss, config.seed)?;
    let mut rng = crate::seeded(config.seed.wrapping_add(1));
    let mut opt = SdaOptimizers::new(&state, config.learning_rate);
    let mut src_sampler = BatchSampler::new(source.len(), &mut rng);
    let mut tgt_sampler = BatchSampler::new(target.len(), &mut rng);
    let b = config.batch_size;
    let mut log = TrainLog::default();

    for _ in 0..config.iter1 {
        let s = src_sampler.batch(source, b, &mut rng);
        let t = tgt_sampler.batch(target, b, &mut rng);
        da_step(&mut state, &s, &t, &mut opt, &mut rng)?;
    }
    for round in 0..config.iter2 {
        let mut j_da = 0.0;
        for _ in 0..config.n_critic {
            let s = src_sampler.batch(source, b, &mut rng);
            let t = tgt_sampler.batch(target, b, &mut rng);
            j_da = da_step(&mut state, &s, &t, &mut opt, &mut rng)?;
        }
        let labeled = src_sampler.batch(source, b, &mut rng);
        let s = src_sampler.batch(source, b, &mut rng);
        let t = tgt_sampler.batch(target, b, &mut rng);
        let losses = sda_main_step(&mut state, &labeled, &s, &t, config, &mut opt, &mut rng).map_err(|e| match e {
            Error::Divergence(m) => Error::Divergence(format!("round {round}: {m}")),
            other => other,
        })?;
        log.steps.push(StepRecord {
            epoch: 0,
            step: round,
            j_d: j_da as f64,
            j_c: losses.j_c1 as f64,
            j_total: losses.j_2 as f64,
        });
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        state.to_checkpoint().save(&dir.join("sda_final.ckpt"))?;
        write_file(&dir.join("sda_steps.csv"), &log.steps_csv())?;
    }
    Ok((state, log))
}

/// Predicted label and `[p_negative, p_positive]` per example, dropout off.
pub fn predict_target_sda(state: &SdaState, batch: &[Example]) -> Result<Vec<(u8, [f64; 2])>> {
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(256) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let (shared, _) = state.stage1.shared.forward(&refs)?;
        let (private, _) = state.target_extractor.forward(&refs)?;
        let lp = crate::nets::forward_classifier(&state.classifier, shared.view(), private.view())?;
        for r in lp.rows() {
            let p = [r[0].exp() as f64, r[1].exp() as f64];
            out.push((crate::pretrain::argmax2(&p), p));
        }
    }
    Ok(out)
}

/// Accuracy of [`predict_target_sda`] against held-out labels.
pub fn sda_accuracy(state: &SdaState, labeled: &DomainDataset) -> Result<f64> {
    let labels = labeled
        .labels()
        .ok_or_else(|| Error::Validation(format!("cannot evaluate on unlabeled dataset '{}'", labeled.name())))?;
    let preds = predict_target_sda(state, labeled.examples())?;
    let probs: Vec<[f64; 2]> = preds.into_iter().map(|(_, p)| p).collect();
    Ok(crate::pretrain::accuracy(&probs, &labels))
}

impl SdaState<f32> {
    /// The adapted target extractor as a private-feature source.
    pub fn private_features(&self) -> PrivateFeatures<'_> {
        PrivateFeatures::Extractor(&self.target_extractor)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "selected_source": self.selected_source,
            "da_loss": self.da_loss,
            "da_config": self.da.config(),
            "stage1": self.stage1.to_checkpoint().meta,
        });
        let mut ckpt = Checkpoint::new(SDA_CHECKPOINT_KIND, meta);
        ckpt.add_section("target_extractor", self.target_extractor.params());
        ckpt.add_section("sda_classifier", self.classifier.params());
        ckpt.add_section("da", self.da.params());
        ckpt.add_section("source_ref", &self.frozen_source_ref);
        for (name, t) in self.stage1.to_checkpoint().params.iter() {
            ckpt.params.push(format!("stage1/{name}"), t.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(SDA_CHECKPOINT_KIND)?;
        let stage1_meta: serde_json::Value = ckpt.meta_field("stage1")?;
        let mut inner = Checkpoint::new(crate::nets::MODEL_CHECKPOINT_KIND, stage1_meta);
        inner.params = ckpt.section("stage1")?;
        let stage1 = SharedPrivateModel::from_checkpoint(&inner, None)?;
        let da_config: HeadConfig = ckpt.meta_field("da_config")?;
        Ok(SdaState {
            selected_source: ckpt.meta_field("selected_source")?,
            target_extractor: Extractor::from_parts(stage1.config.private.clone(), ckpt.section("target_extractor")?)?,
            classifier: Head::from_parts(stage1.config.classifier_config(), ckpt.section("sda_classifier")?)?,
            da: Head::from_parts(da_config, ckpt.section("da")?)?,
            da_loss: ckpt.meta_field("da_loss")?,
            frozen_source_ref: ckpt.section("source_ref")?,
            stage1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Content, SparseVector};
    use crate::nets::{init_model, EncoderConfig, ModelConfig};

    fn ds(name: &str, offset: u32, labeled: bool) -> DomainDataset {
        let ex = (0..32)
            .map(|i| {
                let v = SparseVector::new(20, vec![(offset + (i % 5) as u32, 1.0), ((i % 3) as u32, 2.0)]).unwrap();
                Example::new(Content::Features(v), labeled.then_some((i % 2) as u8))
            })
            .collect();
        DomainDataset::new(name, ex, labeled).unwrap()
    }

    fn model() -> SharedPrivateModel {
        let cfg = ModelConfig::with_encoders(EncoderConfig::feedforward(20, 8), EncoderConfig::feedforward(20, 4));
        init_model(&cfg, &["a".into(), "b".into()], Some("t"), 2).unwrap()
    }

    #[test]
    fn init_copies_the_source_extractor() {
        let m = model();
        let s = init_sda(&m, "b", AdversarialLoss::Wasserstein, 1).unwrap();
        assert_eq!(param_l2_distance(&s.frozen_source_ref, s.target_extractor.params()).unwrap(), 0.0);
        assert_eq!(s.target_extractor, m.privates[1]);
        assert_eq!(s.da.config().output_dim, 1);
        let again = init_sda(&m, "b", AdversarialLoss::Wasserstein, 1).unwrap();
        assert_eq!(s.da, again.da);
        assert!(matches!(init_sda(&m, "zzz", AdversarialLoss::Nll, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn da_step_isolation_and_clipping() {
        let m = model();
        let mut s = init_sda(&m, "a", AdversarialLoss::Wasserstein, 1).unwrap();
        let before = s.clone();
        let (a, t) = (ds("a", 5, true), ds("t", 12, false));
        let ab: Vec<&Example> = a.examples().iter().collect();
        let tb: Vec<&Example> = t.examples().iter().collect();
        let mut opt = SdaOptimizers::new(&s, 1e-2);
        let mut rng = crate::seeded(0);
        for _ in 0..3 {
            da_step(&mut s, &ab, &tb, &mut opt, &mut rng).unwrap();
            assert!(s.da.params().max_abs() <= 0.01);
        }
        assert_eq!(s.target_extractor, before.target_extractor);
        assert_eq!(s.classifier, before.classifier);
        assert_ne!(s.da, before.da);
    }

    #[test]
    fn main_step_isolation() {
        let m = model();
        let mut s = init_sda(&m, "a", AdversarialLoss::Wasserstein, 1).unwrap();
        let before = s.clone();
        let (a, t) = (ds("a", 5, true), ds("t", 12, false));
        let ab: Vec<&Example> = a.examples().iter().collect();
        let tb: Vec<&Example> = t.examples().iter().collect();
        let mut opt = SdaOptimizers::new(&s, 1e-2);
        sda_main_step(&mut s, &ab, &ab, &tb, &SdaConfig::default(), &mut opt, &mut crate::seeded(0)).unwrap();
        assert_eq!(s.da, before.da);
        assert_eq!(s.stage1, before.stage1);
        assert_eq!(s.frozen_source_ref, before.frozen_source_ref);
        assert_ne!(s.target_extractor, before.target_extractor);
    }

    #[test]
    fn unlabeled_source_batch_is_rejected() {
        let s = init_sda(&model(), "a", AdversarialLoss::Wasserstein, 1).unwrap();
        let t = ds("t", 12, false);
        let tb: Vec<&Example> = t.examples().iter().collect();
        assert!(matches!(
            sda_objective(&s, &tb, &tb, &tb, 0.1f32, 0.1, &mut Dropout::off()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn no_rounds_means_no_adaptation() {
        let m = model();
        let (a, t) = (ds("a", 5, true), ds("t", 12, false));
        let cfg = SdaConfig { iter1: 3, iter2: 0, ..Default::default() };
        let (s, log) = adapt_from(&m, &a, &t, &cfg, None).unwrap();
        assert!(log.steps.is_empty());
        assert_eq!(s.target_extractor, m.privates[0]);
        let via_model = crate::pretrain::class_probabilities(&m, t.examples(), PrivateFeatures::Extractor(&m.privates[0])).unwrap();
        let via_sda = predict_target_sda(&s, t.examples()).unwrap();
        for (p, (_, q)) in via_model.iter().zip(&via_sda) {
            assert_eq!(p, q);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model();
        let (a, t) = (ds("a", 5, true), ds("t", 12, false));
        let cfg = SdaConfig { iter1: 2, iter2: 3, ..Default::default() };
        let (s, _) = adapt_from(&m, &a, &t, &cfg, None).unwrap();
        let back = SdaState::from_checkpoint(&Checkpoint::from_bytes(&s.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn predictions_normalize_and_repeat() {
        let s = init_sda(&model(), "a", AdversarialLoss::Nll, 1).unwrap();
        let t = ds("t", 12, false);
        let p1 = predict_target_sda(&s, t.examples()).unwrap();
        let p2 = predict_target_sda(&s, t.examples()).unwrap();
        assert_eq!(p1, p2);
        for (_, p) in p1 {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        }
    }
}
