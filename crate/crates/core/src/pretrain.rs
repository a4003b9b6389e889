//! Stage 1: adversarial shared-private multi-task training over the labeled
//! source domains.
//!
//! Each iteration performs `n_critic` discriminator updates with every
//! extractor and the classifier frozen, then one update of the shared
//! extractor, the private extractors and the classifier against
//! `J_C − λ1·J_D` with the discriminator frozen. The minus sign drives the
//! shared features towards domain invariance.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{DomainDataset, Example};
use crate::error::{ensure, Error, Result};
use crate::nets::{
    concat_features, domain_critic, nll, Adam, AdversarialLoss, Dropout, ModelGrads, ParameterSet, PrivateFeatures,
    Real, SharedPrivateModel,
};
use crate::Rng;

/// Hyperparameters of Stage 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    /// Weight of the adversarial domain loss.
    pub lambda1: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Discriminator updates per main update.
    pub n_critic: usize,
    pub epochs: usize,
    /// Stop after this many epochs without dev-accuracy improvement.
    pub patience: usize,
    /// Let unlabeled target data enter the discriminator as an extra domain.
    pub include_target_in_d: bool,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            lambda1: 0.05,
            learning_rate: 1e-4,
            batch_size: 16,
            n_critic: 5,
            epochs: 20,
            patience: 5,
            include_target_in_d: true,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lambda1 >= 0.0 && self.lambda1.is_finite(), "lambda1 must be ≥ 0");
        ensure!(self.learning_rate > 0.0, "learning_rate must be positive");
        ensure!(self.batch_size >= 1, "batch_size must be ≥ 1");
        ensure!(self.n_critic >= 1, "n_critic must be ≥ 1");
        ensure!(self.patience >= 1, "patience must be ≥ 1");
        Ok(())
    }
}

/// Losses of one main update (or one adaptation/finetuning update in later stages).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    /// Discriminator loss of the last discriminator update before this step.
    pub j_d: f64,
    /// Classification loss.
    pub j_c: f64,
    /// Total objective minimized by the step.
    pub j_total: f64,
}

/// Per-epoch accuracy of one domain on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub domain: String,
    pub split: String,
    pub accuracy: f64,
    /// Epoch means of the step losses.
    pub j_c: f64,
    pub j_d: f64,
}

/// Training history shared by all stages.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    /// `epoch,domain,split,accuracy,J_C,J_D` rows.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch,domain,split,accuracy,J_C,J_D\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                r.epoch, r.domain, r.split, r.accuracy, r.j_c, r.j_d
            ));
        }
        out
    }

    /// `epoch,step,J_D,J_C,J_total` rows.
    pub fn steps_csv(&self) -> String {
        let mut out = String::from("epoch,step,J_D,J_C,J_total\n");
        for r in &self.steps {
            out.push_str(&format!("{},{},{:.6},{:.6},{:.6}\n", r.epoch, r.step, r.j_d, r.j_c, r.j_total));
        }
        out
    }

    /// Mean classification loss per epoch, in epoch order.
    pub fn epoch_mean_j_c(&self) -> Vec<f64> {
        let Some(last) = self.steps.iter().map(|r| r.epoch).max() else {
            return Vec::new();
        };
        (0..=last)
            .filter_map(|e| {
                let v: Vec<f64> = self.steps.iter().filter(|r| r.epoch == e).map(|r| r.j_c).collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect()
    }
}

/// Examples of one discriminator domain.
#[derive(Clone, Debug)]
pub struct DomainBatch<'a> {
    /// Index into the model's discriminator domains.
    pub domain: usize,
    pub examples: Vec<&'a Example>,
}

/// Labeled examples of one source domain.
#[derive(Clone, Debug)]
pub struct LabeledBatch<'a> {
    /// Index into the model's source domains.
    pub source: usize,
    pub examples: Vec<&'a Example>,
}

/// Values of the main objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MainLosses<T> {
    pub j_c: T,
    pub j_d: T,
    /// `j_c − λ1·j_d`.
    pub j_1: T,
}

pub(crate) fn labels_of(examples: &[&Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| {
            e.label
                .map(usize::from)
                .ok_or_else(|| Error::Validation("training batch contains an unlabeled example".into()))
        })
        .collect()
}

/// Applies an inverted-dropout mask to an upstream gradient.
pub(crate) fn unmask<T: Real>(grad: &mut Array2<T>, mask: &Option<Array2<T>>) {
    if let Some(m) = mask {
        *grad *= m;
    }
}

pub(crate) fn adversarial_loss<T: Real>(
    kind: AdversarialLoss,
    scores: &Array2<T>,
    domains: &[usize],
) -> Result<(T, Array2<T>)> {
    match kind {
        AdversarialLoss::Nll => nll(scores, domains),
        AdversarialLoss::Wasserstein => domain_critic(scores, domains),
    }
}

fn stack_domains<'a>(batches: &[DomainBatch<'a>], arity: usize) -> Result<(Vec<&'a Example>, Vec<usize>)> {
    ensure!(!batches.is_empty(), "no domain batches");
    let mut xs = Vec::new();
    let mut ds = Vec::new();
    for b in batches {
        ensure!(!b.examples.is_empty(), "empty batch for domain {}", b.domain);
        ensure!(b.domain < arity, "domain index {} out of range ({arity} domains)", b.domain);
        xs.extend(b.examples.iter().copied());
        ds.extend(std::iter::repeat_n(b.domain, b.examples.len()));
    }
    Ok((xs, ds))
}

/// Domain loss `J_D` (per-example mean) and its gradient with respect to the
/// discriminator parameters. Extractors are only read.
pub fn discriminator_objective<T: Real>(
    model: &SharedPrivateModel<T>,
    batches: &[DomainBatch<'_>],
    dropout: &mut Dropout<'_>,
) -> Result<(T, ParameterSet<T>)> {
    let (xs, domains) = stack_domains(batches, model.discriminator_domains.len())?;
    let (feats, _) = model.shared.forward(&xs)?;
    let (feats, _) = dropout.apply(feats);
    let (scores, cache) = model.discriminator.forward(feats.view())?;
    let (loss, d_scores) = adversarial_loss(model.config.discriminator_loss, &scores, &domains)?;
    let mut grads = model.discriminator.params().zeros_like();
    model.discriminator.backward(&cache, &d_scores, &mut grads);
    Ok((loss, grads))
}

/// Main objective `J_C − λ1·J_D` and its gradient with respect to the shared
/// extractor, the private extractors and the classifier. The discriminator
/// gradient in the result is identically zero.
///
/// `J_C` is the mean sentiment NLL over all labeled rows; `J_D` is evaluated on
/// the source rows plus the optional target rows (discriminator domain
/// `num_sources`).
pub fn main_objective<T: Real>(
    model: &SharedPrivateModel<T>,
    labeled: &[LabeledBatch<'_>],
    target: Option<&[&Example]>,
    lambda1: T,
    dropout: &mut Dropout<'_>,
) -> Result<(MainLosses<T>, ModelGrads<T>)> {
    ensure!(!labeled.is_empty(), "no labeled batches");
    let k = model.num_sources();
    let mut rows: Vec<&Example> = Vec::new();
    let mut domains = Vec::new();
    for b in labeled {
        ensure!(b.source < k, "source index {} out of range", b.source);
        ensure!(!b.examples.is_empty(), "empty batch for source {}", b.source);
        rows.extend(b.examples.iter().copied());
        domains.extend(std::iter::repeat_n(b.source, b.examples.len()));
    }
    let labels = labels_of(&rows)?;
    let n_src = rows.len();
    if let Some(t) = target {
        ensure!(model.includes_target(), "model discriminator has no target domain");
        ensure!(!t.is_empty(), "empty target batch");
        rows.extend(t.iter().copied());
        domains.extend(std::iter::repeat_n(k, t.len()));
    }

    let mut grads = model.zero_grads();
    let (shared, shared_cache) = model.shared.forward(&rows)?;
    let (shared, shared_mask) = dropout.apply(shared);
    let s_dim = shared.ncols();

    // Classifier over (shared, private) for labeled rows.
    let mut private_blocks = Vec::with_capacity(labeled.len());
    for b in labeled {
        let (p, cache) = model.privates[b.source].forward(&b.examples)?;
        let (p, mask) = dropout.apply(p);
        private_blocks.push((p, cache, mask));
    }
    let views: Vec<_> = private_blocks.iter().map(|(p, _, _)| p.view()).collect();
    let private = ndarray::concatenate(Axis(0), &views).expect("equal widths");
    let x = concat_features(shared.slice(s![..n_src, ..]), private.view())?;
    let (logits, c_cache) = model.classifier.forward(x.view())?;
    let (j_c, d_logits) = nll(&logits, &labels)?;
    let d_x = model.classifier.backward(&c_cache, &d_logits, &mut grads.classifier);

    let mut d_shared = Array2::zeros(shared.raw_dim());
    d_shared.slice_mut(s![..n_src, ..]).assign(&d_x.slice(s![.., ..s_dim]));
    let mut offset = 0;
    for (b, (p, cache, mask)) in labeled.iter().zip(&private_blocks) {
        let n = p.nrows();
        let mut d_p = d_x.slice(s![offset..offset + n, s_dim..]).to_owned();
        unmask(&mut d_p, mask);
        model.privates[b.source].backward(cache, &d_p, &mut grads.privates[b.source]);
        offset += n;
    }

    // Adversarial term through the frozen discriminator.
    let (scores, d_cache) = model.discriminator.forward(shared.view())?;
    let (j_d, d_scores) = adversarial_loss(model.config.discriminator_loss, &scores, &domains)?;
    let mut scratch = model.discriminator.params().zeros_like();
    let d_feat = model.discriminator.backward(&d_cache, &d_scores, &mut scratch);
    d_shared.scaled_add(-lambda1, &d_feat);
    unmask(&mut d_shared, &shared_mask);
    model.shared.backward(&shared_cache, &d_shared, &mut grads.shared);

    Ok((
        MainLosses {
            j_c,
            j_d,
            j_1: j_c - lambda1 * j_d,
        },
        grads,
    ))
}

/// Optimizer state for every Stage-1 parameter group.
pub struct Stage1Optimizers {
    shared: Adam,
    privates: Vec<Adam>,
    classifier: Adam,
    discriminator: Adam,
}

impl Stage1Optimizers {
    pub fn new(model: &SharedPrivateModel, learning_rate: f64) -> Self {
        Stage1Optimizers {
            shared: Adam::new(model.shared.params(), learning_rate),
            privates: model.privates.iter().map(|p| Adam::new(p.params(), learning_rate)).collect(),
            classifier: Adam::new(model.classifier.params(), learning_rate),
            discriminator: Adam::new(model.discriminator.params(), learning_rate),
        }
    }
}

/// One discriminator update; extractors and classifier stay untouched.
pub fn discriminator_step(
    model: &mut SharedPrivateModel,
    batches: &[DomainBatch<'_>],
    opt: &mut Stage1Optimizers,
    rng: &mut Rng,
) -> Result<f32> {
    let (loss, grads) = discriminator_objective(model, batches, &mut Dropout::train(model.config.dropout, rng))?;
    opt.discriminator.step(model.discriminator.params_mut(), &grads);
    if model.config.discriminator_loss == AdversarialLoss::Wasserstein {
        let c = model.config.clip as f32;
        crate::nets::clip_weights(model.discriminator.params_mut(), c);
    }
    Ok(loss)
}

/// One update of the shared extractor, the private extractors of the given
/// sources and the classifier; the discriminator stays untouched.
pub fn main_step(
    model: &mut SharedPrivateModel,
    labeled: &[LabeledBatch<'_>],
    target: Option<&[&Example]>,
    config: &Stage1Config,
    opt: &mut Stage1Optimizers,
    rng: &mut Rng,
) -> Result<MainLosses<f32>> {
    let (losses, grads) = main_objective(
        model,
        labeled,
        target,
        config.lambda1 as f32,
        &mut Dropout::train(model.config.dropout, rng),
    )?;
    if !losses.j_c.is_finite() || !losses.j_1.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss (J_C = {}, J_D = {})",
            losses.j_c, losses.j_d
        )));
    }
    opt.shared.step(model.shared.params_mut(), &grads.shared);
    for b in labeled {
        opt.privates[b.source].step(model.privates[b.source].params_mut(), &grads.privates[b.source]);
    }
    opt.classifier.step(model.classifier.params_mut(), &grads.classifier);
    Ok(losses)
}

/// Endless reshuffled pass over `0..len`.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub(crate) fn new(len: usize, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        BatchSampler { order, pos: 0 }
    }

    pub(crate) fn next(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub(crate) fn batch<'a>(&mut self, data: &'a DomainDataset, size: usize, rng: &mut Rng) -> Vec<&'a Example> {
        self.next(size, rng).into_iter().map(|i| &data.examples()[i]).collect()
    }
}

/// Train and optional dev split of one source domain.
#[derive(Clone, Copy, Debug)]
pub struct SourceSplit<'a> {
    pub train: &'a DomainDataset,
    pub dev: Option<&'a DomainDataset>,
}

/// Runs Stage 1. Sources must be given in the model's source order. When the
/// model's discriminator includes a target domain, `target` must supply its
/// unlabeled data, which only ever enters discriminator terms.
///
/// With `out_dir`, a checkpoint is written after every epoch (`epoch_NNN.ckpt`)
/// and the best-dev model is kept in `best.ckpt`; the best-dev model is
/// returned whenever dev data is available.
pub fn pretrain(
    mut model: SharedPrivateModel,
    sources: &[SourceSplit<'_>],
    target: Option<&DomainDataset>,
    config: &Stage1Config,
    out_dir: Option<&Path>,
) -> Result<(SharedPrivateModel, TrainLog)> {
    config.validate()?;
    ensure!(sources.len() >= 2, "Stage 1 needs at least two source domains");
    ensure!(
        sources.len() == model.num_sources(),
        "{} source datasets for a model with {} sources",
        sources.len(),
        model.num_sources()
    );
    for (s, name) in sources.iter().zip(&model.source_names) {
        ensure!(s.train.name() == name, "source '{}' given where '{name}' expected", s.train.name());
        ensure!(s.train.is_labeled(), "source '{name}' training data is unlabeled");
        if let Some(dev) = s.dev {
            ensure!(dev.is_labeled(), "source '{name}' dev data is unlabeled");
        }
    }
    ensure!(
        config.include_target_in_d == model.includes_target(),
        "include_target_in_d = {} but the model discriminator has {} domains for {} sources",
        config.include_target_in_d,
        model.discriminator_domains.len(),
        model.num_sources()
    );
    if model.includes_target() {
        let t = target.ok_or_else(|| Error::Validation("target data required by the discriminator".into()))?;
        ensure!(!t.is_labeled(), "target data passed to Stage 1 must be unlabeled");
    }
    let target = target.filter(|_| model.includes_target());

    let started = Instant::now();
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((model, log));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut rng = crate::seeded(config.seed);
    let mut opt = Stage1Optimizers::new(&model, config.learning_rate);
    let mut samplers: Vec<BatchSampler> = sources.iter().map(|s| BatchSampler::new(s.train.len(), &mut rng)).collect();
    let mut target_sampler = target.map(|t| BatchSampler::new(t.len(), &mut rng));
    let largest = sources.iter().map(|s| s.train.len()).max().unwrap_or(0);
    let steps_per_epoch = largest.div_ceil(config.batch_size).max(1);
    let has_dev = sources.iter().all(|s| s.dev.is_some());

    let mut best: Option<(f64, SharedPrivateModel)> = None;
    let mut since_best = 0;
    let mut step = 0;
    for epoch in 0..config.epochs {
        let first_step = log.steps.len();
        for _ in 0..steps_per_epoch {
            let mut j_d = 0.0f32;
            for _ in 0..config.n_critic {
                let mut batches: Vec<DomainBatch> = sources
                    .iter()
                    .zip(samplers.iter_mut())
                    .enumerate()
                    .map(|(j, (s, sampler))| DomainBatch {
                        domain: j,
                        examples: sampler.batch(s.train, config.batch_size, &mut rng),
                    })
                    .collect();
                if let (Some(t), Some(ts)) = (target, target_sampler.as_mut()) {
                    batches.push(DomainBatch {
                        domain: sources.len(),
                        examples: ts.batch(t, config.batch_size, &mut rng),
                    });
                }
                j_d = discriminator_step(&mut model, &batches, &mut opt, &mut rng)?;
            }
            let labeled: Vec<LabeledBatch> = sources
                .iter()
                .zip(samplers.iter_mut())
                .enumerate()
                .map(|(j, (s, sampler))| LabeledBatch {
                    source: j,
                    examples: sampler.batch(s.train, config.batch_size, &mut rng),
                })
                .collect();
            let target_batch = match (target, target_sampler.as_mut()) {
                (Some(t), Some(ts)) => Some(ts.batch(t, config.batch_size, &mut rng)),
                _ => None,
            };
            let losses = main_step(&mut model, &labeled, target_batch.as_deref(), config, &mut opt, &mut rng)
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, step {step}: {m}")),
                    other => other,
                })?;
            log.steps.push(StepRecord {
                epoch,
                step,
                j_d: j_d as f64,
                j_c: losses.j_c as f64,
                j_total: losses.j_1 as f64,
            });
            step += 1;
        }

        let epoch_steps = &log.steps[first_step..];
        let mean = |f: fn(&StepRecord) -> f64| epoch_steps.iter().map(f).sum::<f64>() / epoch_steps.len() as f64;
        let (mean_c, mean_d) = (mean(|r| r.j_c), mean(|r| r.j_d));
        let mut dev_total = 0.0;
        for (j, s) in sources.iter().enumerate() {
            let train_acc = evaluate_accuracy(&model, s.train, PrivateFeatures::Extractor(&model.privates[j]))?;
            log.epochs.push(EpochRecord {
                epoch,
                domain: model.source_names[j].clone(),
                split: "train".into(),
                accuracy: train_acc,
                j_c: mean_c,
                j_d: mean_d,
            });
            if let Some(dev) = s.dev {
                let acc = evaluate_accuracy(&model, dev, PrivateFeatures::Extractor(&model.privates[j]))?;
                dev_total += acc;
                log.epochs.push(EpochRecord {
                    epoch,
                    domain: model.source_names[j].clone(),
                    split: "dev".into(),
                    accuracy: acc,
                    j_c: mean_c,
                    j_d: mean_d,
                });
            }
        }
        log::info!("stage 1 epoch {epoch}: J_C {mean_c:.4}, J_D {mean_d:.4}");

        if let Some(dir) = out_dir {
            model.to_checkpoint().save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
        if has_dev {
            let dev_mean = dev_total / sources.len() as f64;
            if best.as_ref().is_none_or(|(b, _)| dev_mean > *b) {
                best = Some((dev_mean, model.clone()));
                log.best_epoch = Some(epoch);
                since_best = 0;
                if let Some(dir) = out_dir {
                    model.to_checkpoint().save(&dir.join("best.ckpt"))?;
                }
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }

    log.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        write_file(&dir.join("metrics.csv"), &log.metrics_csv())?;
        write_file(&dir.join("steps.csv"), &log.steps_csv())?;
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, log))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

const EVAL_CHUNK: usize = 256;

/// Class probabilities `[p_negative, p_positive]` for every example, evaluated
/// with dropout off.
pub fn class_probabilities(
    model: &SharedPrivateModel,
    examples: &[Example],
    private: PrivateFeatures<'_>,
) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let lp = model.class_log_probs(&refs, private)?;
        out.extend(lp.rows().into_iter().map(|r| [r[0].exp() as f64, r[1].exp() as f64]));
    }
    Ok(out)
}

pub(crate) fn argmax2(p: &[f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

/// Fraction of argmax-correct predictions of `C(F_s(x), private(x))`.
pub fn evaluate_accuracy(model: &SharedPrivateModel, dataset: &DomainDataset, private: PrivateFeatures<'_>) -> Result<f64> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Validation(format!("cannot evaluate on unlabeled dataset '{}'", dataset.name())))?;
    let probs = class_probabilities(model, dataset.examples(), private)?;
    Ok(accuracy(&probs, &labels))
}

pub(crate) fn accuracy(probs: &[[f64; 2]], labels: &[u8]) -> f64 {
    let correct = probs.iter().zip(labels).filter(|(p, &y)| argmax2(p) == y).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Path of the best checkpoint inside a Stage-1 output directory.
pub fn best_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("best.ckpt")
}
