//! Target-oriented ensemble: pseudo-label the target with the heads of the
//! closest sources under a decaying confidence threshold, finetune those
//! heads on the pseudo-labels, and predict by averaging them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainDataset, Example};
use crate::divergence::{select_top_k, DistanceMatrix, Order};
use crate::error::{ensure, Error, Result};
use crate::nets::{concat_features, nll, Adam, Dropout, ParameterSet, PrivateFeatures, Real, SharedPrivateModel};
use crate::pretrain::{class_probabilities, unmask, write_file, BatchSampler, StepRecord, TrainLog};

/// How the per-head class probabilities become a pseudo-label decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeling {
    /// Average the heads; confidence is the larger averaged probability.
    #[default]
    Average,
    /// Heads must agree on the argmax; confidence is the averaged probability
    /// of the agreed class.
    Unanimous,
    /// Confidence is the smallest per-head probability of the averaged argmax.
    MinProb,
}

/// Loop-guard reading for the labeling sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopGuard {
    /// Continue while the last two sweeps gained ≥ N labels *or* the threshold
    /// has not yet decayed past its floor.
    #[default]
    Or,
    /// Continue only while both hold.
    And,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToeConfig {
    /// Initial confidence threshold Δ.
    pub delta0: f64,
    /// Threshold decay per sweep.
    pub eta: f64,
    /// Minimum gain over two sweeps that keeps labeling going past the floor.
    pub n_min: usize,
    /// Number of closest sources in the ensemble.
    pub k_sources: usize,
    pub finetune_iter: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub labeling: Labeling,
    pub guard: LoopGuard,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for ToeConfig {
    fn default() -> Self {
        ToeConfig {
            delta0: 0.98,
            eta: 0.02,
            n_min: 10,
            k_sources: 3,
            finetune_iter: 3000,
            learning_rate: 1e-5,
            batch_size: 16,
            labeling: Labeling::Average,
            guard: LoopGuard::Or,
            max_sweeps: 50,
            seed: 0,
        }
    }
}

/// Threshold floor.
pub const DELTA_FLOOR: f64 = 0.5;

impl ToeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (DELTA_FLOOR..=1.0).contains(&self.delta0),
            "delta0 must lie in [0.5, 1], got {}",
            self.delta0
        );
        ensure!(self.eta > 0.0, "eta must be positive");
        ensure!(self.k_sources >= 1, "k_sources must be ≥ 1");
        ensure!(self.learning_rate > 0.0, "learning_rate must be positive");
        ensure!(self.batch_size >= 1, "batch_size must be ≥ 1");
        ensure!(self.max_sweeps >= 1, "max_sweeps must be ≥ 1");
        Ok(())
    }

    /// Threshold of sweep `k` before flooring, rounded to 12 decimals so the
    /// trace is exactly `δ0, δ0 − η, δ0 − 2η, …`.
    pub fn delta_at(&self, sweep: usize) -> f64 {
        ((self.delta0 - sweep as f64 * self.eta) * 1e12).round() / 1e12
    }
}

/// One accepted pseudo-label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    /// Position in the target dataset.
    pub index: usize,
    pub label: u8,
    pub confidence: f64,
    pub sweep: usize,
    /// Threshold in force when accepted.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub delta: f64,
    pub accepted: usize,
    pub remaining: usize,
}

/// Pseudo-labeled part of the target plus the still-unlabeled pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
    /// Indices not yet labeled, ascending.
    pub remaining: Vec<usize>,
    pub sweeps: Vec<SweepRecord>,
    pub target_len: usize,
}

impl PseudoLabelSet {
    pub fn new(target_len: usize) -> Self {
        PseudoLabelSet {
            entries: Vec::new(),
            remaining: (0..target_len).collect(),
            sweeps: Vec::new(),
            target_len,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries and pool are disjoint and together cover the target exactly.
    pub fn check_partition(&self) -> bool {
        let mut seen = vec![false; self.target_len];
        for i in self.entries.iter().map(|e| e.index).chain(self.remaining.iter().copied()) {
            if i >= self.target_len || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }

    /// Fraction of entries whose label matches `truth`, optionally restricted
    /// to entries accepted at threshold ≥ `min_delta`. `None` when empty.
    pub fn precision(&self, truth: &[u8], min_delta: f64) -> Option<f64> {
        let picked: Vec<&PseudoLabel> = self.entries.iter().filter(|e| e.delta >= min_delta).collect();
        if picked.is_empty() {
            return None;
        }
        let ok = picked.iter().filter(|e| truth[e.index] == e.label).count();
        Some(ok as f64 / picked.len() as f64)
    }

    /// `example_id,sweep,delta,confidence,label` audit rows.
    pub fn audit_tsv(&self) -> String {
        let mut out = String::from("example_id\tsweep\tdelta\tconfidence\tlabel\n");
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{:.2}\t{:.6}\t{}", e.index, e.sweep, e.delta, e.confidence, e.label);
        }
        out
    }
}

/// Decision of the labeling rule for one example: `(label, confidence)`, or
/// `None` when the heads tie exactly or disagree under [`Labeling::Unanimous`].
pub fn label_decision(per_head: &[[f64; 2]], labeling: Labeling) -> Option<(u8, f64)> {
    if per_head.is_empty() {
        return None;
    }
    let k = per_head.len() as f64;
    let avg = [
        per_head.iter().map(|p| p[0]).sum::<f64>() / k,
        per_head.iter().map(|p| p[1]).sum::<f64>() / k,
    ];
    if avg[0] == avg[1] {
        return None;
    }
    let label = u8::from(avg[1] > avg[0]);
    let y = label as usize;
    match labeling {
        Labeling::Average => Some((label, avg[y])),
        Labeling::Unanimous => per_head.iter().all(|p| p[y] > p[1 - y]).then_some((label, avg[y])),
        Labeling::MinProb => Some((label, per_head.iter().map(|p| p[y]).fold(f64::INFINITY, f64::min))),
    }
}

/// Per-head probabilities for every example: `result[head][example]`.
pub fn head_probabilities(model: &SharedPrivateModel, sources: &[String], examples: &[Example]) -> Result<Vec<Vec<[f64; 2]>>> {
    sources
        .iter()
        .map(|s| class_probabilities(model, examples, PrivateFeatures::Extractor(model.private(s)?)))
        .collect()
}

/// Accepts each example whose decision confidence is ≥ `delta`. Returns
/// `(position in batch, label, confidence)`.
pub fn ensemble_label_batch(
    model: &SharedPrivateModel,
    sources: &[String],
    batch: &[Example],
    delta: f64,
    labeling: Labeling,
) -> Result<Vec<(usize, u8, f64)>> {
    ensure!((DELTA_FLOOR..=1.0).contains(&delta), "delta must lie in [0.5, 1]");
    ensure!(!sources.is_empty(), "no ensemble sources");
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let probs = head_probabilities(model, sources, batch)?;
    Ok(accept(&probs, 0..batch.len(), delta, labeling))
}

fn accept(
    probs: &[Vec<[f64; 2]>],
    pool: impl Iterator<Item = usize>,
    delta: f64,
    labeling: Labeling,
) -> Vec<(usize, u8, f64)> {
    pool.filter_map(|i| {
        let per_head: Vec<[f64; 2]> = probs.iter().map(|h| h[i]).collect();
        label_decision(&per_head, labeling)
            .filter(|&(_, c)| c >= delta)
            .map(|(y, c)| (i, y, c))
    })
    .collect()
}

/// Sweeps the remaining pool with a decaying threshold until the guard stops
/// it, the pool empties, or `max_sweeps` is hit. Labels are never revised.
pub fn pseudo_label_loop(
    model: &SharedPrivateModel,
    sources: &[String],
    target: &DomainDataset,
    config: &ToeConfig,
) -> Result<PseudoLabelSet> {
    config.validate()?;
    ensure!(!target.is_labeled(), "target '{}' must be unlabeled while pseudo-labeling", target.name());
    // The heads are fixed while labeling, so every probability is computed once.
    let probs = head_probabilities(model, sources, target.examples())?;
    Ok(label_from_probabilities(&probs, target.len(), config))
}

pub(crate) fn label_from_probabilities(probs: &[Vec<[f64; 2]>], n: usize, config: &ToeConfig) -> PseudoLabelSet {
    let mut set = PseudoLabelSet::new(n);
    let mut gains: Vec<usize> = Vec::new();
    let mut floor_passed = false;
    for sweep in 0..config.max_sweeps {
        if set.remaining.is_empty() {
            break;
        }
        let raw = config.delta_at(sweep);
        let delta = raw.max(DELTA_FLOOR);
        let accepted = accept(probs, set.remaining.iter().copied(), delta, config.labeling);
        let taken: std::collections::HashSet<usize> = accepted.iter().map(|a| a.0).collect();
        set.remaining.retain(|i| !taken.contains(i));
        for (index, label, confidence) in accepted {
            set.entries.push(PseudoLabel {
                index,
                label,
                confidence,
                sweep,
                delta,
            });
        }
        gains.push(taken.len());
        set.sweeps.push(SweepRecord {
            sweep,
            delta,
            accepted: taken.len(),
            remaining: set.remaining.len(),
        });
        debug_assert!(set.check_partition());

        floor_passed |= config.delta_at(sweep + 1) < DELTA_FLOOR;
        let recent: usize = gains.iter().rev().take(2).sum();
        let gaining = recent >= config.n_min;
        let continue_ = match config.guard {
            LoopGuard::Or => gaining || !floor_passed,
            LoopGuard::And => gaining && !floor_passed,
        };
        if !continue_ {
            break;
        }
    }
    if set.is_empty() {
        log::warn!("pseudo-labeling accepted no target examples");
    }
    set
}

/// Summed NLL over the heads of `sources` on pseudo-labeled examples, with
/// gradients for those private extractors (in `sources` order) and the
/// classifier. The shared extractor is only read.
pub fn finetune_objective<T: Real>(
    model: &SharedPrivateModel<T>,
    sources: &[usize],
    batch: &[&Example],
    labels: &[usize],
    dropout: &mut Dropout<'_>,
) -> Result<(T, Vec<ParameterSet<T>>, ParameterSet<T>)> {
    ensure!(!batch.is_empty(), "empty pseudo-label batch");
    ensure!(batch.len() == labels.len(), "label count does not match batch");
    let (shared, _) = model.shared.forward(batch)?;
    let mut g_c = model.classifier.params().zeros_like();
    let mut g_p = Vec::with_capacity(sources.len());
    let mut total = T::zero();
    for &j in sources {
        ensure!(j < model.num_sources(), "source index {j} out of range");
        let (s, _) = dropout.apply(shared.clone());
        let (p, cache) = model.privates[j].forward(batch)?;
        let (p, mask) = dropout.apply(p);
        let x = concat_features(s.view(), p.view())?;
        let (logits, c_cache) = model.classifier.forward(x.view())?;
        let (loss, d_logits) = nll(&logits, labels)?;
        total += loss;
        let d_x = model.classifier.backward(&c_cache, &d_logits, &mut g_c);
        let mut d_p = d_x.slice(ndarray::s![.., s.ncols()..]).to_owned();
        unmask(&mut d_p, &mask);
        let mut g = model.privates[j].params().zeros_like();
        model.privates[j].backward(&cache, &d_p, &mut g);
        g_p.push(g);
    }
    Ok((total, g_p, g_c))
}

/// Optimizer state for the finetuned heads.
pub struct ToeOptimizers {
    privates: Vec<Adam>,
    classifier: Adam,
}

impl ToeOptimizers {
    pub fn new(model: &SharedPrivateModel, sources: &[usize], learning_rate: f64) -> Self {
        ToeOptimizers {
            privates: sources.iter().map(|&j| Adam::new(model.privates[j].params(), learning_rate)).collect(),
            classifier: Adam::new(model.classifier.params(), learning_rate),
        }
    }
}

/// One finetuning update of the selected private extractors and the classifier.
pub fn finetune_step(
    model: &mut SharedPrivateModel,
    sources: &[usize],
    batch: &[&Example],
    labels: &[usize],
    opt: &mut ToeOptimizers,
    rng: &mut crate::Rng,
) -> Result<f32> {
    let (loss, g_p, g_c) = finetune_objective(model, sources, batch, labels, &mut Dropout::train(model.config.dropout, rng))?;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite finetuning loss {loss}")));
    }
    for ((&j, g), o) in sources.iter().zip(&g_p).zip(opt.privates.iter_mut()) {
        o.step(model.privates[j].params_mut(), g);
    }
    opt.classifier.step(model.classifier.params_mut(), &g_c);
    Ok(loss)
}

/// Result of a TOE run.
#[derive(Clone, Debug)]
pub struct ToeOutcome {
    /// Stage-1 model with the selected heads finetuned.
    pub model: SharedPrivateModel,
    /// Ensemble sources, closest first.
    pub sources: Vec<String>,
    pub pseudo_labels: PseudoLabelSet,
    pub log: TrainLog,
}

/// Full TOE: top-k selection, pseudo-labeling, finetuning.
pub fn run_toe(
    model: &SharedPrivateModel,
    target: &DomainDataset,
    matrix: &DistanceMatrix,
    config: &ToeConfig,
    out_dir: Option<&Path>,
) -> Result<ToeOutcome> {
    config.validate()?;
    let sources = select_top_k(matrix, target.name(), config.k_sources, Order::Ascending)?;
    finetune_ensemble(model, &sources, target, config, out_dir)
}

/// Pseudo-labels `target` with the given heads and finetunes them.
pub fn finetune_ensemble(
    model: &SharedPrivateModel,
    sources: &[String],
    target: &DomainDataset,
    config: &ToeConfig,
    out_dir: Option<&Path>,
) -> Result<ToeOutcome> {
    let started = std::time::Instant::now();
    let pseudo = pseudo_label_loop(model, sources, target, config)?;
    let mut tuned = model.clone();
    let mut log = TrainLog::default();
    if config.finetune_iter > 0 {
        if pseudo.is_empty() {
            return Err(Error::Validation(
                "no pseudo-labels were accepted; cannot finetune (lower delta0 or check the source heads)".into(),
            ));
        }
        let idx: Vec<usize> = sources.iter().map(|s| model.source_index(s)).collect::<Result<_>>()?;
        let mut rng = crate::seeded(config.seed);
        let mut opt = ToeOptimizers::new(&tuned, &idx, config.learning_rate);
        let mut sampler = BatchSampler::new(pseudo.len(), &mut rng);
        for step in 0..config.finetune_iter {
            let picks = sampler.next(config.batch_size, &mut rng);
            let batch: Vec<&Example> = picks.iter().map(|&p| &target.examples()[pseudo.entries[p].index]).collect();
            let labels: Vec<usize> = picks.iter().map(|&p| pseudo.entries[p].label as usize).collect();
            let loss = finetune_step(&mut tuned, &idx, &batch, &labels, &mut opt, &mut rng)?;
            log.steps.push(StepRecord {
                epoch: 0,
                step,
                j_d: 0.0,
                j_c: loss as f64,
                j_total: loss as f64,
            });
        }
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        tuned.to_checkpoint().save(&dir.join("toe_final.ckpt"))?;
        write_file(&dir.join("pseudo_labels.tsv"), &pseudo.audit_tsv())?;
        write_file(&dir.join("toe_steps.csv"), &log.steps_csv())?;
    }
    Ok(ToeOutcome {
        model: tuned,
        sources: sources.to_vec(),
        pseudo_labels: pseudo,
        log,
    })
}

/// Averaged ensemble prediction: label and `[p_negative, p_positive]`.
pub fn predict_target_toe(model: &SharedPrivateModel, sources: &[String], batch: &[Example]) -> Result<Vec<(u8, [f64; 2])>> {
    ensure!(!sources.is_empty(), "no ensemble sources");
    let probs = head_probabilities(model, sources, batch)?;
    let k = sources.len() as f64;
    Ok((0..batch.len())
        .map(|i| {
            let p1 = probs.iter().map(|h| h[i][1]).sum::<f64>() / k;
            let p0 = probs.iter().map(|h| h[i][0]).sum::<f64>() / k;
            let p = [p0, p1];
            (crate::pretrain::argmax2(&p), p)
        })
        .collect())
}

/// Accuracy of the averaged ensemble of `sources` against held-out labels.
pub fn ensemble_accuracy(model: &SharedPrivateModel, sources: &[String], labeled: &DomainDataset) -> Result<f64> {
    let labels = labeled
        .labels()
        .ok_or_else(|| Error::Validation(format!("cannot evaluate on unlabeled dataset '{}'", labeled.name())))?;
    let preds = predict_target_toe(model, sources, labeled.examples())?;
    let probs: Vec<[f64; 2]> = preds.into_iter().map(|(_, p)| p).collect();
    Ok(crate::pretrain::accuracy(&probs, &labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn averaging_rule_examples() {
        let heads = [[0.01, 0.99], [0.03, 0.97], [0.01, 0.99]];
        let (y, c) = label_decision(&heads, Labeling::Average).unwrap();
        assert_eq!(y, 1);
        assert!(c >= 0.98 && (c - 0.983333).abs() < 1e-5);
        let heads = [[0.01, 0.99], [0.01, 0.99], [0.6, 0.4]];
        let (_, c) = label_decision(&heads, Labeling::Average).unwrap();
        assert!((c - 0.793333).abs() < 1e-5 && c < 0.98);
    }

    #[test]
    fn alternative_rules() {
        let heads = [[0.2, 0.8], [0.6, 0.4]];
        assert_eq!(label_decision(&heads, Labeling::Unanimous), None);
        let (y, c) = label_decision(&heads, Labeling::MinProb).unwrap();
        assert_eq!(y, 1);
        assert!((c - 0.4).abs() < 1e-12);
    }

    #[test]
    fn exact_ties_are_rejected() {
        assert_eq!(label_decision(&[[0.5, 0.5]], Labeling::Average), None);
    }

    #[test]
    fn delta_trace_is_exact() {
        let cfg = ToeConfig::default();
        let trace: Vec<f64> = (0..5).map(|k| cfg.delta_at(k)).collect();
        assert_eq!(trace, [0.98, 0.96, 0.94, 0.92, 0.90]);
        assert_eq!(cfg.delta_at(24), 0.5);
        assert!(cfg.delta_at(25) < DELTA_FLOOR);
    }

    #[test]
    fn uniform_heads_label_nothing_and_stop_at_floor() {
        let probs = vec![vec![[0.5, 0.5]; 30]; 3];
        let set = label_from_probabilities(&probs, 30, &ToeConfig::default());
        assert!(set.is_empty());
        assert_eq!(set.remaining.len(), 30);
        let last = set.sweeps.last().unwrap();
        assert_eq!(last.delta, DELTA_FLOOR);
        assert_eq!(set.sweeps.len(), 25);
    }

    #[test]
    fn confident_heads_exhaust_the_pool_early() {
        let probs = vec![vec![[0.001, 0.999]; 40]; 3];
        let set = label_from_probabilities(&probs, 40, &ToeConfig::default());
        assert_eq!(set.len(), 40);
        assert_eq!(set.sweeps.len(), 1);
        assert!(set.check_partition());
    }

    #[test]
    fn and_guard_stops_when_gains_dry_up() {
        let probs = vec![vec![[0.3, 0.7]; 40]; 1];
        let cfg = ToeConfig { guard: LoopGuard::And, ..Default::default() };
        let set = label_from_probabilities(&probs, 40, &cfg);
        assert!(set.is_empty());
        assert_eq!(set.sweeps.len(), 1);
    }

    proptest! {
        #[test]
        fn partition_and_threshold_invariants(ps in prop::collection::vec(0.0f64..=1.0, 1..60), k in 1usize..4) {
            let heads: Vec<Vec<[f64; 2]>> = (0..k)
                .map(|h| ps.iter().map(|&p| {
                    let q = (p + 0.1 * h as f64).min(1.0);
                    [1.0 - q, q]
                }).collect())
                .collect();
            let set = label_from_probabilities(&heads, ps.len(), &ToeConfig::default());
            prop_assert!(set.check_partition());
            for e in &set.entries {
                prop_assert!(e.confidence >= e.delta);
            }
            for w in set.sweeps.windows(2) {
                prop_assert!(w[1].delta < w[0].delta || w[1].delta == DELTA_FLOOR);
            }
            prop_assert!(set.sweeps.len() <= 50);
        }

        #[test]
        fn averaging_is_order_invariant(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
            let h = [[1.0 - a, a], [1.0 - b, b], [1.0 - c, c]];
            let r = [h[2], h[0], h[1]];
            let x = label_decision(&h, Labeling::Average);
            let y = label_decision(&r, Labeling::Average);
            match (x, y) {
                (Some((l1, c1)), Some((l2, c2))) => { prop_assert_eq!(l1, l2); prop_assert!((c1 - c2).abs() < 1e-12); }
                (None, None) => {}
                _ => {}
            }
        }
    }

    #[test]
    fn audit_has_header() {
        let set = PseudoLabelSet::new(3);
        assert_eq!(set.audit_tsv(), "example_id\tsweep\tdelta\tconfidence\tlabel\n");
        assert!(set.check_partition());
        assert_eq!(set.precision(&[0, 1, 1], 0.9), None);
    }
}
