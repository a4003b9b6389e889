//! Experiment orchestration: data preparation, the leave-one-domain-out
//! protocol, artifact persistence with a checksummed manifest, and reports.

mod config;
mod manifest;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    seed_offset, DataSource, Encoder, ExperimentConfig, FileFormat, Mechanism, ModelSettings, TargetSpec,
};
pub use manifest::{sha256_hex, Artifact, Manifest, RunStatus, MANIFEST_FILE};
pub use report::{emit_report, Method, ReportFormat, ResultRow, ResultsTable};

use crate::corpus::{
    build_vocabulary, encode_tokens, featurize_bow, generate_synthetic_suite, load_labeled_tsv, load_sparse_features,
    split_dataset, DomainDataset,
};
use crate::divergence::{distance_matrix, select_closest, select_top_k, DistanceMatrix, Order};
use crate::error::{ensure, Error, Result};
use crate::nets::{Checkpoint, EncoderConfig, ModelConfig, PrivateFeatures, SharedPrivateModel};
use crate::pretrain::{evaluate_accuracy, pretrain, write_file, SourceSplit, TrainLog};
use crate::sda::{adapt_from, predict_target_sda, sda_accuracy, SdaState};
use crate::toe::{ensemble_accuracy, finetune_ensemble, predict_target_toe, ToeOutcome};

/// Loads every domain named by the config, labeled and in raw form.
pub fn load_domains(config: &ExperimentConfig) -> Result<Vec<DomainDataset>> {
    match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic_suite(spec),
        DataSource::Files { format, domains } => domains
            .iter()
            .enumerate()
            .map(|(i, (name, path))| {
                let ds = match format {
                    FileFormat::Text => load_labeled_tsv(path, name, true)?,
                    FileFormat::Features { dim } => load_sparse_features(path, name, true, *dim)?,
                };
                Ok(ds.with_domain_id(i))
            })
            .collect(),
    }
}

type Featurizer = dyn Fn(&DomainDataset) -> Result<DomainDataset>;

/// Splits and featurized data for one target under the leave-one-out protocol.
#[derive(Clone, Debug)]
pub struct PreparedTarget {
    pub target: String,
    pub source_names: Vec<String>,
    /// Per source: labeled train, dev, test.
    pub sources: Vec<(DomainDataset, DomainDataset, DomainDataset)>,
    /// Unlabeled target training pool: the only target data any training step sees.
    pub target_pool: DomainDataset,
    /// Labeled target test split, for evaluation only.
    pub target_test: DomainDataset,
    pub model_config: ModelConfig,
}

impl PreparedTarget {
    pub fn new(config: &ExperimentConfig, domains: &[DomainDataset], target: &str) -> Result<Self> {
        ensure!(
            domains.iter().any(|d| d.name() == target),
            "target '{target}' is not among the loaded domains"
        );
        let seed = config.split_seed();
        let mut sources = Vec::new();
        let mut target_parts = None;
        for d in domains {
            let parts = split_dataset(d, config.split, seed)?;
            if d.name() == target {
                target_parts = Some(parts);
            } else {
                sources.push(parts);
            }
        }
        let (pool, _, test) = target_parts.expect("target found above");
        let pool = pool.unlabeled();

        let m = &config.model;
        let raw_text = domains.iter().all(|d| d.mode() == crate::CorpusMode::Text);
        let (sources, pool, test, input) = if raw_text {
            // Vocabulary from training text only; target test text never shapes features.
            let mut vocab_from: Vec<&DomainDataset> = sources.iter().map(|s| &s.0).collect();
            vocab_from.push(&pool);
            let vocab = build_vocabulary(&vocab_from, m.vocab_size)?;
            let (encode, input): (Box<Featurizer>, EncoderConfig) = match m.encoder {
                Encoder::Feedforward => {
                    let dim = m.feature_dim.min(vocab.size() - 2).max(1);
                    let v = vocab.clone();
                    (
                        Box::new(move |d| featurize_bow(d, &v, dim)),
                        EncoderConfig::feedforward(dim, m.shared_dim),
                    )
                }
                Encoder::Convolutional => {
                    let v = vocab.clone();
                    (
                        Box::new(move |d| encode_tokens(d, &v)),
                        EncoderConfig::convolutional(vocab.size(), m.shared_dim),
                    )
                }
            };
            let sources = sources
                .iter()
                .map(|(a, b, c)| Ok((encode(a)?, encode(b)?, encode(c)?)))
                .collect::<Result<Vec<_>>>()?;
            (sources, encode(&pool)?, encode(&test)?, input)
        } else {
            ensure!(m.encoder == Encoder::Feedforward, "feature inputs need the feedforward encoder");
            let dim = match domains[0].examples().first().map(|e| &e.content) {
                Some(crate::Content::Features(v)) => v.dim(),
                _ => return Err(Error::Validation("feature datasets must hold feature vectors".into())),
            };
            (sources, pool, test, EncoderConfig::feedforward(dim, m.shared_dim))
        };

        let private = match &input {
            EncoderConfig::Feedforward { input_dim, .. } => EncoderConfig::feedforward(*input_dim, m.private_dim),
            EncoderConfig::Convolutional { vocab_size, .. } => EncoderConfig::convolutional(*vocab_size, m.private_dim),
        };
        let mut model_config = ModelConfig::with_encoders(input, private);
        model_config.head_hidden = m.head_hidden;
        model_config.dropout = m.dropout;
        model_config.discriminator_loss = m.discriminator_loss;
        model_config.clip = m.clip;
        model_config.validate()?;

        Ok(PreparedTarget {
            target: target.to_string(),
            source_names: sources.iter().map(|s| s.0.name().to_string()).collect(),
            sources,
            target_pool: pool,
            target_test: test,
            model_config,
        })
    }

    pub fn source_train(&self, name: &str) -> Result<&DomainDataset> {
        self.sources
            .iter()
            .find(|s| s.0.name() == name)
            .map(|s| &s.0)
            .ok_or_else(|| Error::Validation(format!("'{name}' is not a source for target '{}'", self.target)))
    }

    /// Freshly initialized Stage-1 model for this target.
    pub fn init_model(&self, config: &ExperimentConfig) -> Result<SharedPrivateModel> {
        let target = config.stage1.include_target_in_d.then_some(self.target.as_str());
        SharedPrivateModel::init(&self.model_config, &self.source_names, target, config.model_seed())
    }

    pub fn pretrain(&self, config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<(SharedPrivateModel, TrainLog)> {
        let model = self.init_model(config)?;
        let splits: Vec<SourceSplit<'_>> = self
            .sources
            .iter()
            .map(|(train, dev, _)| SourceSplit { train, dev: Some(dev) })
            .collect();
        let target = config.stage1.include_target_in_d.then_some(&self.target_pool);
        pretrain(model, &splits, target, &config.stage1, out_dir)
    }

    /// Proxy A-distances among the source training splits and the target pool.
    pub fn distance_matrix(&self, config: &ExperimentConfig) -> Result<DistanceMatrix> {
        let mut all: Vec<&DomainDataset> = self.sources.iter().map(|s| &s.0).collect();
        all.push(&self.target_pool);
        distance_matrix(&all, &config.proxy)
    }

    pub fn adapt(&self, model: &SharedPrivateModel, source: &str, config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<SdaState> {
        Ok(adapt_from(model, self.source_train(source)?, &self.target_pool, &config.sda, out_dir)?.0)
    }

    pub fn toe(&self, model: &SharedPrivateModel, matrix: &DistanceMatrix, config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ToeOutcome> {
        let sources = select_top_k(matrix, &self.target, config.toe.k_sources, Order::Ascending)?;
        finetune_ensemble(model, &sources, &self.target_pool, &config.toe, out_dir)
    }

    /// Accuracy of the Stage-1 model with private features zeroed.
    pub fn zero_accuracy(&self, model: &SharedPrivateModel) -> Result<f64> {
        evaluate_accuracy(model, &self.target_test, PrivateFeatures::Zero)
    }
}

/// Per-target details persisted next to the checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    pub sources: Vec<String>,
    pub stage1_best_epoch: Option<usize>,
    pub sda_source: Option<String>,
    pub top_k: Vec<String>,
    pub last_k: Vec<String>,
    pub pseudo_labels: Option<usize>,
    /// Pseudo-label precision against the pool's withheld labels (evaluation only).
    pub pseudo_label_precision: Option<f64>,
    pub accuracy: Vec<(Method, f64)>,
}

/// Methods the config's mechanism yields, in table order.
pub fn methods_for(mechanism: Mechanism) -> Vec<Method> {
    Method::ALL
        .into_iter()
        .filter(|m| match m {
            Method::Sda => mechanism.runs_sda(),
            Method::Toe => mechanism.runs_toe(),
            _ => true,
        })
        .collect()
}

/// Runs one target: Stage 1, distances, requested mechanisms and baselines.
pub fn run_target(
    config: &ExperimentConfig,
    domains: &[DomainDataset],
    target: &str,
    out_dir: &Path,
) -> Result<TargetSummary> {
    let prep = PreparedTarget::new(config, domains, target)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (model, log) = prep.pretrain(config, Some(&out_dir.join("stage1")))?;

    let matrix = prep.distance_matrix(config)?;
    write_file(&out_dir.join("adist.csv"), &matrix.to_csv())?;
    write_file(&out_dir.join("adist_long.csv"), &matrix.to_long_csv())?;
    write_file(&out_dir.join("adist.json"), &serde_json::to_string_pretty(&matrix).expect("matrix serializes"))?;

    let k = config.toe.k_sources;
    let top_k = select_top_k(&matrix, target, k, Order::Ascending)?;
    let last_k = select_top_k(&matrix, target, k, Order::Descending)?;
    let test = &prep.target_test;
    let mut summary = TargetSummary {
        target: target.to_string(),
        sources: prep.source_names.clone(),
        stage1_best_epoch: log.best_epoch,
        sda_source: None,
        top_k: top_k.clone(),
        last_k: last_k.clone(),
        pseudo_labels: None,
        pseudo_label_precision: None,
        accuracy: Vec::new(),
    };
    for method in methods_for(config.mechanism) {
        let acc = match method {
            Method::Zero => prep.zero_accuracy(&model)?,
            Method::AEns => ensemble_accuracy(&model, &prep.source_names, test)?,
            Method::LEns => ensemble_accuracy(&model, &last_k, test)?,
            Method::TEns => ensemble_accuracy(&model, &top_k, test)?,
            Method::Sda => {
                let source = select_closest(&matrix, target)?;
                let state = prep.adapt(&model, &source, config, Some(&out_dir.join("sda")))?;
                let preds = predict_target_sda(&state, test.examples())?;
                write_file(&out_dir.join("sda/predictions.tsv"), &predictions_tsv(&preds))?;
                summary.sda_source = Some(source);
                sda_accuracy(&state, test)?
            }
            Method::Toe => {
                let outcome = prep.toe(&model, &matrix, config, Some(&out_dir.join("toe")))?;
                let preds = predict_target_toe(&outcome.model, &outcome.sources, test.examples())?;
                write_file(&out_dir.join("toe/predictions.tsv"), &predictions_tsv(&preds))?;
                summary.pseudo_labels = Some(outcome.pseudo_labels.len());
                summary.pseudo_label_precision = pool_truth(config, domains, target)
                    .ok()
                    .and_then(|truth| outcome.pseudo_labels.precision(&truth, 0.0));
                ensemble_accuracy(&outcome.model, &outcome.sources, test)?
            }
        };
        log::info!("target {target}: {} = {:.3}", method.label(), acc);
        summary.accuracy.push((method, acc));
    }
    write_file(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

/// Labels of the target pool, re-derived from the split for auditing only.
fn pool_truth(config: &ExperimentConfig, domains: &[DomainDataset], target: &str) -> Result<Vec<u8>> {
    let d = domains
        .iter()
        .find(|d| d.name() == target)
        .ok_or_else(|| Error::Validation(format!("unknown target '{target}'")))?;
    let (pool, _, _) = split_dataset(d, config.split, config.split_seed())?;
    pool.labels().ok_or_else(|| Error::Validation("target has no labels".into()))
}

/// `example_id, predicted_label, p_positive` rows.
pub fn predictions_tsv(preds: &[(u8, [f64; 2])]) -> String {
    let mut out = String::from("example_id\tpredicted_label\tp_positive\n");
    for (i, (label, p)) in preds.iter().enumerate() {
        out.push_str(&format!("{i}\t{label}\t{:.6}\n", p[1]));
    }
    out
}

/// Full protocol over every configured target. Artifacts land under
/// `config.output_dir`, which also receives the config echo, the results in
/// JSON/CSV/markdown, and a manifest checksumming every file. On failure the
/// completed rows are still persisted and the manifest records the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.txt"), &config.to_kv_string())?;

    let mut table = ResultsTable::new(methods_for(config.mechanism));
    let mut completed = Vec::new();
    let result = (|| -> Result<()> {
        let domains = load_domains(config)?;
        for target in config.targets() {
            let summary = run_target(config, &domains, &target, &out.join(&target))?;
            table.push_row(&target, summary.accuracy.iter().map(|(_, a)| *a).collect())?;
            completed.push(target);
        }
        Ok(())
    })();

    write_file(&out.join("results.json"), &table.to_json())?;
    if !table.is_empty() {
        emit_report(&table, ReportFormat::Csv, &out.join("results.csv"))?;
        emit_report(&table, ReportFormat::Markdown, &out.join("results.md"))?;
    }
    let status = match &result {
        Ok(()) => RunStatus::Succeeded,
        Err(_) => RunStatus::Failed,
    };
    Manifest::collect(out, status, result.as_ref().err().map(|e| e.to_string()), config.seed, completed)?.write(out)?;
    result.map(|()| table)
}

/// Saves a Stage-1 model.
pub fn save_checkpoint(model: &SharedPrivateModel, path: &Path) -> Result<()> {
    model.to_checkpoint().save(path)
}

/// Loads a Stage-1 model, rejecting architectures other than `expected`.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<SharedPrivateModel> {
    SharedPrivateModel::from_checkpoint(&Checkpoint::load(path)?, expected)
}

/// Directory of a target's artifacts.
pub fn target_dir(config: &ExperimentConfig, target: &str) -> PathBuf {
    config.output_dir.join(target)
}
