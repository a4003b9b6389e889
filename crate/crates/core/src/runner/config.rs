//! Flat `key=value` experiment configuration with dotted sections.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{SplitFractions, SyntheticSuiteSpec};
use crate::divergence::ProxyClassifierConfig;
use crate::error::{ensure, Error, Result};
use crate::nets::{AdversarialLoss, DEFAULT_HEAD_HIDDEN, DEFAULT_PRIVATE_DIM, DEFAULT_SHARED_DIM};
use crate::pretrain::Stage1Config;
use crate::sda::SdaConfig;
use crate::toe::{Labeling, LoopGuard, ToeConfig};

/// Per-stage seed offsets from the master seed.
pub mod seed_offset {
    pub const SPLIT: u64 = 0;
    pub const MODEL: u64 = 1;
    pub const STAGE1: u64 = 2;
    pub const PROXY: u64 = 3;
    pub const SDA: u64 = 4;
    pub const TOE: u64 = 5;
}

/// Where the domains come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic(SyntheticSuiteSpec),
    /// One labeled file per domain, in name order.
    Files {
        format: FileFormat,
        domains: BTreeMap<String, PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    /// `label<TAB>text` lines.
    Text,
    /// `label<TAB>idx:count ...` lines of the given width.
    Features { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSpec {
    /// Every domain takes a turn as the target; the rest are sources.
    Rotate,
    Single(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Sda,
    Toe,
    Both,
    Baselines,
}

impl Mechanism {
    pub fn runs_sda(self) -> bool {
        matches!(self, Mechanism::Sda | Mechanism::Both)
    }

    pub fn runs_toe(self) -> bool {
        matches!(self, Mechanism::Toe | Mechanism::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Feedforward,
    Convolutional,
}

/// Architecture knobs; input widths are filled in once the data is loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub encoder: Encoder,
    pub shared_dim: usize,
    pub private_dim: usize,
    pub head_hidden: usize,
    pub dropout: f64,
    pub discriminator_loss: AdversarialLoss,
    pub clip: f64,
    /// Vocabulary cap (including PAD and UNK) for raw-text inputs.
    pub vocab_size: usize,
    /// Bag-of-words width for raw-text inputs to feedforward extractors.
    pub feature_dim: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            encoder: Encoder::Feedforward,
            shared_dim: DEFAULT_SHARED_DIM,
            private_dim: DEFAULT_PRIVATE_DIM,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            dropout: 0.4,
            discriminator_loss: AdversarialLoss::Nll,
            clip: 0.01,
            vocab_size: 5002,
            feature_dim: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub target: TargetSpec,
    pub mechanism: Mechanism,
    pub output_dir: PathBuf,
    /// Master seed; every stage derives its own seed by a fixed offset.
    pub seed: u64,
    pub split: SplitFractions,
    pub model: ModelSettings,
    pub stage1: Stage1Config,
    pub proxy: ProxyClassifierConfig,
    pub sda: SdaConfig,
    pub toe: ToeConfig,
}

impl ExperimentConfig {
    /// Defaults around a synthetic suite, with stage seeds derived from `seed`.
    pub fn synthetic(spec: SyntheticSuiteSpec, seed: u64) -> Self {
        let mut cfg = ExperimentConfig {
            data: DataSource::Synthetic(spec),
            target: TargetSpec::Rotate,
            mechanism: Mechanism::Both,
            output_dir: PathBuf::from("msda-run"),
            seed,
            split: SplitFractions::default(),
            model: ModelSettings::default(),
            stage1: Stage1Config::default(),
            proxy: ProxyClassifierConfig::default(),
            sda: SdaConfig::default(),
            toe: ToeConfig::default(),
        };
        cfg.derive_seeds();
        cfg
    }

    /// Overwrites every stage seed from the master seed.
    pub fn derive_seeds(&mut self) {
        self.stage1.seed = self.seed.wrapping_add(seed_offset::STAGE1);
        self.proxy.seed = self.seed.wrapping_add(seed_offset::PROXY);
        self.sda.seed = self.seed.wrapping_add(seed_offset::SDA);
        self.toe.seed = self.seed.wrapping_add(seed_offset::TOE);
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(seed_offset::SPLIT)
    }

    pub fn model_seed(&self) -> u64 {
        self.seed.wrapping_add(seed_offset::MODEL)
    }

    pub fn domain_names(&self) -> Vec<String> {
        match &self.data {
            DataSource::Synthetic(spec) => (0..spec.num_domains).map(SyntheticSuiteSpec::domain_name).collect(),
            DataSource::Files { domains, .. } => domains.keys().cloned().collect(),
        }
    }

    /// Target domains in run order.
    pub fn targets(&self) -> Vec<String> {
        match &self.target {
            TargetSpec::Rotate => self.domain_names(),
            TargetSpec::Single(t) => vec![t.clone()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.domain_names();
        match &self.data {
            DataSource::Synthetic(spec) => spec.validate()?,
            DataSource::Files { format, domains } => {
                ensure!(domains.len() >= 2, "at least two data.domain.<name> entries are required");
                for (name, path) in domains {
                    ensure!(path.is_file(), "data file for domain '{name}' not found: {}", path.display());
                }
                if let FileFormat::Features { dim } = format {
                    ensure!(*dim > 0, "data.feature_dim must be positive");
                    ensure!(
                        self.model.encoder == Encoder::Feedforward,
                        "feature files need model.encoder=feedforward"
                    );
                }
            }
        }
        match &self.target {
            TargetSpec::Rotate => ensure!(names.len() >= 3, "rotate mode requires at least 3 domains"),
            TargetSpec::Single(t) => {
                ensure!(names.contains(t), "target '{t}' is not one of the domains {names:?}");
                ensure!(names.len() >= 3, "a target plus at least two sources are required");
            }
        }
        let SplitFractions { train, dev, test } = self.split;
        ensure!(
            train > 0.0 && dev > 0.0 && test > 0.0 && ((train + dev + test) - 1.0).abs() < 1e-9,
            "split fractions must be positive and sum to 1"
        );
        let m = &self.model;
        ensure!(m.shared_dim > 0 && m.private_dim > 0 && m.head_hidden > 0, "model dimensions must be positive");
        ensure!((0.0..1.0).contains(&m.dropout), "model.dropout must lie in [0, 1)");
        ensure!(m.clip > 0.0, "model.clip must be positive");
        ensure!(m.vocab_size >= 3, "model.vocab_size must be at least 3");
        ensure!(m.feature_dim >= 1, "model.feature_dim must be positive");
        self.stage1.validate()?;
        self.proxy.validate()?;
        self.sda.validate()?;
        self.toe.validate()?;
        ensure!(
            self.toe.k_sources < names.len(),
            "toe.k_sources = {} leaves no room for a target among {} domains",
            self.toe.k_sources,
            names.len()
        );
        Ok(())
    }

    /// Parses a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse_with_base(&text, base)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_base(text, Path::new(""))
    }

    fn parse_with_base(text: &str, base: &Path) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim().to_string();
            ensure_unique(&entries, &k)?;
            entries.push((k, v.trim().to_string()));
        }

        let synthetic = entries.iter().any(|(k, _)| k.starts_with("data.synthetic."));
        let files = entries.iter().any(|(k, _)| k.starts_with("data.domain."));
        if synthetic && files {
            return Err(Error::Config("data.synthetic.* and data.domain.* are mutually exclusive".into()));
        }
        if !synthetic && !files {
            return Err(Error::Config("no data: set data.synthetic.shift or data.domain.<name>".into()));
        }

        let mut cfg = ExperimentConfig::synthetic(SyntheticSuiteSpec::new(Vec::new(), 1000, 0), 0);
        let mut spec = SyntheticSuiteSpec::new(Vec::new(), 1000, 0);
        let mut spec_seed = None;
        let mut num_domains = None;
        let mut format = "text".to_string();
        let mut feature_dim = None;
        let mut domains = BTreeMap::new();

        for (k, v) in &entries {
            if let Some(name) = k.strip_prefix("data.domain.") {
                ensure_config(!name.is_empty(), format!("key '{k}': empty domain name"))?;
                let p = PathBuf::from(v);
                domains.insert(name.to_string(), if p.is_absolute() { p } else { base.join(p) });
                continue;
            }
            match k.as_str() {
                "data.synthetic.shift" => {
                    spec.shift = v
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| type_error(k, v, "comma-separated reals"))?
                }
                "data.synthetic.num_domains" => num_domains = Some(parse(k, v, "integer")?),
                "data.synthetic.examples_per_domain" => spec.examples_per_domain = parse(k, v, "integer")?,
                "data.synthetic.vocab_size" => spec.vocab_size = parse(k, v, "integer")?,
                "data.synthetic.polarity_flip_fraction" => spec.polarity_flip_fraction = parse(k, v, "real")?,
                "data.synthetic.window_radius" => spec.window_radius = parse(k, v, "real")?,
                "data.synthetic.seed" => spec_seed = Some(parse(k, v, "integer")?),
                "data.format" => format = v.clone(),
                "data.feature_dim" => feature_dim = Some(parse(k, v, "integer")?),
                "target" => {
                    cfg.target = if v == "rotate" { TargetSpec::Rotate } else { TargetSpec::Single(v.clone()) }
                }
                "mechanism" => cfg.mechanism = parse_enum(k, v, &MECHANISMS)?,
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                "seed" => cfg.seed = parse(k, v, "integer")?,
                "split.train" => cfg.split.train = parse(k, v, "real")?,
                "split.dev" => cfg.split.dev = parse(k, v, "real")?,
                "split.test" => cfg.split.test = parse(k, v, "real")?,
                "model.encoder" => cfg.model.encoder = parse_enum(k, v, &ENCODERS)?,
                "model.shared_dim" => cfg.model.shared_dim = parse(k, v, "integer")?,
                "model.private_dim" => cfg.model.private_dim = parse(k, v, "integer")?,
                "model.head_hidden" => cfg.model.head_hidden = parse(k, v, "integer")?,
                "model.dropout" => cfg.model.dropout = parse(k, v, "real")?,
                "model.discriminator_loss" => cfg.model.discriminator_loss = parse_loss(k, v)?,
                "model.clip" => cfg.model.clip = parse(k, v, "real")?,
                "model.vocab_size" => cfg.model.vocab_size = parse(k, v, "integer")?,
                "model.feature_dim" => cfg.model.feature_dim = parse(k, v, "integer")?,
                "stage1.lambda1" => cfg.stage1.lambda1 = parse(k, v, "real")?,
                "stage1.learning_rate" => cfg.stage1.learning_rate = parse(k, v, "real")?,
                "stage1.batch_size" => cfg.stage1.batch_size = parse(k, v, "integer")?,
                "stage1.n_critic" => cfg.stage1.n_critic = parse(k, v, "integer")?,
                "stage1.epochs" => cfg.stage1.epochs = parse(k, v, "integer")?,
                "stage1.patience" => cfg.stage1.patience = parse(k, v, "integer")?,
                "stage1.include_target_in_d" => cfg.stage1.include_target_in_d = parse(k, v, "boolean")?,
                "proxy.c" => cfg.proxy.c = parse(k, v, "real")?,
                "proxy.max_epochs" => cfg.proxy.max_epochs = parse(k, v, "integer")?,
                "proxy.heldout_fraction" => cfg.proxy.heldout_fraction = parse(k, v, "real")?,
                "proxy.feature_dim" => cfg.proxy.feature_dim = parse(k, v, "integer")?,
                "sda.lambda2" => cfg.sda.lambda2 = parse(k, v, "real")?,
                "sda.lambda_theta" => cfg.sda.lambda_theta = parse(k, v, "real")?,
                "sda.iter1" => cfg.sda.iter1 = parse(k, v, "integer")?,
                "sda.iter2" => cfg.sda.iter2 = parse(k, v, "integer")?,
                "sda.n_critic" => cfg.sda.n_critic = parse(k, v, "integer")?,
                "sda.learning_rate" => cfg.sda.learning_rate = parse(k, v, "real")?,
                "sda.batch_size" => cfg.sda.batch_size = parse(k, v, "integer")?,
                "sda.da_loss" => cfg.sda.da_loss = parse_loss(k, v)?,
                "toe.delta0" => cfg.toe.delta0 = parse(k, v, "real")?,
                "toe.eta" => cfg.toe.eta = parse(k, v, "real")?,
                "toe.n_min" => cfg.toe.n_min = parse(k, v, "integer")?,
                "toe.k_sources" => cfg.toe.k_sources = parse(k, v, "integer")?,
                "toe.finetune_iter" => cfg.toe.finetune_iter = parse(k, v, "integer")?,
                "toe.learning_rate" => cfg.toe.learning_rate = parse(k, v, "real")?,
                "toe.batch_size" => cfg.toe.batch_size = parse(k, v, "integer")?,
                "toe.labeling" => cfg.toe.labeling = parse_enum(k, v, &LABELINGS)?,
                "toe.guard" => cfg.toe.guard = parse_enum(k, v, &GUARDS)?,
                "toe.max_sweeps" => cfg.toe.max_sweeps = parse(k, v, "integer")?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }

        cfg.data = if synthetic {
            spec.num_domains = num_domains.unwrap_or(spec.shift.len());
            spec.seed = spec_seed.unwrap_or(cfg.seed);
            DataSource::Synthetic(spec)
        } else {
            let format = match (format.as_str(), feature_dim) {
                ("text", None) => FileFormat::Text,
                ("features", Some(dim)) => FileFormat::Features { dim },
                ("features", None) => return Err(Error::Config("data.format=features needs data.feature_dim".into())),
                ("text", Some(_)) => return Err(Error::Config("data.feature_dim only applies to data.format=features".into())),
                (other, _) => return Err(type_error("data.format", other, "one of text, features")),
            };
            DataSource::Files { format, domains }
        };
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting, defaults included, in the format [`ExperimentConfig::parse`] reads.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        match &self.data {
            DataSource::Synthetic(s) => {
                let shifts: Vec<String> = s.shift.iter().map(|x| x.to_string()).collect();
                put("data.synthetic.num_domains", s.num_domains.to_string());
                put("data.synthetic.shift", shifts.join(","));
                put("data.synthetic.examples_per_domain", s.examples_per_domain.to_string());
                put("data.synthetic.vocab_size", s.vocab_size.to_string());
                put("data.synthetic.polarity_flip_fraction", s.polarity_flip_fraction.to_string());
                put("data.synthetic.window_radius", s.window_radius.to_string());
                put("data.synthetic.seed", s.seed.to_string());
            }
            DataSource::Files { format, domains } => {
                match format {
                    FileFormat::Text => put("data.format", "text".into()),
                    FileFormat::Features { dim } => {
                        put("data.format", "features".into());
                        put("data.feature_dim", dim.to_string());
                    }
                }
                for (name, path) in domains {
                    put(&format!("data.domain.{name}"), path.display().to_string());
                }
            }
        }
        put(
            "target",
            match &self.target {
                TargetSpec::Rotate => "rotate".into(),
                TargetSpec::Single(t) => t.clone(),
            },
        );
        put("mechanism", enum_name(&MECHANISMS, self.mechanism));
        put("output_dir", self.output_dir.display().to_string());
        put("seed", self.seed.to_string());
        put("split.train", self.split.train.to_string());
        put("split.dev", self.split.dev.to_string());
        put("split.test", self.split.test.to_string());
        let m = &self.model;
        put("model.encoder", enum_name(&ENCODERS, m.encoder));
        put("model.shared_dim", m.shared_dim.to_string());
        put("model.private_dim", m.private_dim.to_string());
        put("model.head_hidden", m.head_hidden.to_string());
        put("model.dropout", m.dropout.to_string());
        put("model.discriminator_loss", loss_name(m.discriminator_loss));
        put("model.clip", m.clip.to_string());
        put("model.vocab_size", m.vocab_size.to_string());
        put("model.feature_dim", m.feature_dim.to_string());
        let s1 = &self.stage1;
        put("stage1.lambda1", s1.lambda1.to_string());
        put("stage1.learning_rate", s1.learning_rate.to_string());
        put("stage1.batch_size", s1.batch_size.to_string());
        put("stage1.n_critic", s1.n_critic.to_string());
        put("stage1.epochs", s1.epochs.to_string());
        put("stage1.patience", s1.patience.to_string());
        put("stage1.include_target_in_d", s1.include_target_in_d.to_string());
        let p = &self.proxy;
        put("proxy.c", p.c.to_string());
        put("proxy.max_epochs", p.max_epochs.to_string());
        put("proxy.heldout_fraction", p.heldout_fraction.to_string());
        put("proxy.feature_dim", p.feature_dim.to_string());
        let s = &self.sda;
        put("sda.lambda2", s.lambda2.to_string());
        put("sda.lambda_theta", s.lambda_theta.to_string());
        put("sda.iter1", s.iter1.to_string());
        put("sda.iter2", s.iter2.to_string());
        put("sda.n_critic", s.n_critic.to_string());
        put("sda.learning_rate", s.learning_rate.to_string());
        put("sda.batch_size", s.batch_size.to_string());
        put("sda.da_loss", loss_name(s.da_loss));
        let t = &self.toe;
        put("toe.delta0", t.delta0.to_string());
        put("toe.eta", t.eta.to_string());
        put("toe.n_min", t.n_min.to_string());
        put("toe.k_sources", t.k_sources.to_string());
        put("toe.finetune_iter", t.finetune_iter.to_string());
        put("toe.learning_rate", t.learning_rate.to_string());
        put("toe.batch_size", t.batch_size.to_string());
        put("toe.labeling", enum_name(&LABELINGS, t.labeling));
        put("toe.guard", enum_name(&GUARDS, t.guard));
        put("toe.max_sweeps", t.max_sweeps.to_string());
        out
    }
}

const MECHANISMS: [(&str, Mechanism); 4] = [
    ("sda", Mechanism::Sda),
    ("toe", Mechanism::Toe),
    ("both", Mechanism::Both),
    ("baselines", Mechanism::Baselines),
];
const ENCODERS: [(&str, Encoder); 2] = [("feedforward", Encoder::Feedforward), ("convolutional", Encoder::Convolutional)];
const LABELINGS: [(&str, Labeling); 3] = [
    ("average", Labeling::Average),
    ("unanimous", Labeling::Unanimous),
    ("min_prob", Labeling::MinProb),
];
const GUARDS: [(&str, LoopGuard); 2] = [("or", LoopGuard::Or), ("and", LoopGuard::And)];

fn ensure_unique(entries: &[(String, String)], key: &str) -> Result<()> {
    ensure_config(
        !entries.iter().any(|(k, _)| k == key),
        format!("key '{key}' is set more than once"),
    )
}

fn ensure_config(cond: bool, message: String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(message))
    }
}

fn type_error(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("key '{key}': expected {expected}, got '{value}'"))
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value.parse().map_err(|_| type_error(key, value, expected))
}

fn parse_enum<T: Copy>(key: &str, value: &str, table: &[(&str, T)]) -> Result<T> {
    table.iter().find(|(n, _)| *n == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        type_error(key, value, &format!("one of {}", names.join(", ")))
    })
}

fn enum_name<T: Copy + PartialEq>(table: &[(&str, T)], value: T) -> String {
    table.iter().find(|(_, v)| *v == value).map(|(n, _)| n.to_string()).unwrap_or_default()
}

fn parse_loss(key: &str, value: &str) -> Result<AdversarialLoss> {
    value.parse().map_err(|_| type_error(key, value, "one of nll, wasserstein"))
}

fn loss_name(loss: AdversarialLoss) -> String {
    match loss {
        AdversarialLoss::Nll => "nll",
        AdversarialLoss::Wasserstein => "wasserstein",
    }
    .into()
}
