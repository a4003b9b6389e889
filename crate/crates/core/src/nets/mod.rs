//! Network roles: shared and private feature extractors, the sentiment
//! classifier, domain discriminators, and parameter-space utilities.
//!
//! Everything is generic over [`Real`] so that the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod checkpoint;
mod extractor;
mod head;
mod loss;
mod ops;
mod optim;
mod params;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusMode, Example};
use crate::error::{ensure, Error, Result};

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use extractor::{EncoderConfig, Extractor, ExtractorCache};
pub use head::{
    concat_features, forward_classifier, forward_discriminator, DiscriminatorMode, Head, HeadCache, HeadConfig,
};
pub use loss::{critic_gap, domain_critic, nll, AdversarialLoss};
pub use ops::{log_softmax, Dropout};
pub use optim::Adam;
pub use params::{clip_weights, copy_parameters, param_l2_distance, param_l2_gradient, ParameterSet};

/// Floating-point scalar usable by every network routine.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

pub const DEFAULT_SHARED_DIM: usize = 128;
pub const DEFAULT_PRIVATE_DIM: usize = 64;
pub const DEFAULT_HEAD_HIDDEN: usize = 64;

/// Architecture of a shared-private model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub shared: EncoderConfig,
    pub private: EncoderConfig,
    /// Hidden width of the classifier and discriminator heads.
    pub head_hidden: usize,
    /// Dropout applied to extractor outputs during training.
    pub dropout: f64,
    /// Objective of the multinomial domain discriminator.
    pub discriminator_loss: AdversarialLoss,
    /// Weight-clipping bound used whenever a discriminator runs as a critic.
    pub clip: f64,
}

impl ModelConfig {
    /// Multilayer-perceptron extractors over `input_dim` bag-of-words features.
    pub fn feedforward(input_dim: usize) -> Self {
        Self::with_encoders(
            EncoderConfig::feedforward(input_dim, DEFAULT_SHARED_DIM),
            EncoderConfig::feedforward(input_dim, DEFAULT_PRIVATE_DIM),
        )
    }

    /// Convolutional extractors over token sequences.
    pub fn convolutional(vocab_size: usize) -> Self {
        Self::with_encoders(
            EncoderConfig::convolutional(vocab_size, DEFAULT_SHARED_DIM),
            EncoderConfig::convolutional(vocab_size, DEFAULT_PRIVATE_DIM),
        )
    }

    pub fn with_encoders(shared: EncoderConfig, private: EncoderConfig) -> Self {
        ModelConfig {
            shared,
            private,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            dropout: 0.4,
            discriminator_loss: AdversarialLoss::Nll,
            clip: 0.01,
        }
    }

    pub fn shared_dim(&self) -> usize {
        self.shared.output_dim()
    }

    pub fn private_dim(&self) -> usize {
        self.private.output_dim()
    }

    pub fn input_mode(&self) -> CorpusMode {
        self.shared.input_mode()
    }

    pub fn validate(&self) -> Result<()> {
        self.shared.validate()?;
        self.private.validate()?;
        ensure!(
            self.shared.input_mode() == self.private.input_mode(),
            "shared and private extractors expect different corpus modes"
        );
        ensure!(self.head_hidden > 0, "head_hidden must be positive");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)");
        ensure!(self.clip > 0.0, "clip must be positive");
        Ok(())
    }

    pub fn classifier_config(&self) -> HeadConfig {
        HeadConfig {
            input_dim: self.shared_dim() + self.private_dim(),
            hidden_dim: self.head_hidden,
            output_dim: 2,
        }
    }

    pub fn discriminator_config(&self, num_domains: usize) -> HeadConfig {
        HeadConfig {
            input_dim: self.shared_dim(),
            hidden_dim: self.head_hidden,
            output_dim: num_domains,
        }
    }
}

/// Which private representation accompanies the shared features.
#[derive(Clone, Copy)]
pub enum PrivateFeatures<'a, T: Real = f32> {
    Extractor(&'a Extractor<T>),
    /// All-zero private vector (shared features only).
    Zero,
}

/// Shared extractor, one private extractor per source, the sentiment
/// classifier and the multinomial domain discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedPrivateModel<T: Real = f32> {
    pub config: ModelConfig,
    /// Source domains, in private-extractor order.
    pub source_names: Vec<String>,
    /// Domains the discriminator classifies: the sources, then optionally the target.
    pub discriminator_domains: Vec<String>,
    pub shared: Extractor<T>,
    pub privates: Vec<Extractor<T>>,
    pub classifier: Head<T>,
    pub discriminator: Head<T>,
}

/// Gradient buffers mirroring a [`SharedPrivateModel`].
#[derive(Clone, Debug)]
pub struct ModelGrads<T: Real = f32> {
    pub shared: ParameterSet<T>,
    pub privates: Vec<ParameterSet<T>>,
    pub classifier: ParameterSet<T>,
    pub discriminator: ParameterSet<T>,
}

pub const MODEL_CHECKPOINT_KIND: &str = "shared_private_model";

/// Builds a freshly initialized model. With `target` given, the discriminator
/// gets one extra output for it.
pub fn init_model(
    config: &ModelConfig,
    source_names: &[String],
    target: Option<&str>,
    seed: u64,
) -> Result<SharedPrivateModel> {
    SharedPrivateModel::init(config, source_names, target, seed)
}

impl<T: Real> SharedPrivateModel<T> {
    pub fn init(config: &ModelConfig, source_names: &[String], target: Option<&str>, seed: u64) -> Result<Self> {
        config.validate()?;
        ensure!(!source_names.is_empty(), "at least one source domain is required");
        let mut seen = std::collections::HashSet::new();
        for name in source_names.iter().map(String::as_str).chain(target) {
            ensure!(seen.insert(name), "duplicate domain name '{name}'");
        }
        let mut domains = source_names.to_vec();
        domains.extend(target.map(str::to_string));
        ensure!(domains.len() >= 2, "the discriminator needs at least two domains");

        let mut rng = crate::seeded(seed);
        let shared = Extractor::init(config.shared.clone(), &mut rng)?;
        let privates = source_names
            .iter()
            .map(|_| Extractor::init(config.private.clone(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let classifier = Head::init(config.classifier_config(), &mut rng)?;
        let discriminator = Head::init(config.discriminator_config(domains.len()), &mut rng)?;
        Ok(SharedPrivateModel {
            config: config.clone(),
            source_names: source_names.to_vec(),
            discriminator_domains: domains,
            shared,
            privates,
            classifier,
            discriminator,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.source_names.len()
    }

    pub fn includes_target(&self) -> bool {
        self.discriminator_domains.len() > self.source_names.len()
    }

    pub fn source_index(&self, name: &str) -> Result<usize> {
        self.source_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Validation(format!("'{name}' is not a source domain of this model")))
    }

    pub fn private(&self, name: &str) -> Result<&Extractor<T>> {
        Ok(&self.privates[self.source_index(name)?])
    }

    pub fn cast<U: Real>(&self) -> SharedPrivateModel<U> {
        SharedPrivateModel {
            config: self.config.clone(),
            source_names: self.source_names.clone(),
            discriminator_domains: self.discriminator_domains.clone(),
            shared: self.shared.cast(),
            privates: self.privates.iter().map(Extractor::cast).collect(),
            classifier: self.classifier.cast(),
            discriminator: self.discriminator.cast(),
        }
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            shared: self.shared.params().zeros_like(),
            privates: self.privates.iter().map(|p| p.params().zeros_like()).collect(),
            classifier: self.classifier.params().zeros_like(),
            discriminator: self.discriminator.params().zeros_like(),
        }
    }

    /// Sentiment log-probabilities with dropout disabled.
    pub fn class_log_probs(&self, batch: &[&Example], private: PrivateFeatures<'_, T>) -> Result<Array2<T>> {
        let (shared, _) = self.shared.forward(batch)?;
        let private = match private {
            PrivateFeatures::Extractor(e) => {
                ensure!(
                    e.output_dim() == self.config.private_dim(),
                    "private extractor width {} does not match model ({})",
                    e.output_dim(),
                    self.config.private_dim()
                );
                e.forward(batch)?.0
            }
            PrivateFeatures::Zero => Array2::zeros((batch.len(), self.config.private_dim())),
        };
        forward_classifier(&self.classifier, shared.view(), private.view())
    }
}

impl SharedPrivateModel<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "source_names": self.source_names,
            "discriminator_domains": self.discriminator_domains,
        });
        let mut ckpt = Checkpoint::new(MODEL_CHECKPOINT_KIND, meta);
        ckpt.add_section("shared", self.shared.params());
        for (name, p) in self.source_names.iter().zip(&self.privates) {
            ckpt.add_section(&format!("private.{name}"), p.params());
        }
        ckpt.add_section("classifier", self.classifier.params());
        ckpt.add_section("discriminator", self.discriminator.params());
        ckpt
    }

    /// Restores a model; with `expected` given, the stored architecture must match it.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        ckpt.expect_kind(MODEL_CHECKPOINT_KIND)?;
        let config: ModelConfig = ckpt.meta_field("config")?;
        if let Some(expected) = expected {
            ensure!(
                *expected == config,
                "checkpoint architecture {config:?} does not match the requested {expected:?}"
            );
        }
        let source_names: Vec<String> = ckpt.meta_field("source_names")?;
        let discriminator_domains: Vec<String> = ckpt.meta_field("discriminator_domains")?;
        let shared = Extractor::from_parts(config.shared.clone(), ckpt.section("shared")?)?;
        let privates = source_names
            .iter()
            .map(|n| Extractor::from_parts(config.private.clone(), ckpt.section(&format!("private.{n}"))?))
            .collect::<Result<Vec<_>>>()?;
        let classifier = Head::from_parts(config.classifier_config(), ckpt.section("classifier")?)?;
        let discriminator = Head::from_parts(
            config.discriminator_config(discriminator_domains.len()),
            ckpt.section("discriminator")?,
        )?;
        Ok(SharedPrivateModel {
            config,
            source_names,
            discriminator_domains,
            shared,
            privates,
            classifier,
            discriminator,
        })
    }
}
