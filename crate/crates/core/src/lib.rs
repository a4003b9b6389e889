//! Two-stage multi-source unsupervised domain adaptation for sentiment
//! classification.
//!
//! Stage 1 trains an adversarial shared-private multi-task model over the
//! labeled source domains ([`pretrain`]). Stage 2 transfers knowledge to an
//! unlabeled target domain, either by adapting a private extractor from the
//! closest source ([`sda`]) or by pseudo-labeling with an ensemble of the
//! closest sources and finetuning ([`toe`]). Source closeness comes from the
//! proxy A-distance ([`divergence`]).

pub mod corpus;
pub mod divergence;
pub mod error;
pub mod nets;
pub mod pretrain;
pub mod runner;
pub mod sda;
pub mod toe;

pub use corpus::{Content, CorpusMode, DomainDataset, Example, SparseVector, Vocabulary};
pub use divergence::{DistanceMatrix, ProxyClassifierConfig};
pub use error::{Error, Result};
pub use nets::{EncoderConfig, ModelConfig, ParameterSet, SharedPrivateModel};
pub use pretrain::{Stage1Config, TrainLog};
pub use runner::{run_experiment, ExperimentConfig, ResultsTable};
pub use sda::{SdaConfig, SdaState};
pub use toe::{PseudoLabelSet, ToeConfig};

/// Random generator used throughout; seeded explicitly everywhere.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Deterministic generator for `seed`.
pub fn seeded(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
