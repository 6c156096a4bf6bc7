//! The Left/Right article classifier: hashed n-gram features (or precomputed
//! encoder embeddings), a dropout/linear/tanh/dropout/linear head over a
//! learned projection, seeded training with decoupled weight decay and a
//! warmup/linear-decay schedule, and checkpoint selection by best validation
//! accuracy.

mod feature;
mod model;
mod model_io;
mod optim;
mod train;

pub use feature::{
    featurize, featurize_article, hashed_features, load_embeddings, write_embeddings,
    EmbeddingStore, HASHED_DIM_DEFAULT,
};
pub use model::{loss_and_gradients, Gradients, Mode, StanceModel, EMBED_DIM_DEFAULT};
pub use model_io::{load_model, save_model, STANCE_MODEL_FORMAT_VERSION};
pub use optim::{lr_at_step, AdamW};
pub use train::{evaluate_accuracy, predict, train, TrainConfig, FINETUNE_PEAK_LR, HASHED_PEAK_LR};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Stance;

#[derive(Debug, Error)]
pub enum StanceError {
    #[error("feature dimension {got} does not match model input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no stored embedding for article {0}")]
    MissingEmbedding(String),
    #[error("training loss is not finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("training and validation sets must be non-empty")]
    EmptyDataset,
    #[error("model file version {got}, expected {expected}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("embedding file malformed: {0}")]
    BadEmbeddingFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature extraction backend feeding the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Signed feature hashing of word n-grams, L2-normalized.
    HashedNgram {
        dim: usize,
        ngram_orders: Vec<usize>,
    },
    /// Vectors precomputed by an external encoder, keyed by article id.
    PrecomputedEmbedding { dim: usize },
}

impl BackendConfig {
    pub fn hashed_default() -> Self {
        BackendConfig::HashedNgram {
            dim: feature::HASHED_DIM_DEFAULT,
            ngram_orders: vec![1, 2],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BackendConfig::HashedNgram { dim, .. } => *dim,
            BackendConfig::PrecomputedEmbedding { dim } => *dim,
        }
    }
}

/// Sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// Classifier output for one article.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub article_id: String,
    pub stance: Stance,
    pub prob_left: f64,
}

impl Prediction {
    /// The tie at exactly 0.5 goes to Right; the aggregate verdict layer is
    /// where 50% splits are handled semantically.
    pub fn stance_from_prob(prob_left: f64) -> Stance {
        if prob_left > 0.5 {
            Stance::Left
        } else {
            Stance::Right
        }
    }
}
