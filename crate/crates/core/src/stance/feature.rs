//! Feature extraction: signed hashing of word n-grams and the reader for
//! precomputed encoder embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::Article;
use crate::hash::{fnv1a64, fnv1a64_with};
use crate::textprep;

use super::{BackendConfig, FeatureVector, StanceError};

/// Default bucket count for the hashed backend.
pub const HASHED_DIM_DEFAULT: usize = 1 << 20;

/// Offset basis of the independent sign hash.
const SIGN_OFFSET: u64 = crate::hash::FNV_OFFSET ^ 0x9e37_79b9_7f4a_7c15;

/// Hashes word 1..n-grams of a text into `dim` signed buckets and
/// L2-normalizes the result. Tokenization follows the shared rules with
/// stopwords kept. Empty text maps to the zero vector.
pub fn hashed_features(text: &str, dim: usize, ngram_orders: &[usize]) -> FeatureVector {
    let stream = textprep::tokenize(text, "", &Default::default());
    let tokens = &stream.tokens;
    let mut buckets: BTreeMap<u32, f64> = BTreeMap::new();
    for &order in ngram_orders {
        if order == 0 || tokens.len() < order {
            continue;
        }
        for window in tokens.windows(order) {
            let gram = window.join(" ");
            let bucket = (fnv1a64(gram.as_bytes()) % dim as u64) as u32;
            let sign = if fnv1a64_with(SIGN_OFFSET, gram.as_bytes()) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            *buckets.entry(bucket).or_insert(0.0) += sign;
        }
    }
    let mut entries: Vec<(u32, f64)> = buckets.into_iter().filter(|(_, v)| *v != 0.0).collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    FeatureVector { dim, entries }
}

/// Featurizes raw text under the given backend. The precomputed backend has
/// no text path and needs [`featurize_article`] with a store.
pub fn featurize(text: &str, backend: &BackendConfig) -> Result<FeatureVector, StanceError> {
    match backend {
        BackendConfig::HashedNgram { dim, ngram_orders } => {
            Ok(hashed_features(text, *dim, ngram_orders))
        }
        BackendConfig::PrecomputedEmbedding { .. } => {
            Err(StanceError::MissingEmbedding("<no article id>".to_string()))
        }
    }
}

/// Featurizes an article: hashed backends read the clean text (raw text when
/// cleaning has not run), the precomputed backend looks the article id up in
/// the store.
pub fn featurize_article(
    article: &Article,
    backend: &BackendConfig,
    store: Option<&EmbeddingStore>,
) -> Result<FeatureVector, StanceError> {
    match backend {
        BackendConfig::HashedNgram { dim, ngram_orders } => {
            let text = article.clean_text.as_deref().unwrap_or(&article.raw_text);
            Ok(hashed_features(text, *dim, ngram_orders))
        }
        BackendConfig::PrecomputedEmbedding { dim } => {
            let store =
                store.ok_or_else(|| StanceError::MissingEmbedding(article.article_id.clone()))?;
            store.get(&article.article_id, *dim)
        }
    }
}

/// In-memory map of article id to encoder vector.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    vectors: HashMap<String, Vec<f32>>,
    dim: usize,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn get(&self, article_id: &str, dim: usize) -> Result<FeatureVector, StanceError> {
        let vec = self
            .vectors
            .get(article_id)
            .ok_or_else(|| StanceError::MissingEmbedding(article_id.to_string()))?;
        if vec.len() != dim {
            return Err(StanceError::DimensionMismatch {
                expected: dim,
                got: vec.len(),
            });
        }
        Ok(FeatureVector {
            dim,
            entries: vec
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as u32, f64::from(*v)))
                .collect(),
        })
    }
}

/// Reads the embedding file format: repeated records of a length-prefixed
/// UTF-8 article id followed by `dim` little-endian 32-bit floats.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<EmbeddingStore, StanceError> {
    let bytes = fs::read(path)?;
    let mut vectors = HashMap::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            return Err(StanceError::BadEmbeddingFile(
                "truncated id length".to_string(),
            ));
        }
        let id_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if pos + id_len > bytes.len() {
            return Err(StanceError::BadEmbeddingFile("truncated id".to_string()));
        }
        let id = std::str::from_utf8(&bytes[pos..pos + id_len])
            .map_err(|e| StanceError::BadEmbeddingFile(e.to_string()))?
            .to_string();
        pos += id_len;
        if pos + 4 * dim > bytes.len() {
            return Err(StanceError::BadEmbeddingFile(format!(
                "truncated vector for {id}"
            )));
        }
        let mut vec = Vec::with_capacity(dim);
        for i in 0..dim {
            let off = pos + 4 * i;
            vec.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        pos += 4 * dim;
        vectors.insert(id, vec);
    }
    Ok(EmbeddingStore { vectors, dim })
}

/// Writes records in the embedding file format.
pub fn write_embeddings(
    path: &Path,
    records: &[(String, Vec<f32>)],
    dim: usize,
) -> Result<(), StanceError> {
    let mut file = fs::File::create(path)?;
    for (id, vec) in records {
        if vec.len() != dim {
            return Err(StanceError::DimensionMismatch {
                expected: dim,
                got: vec.len(),
            });
        }
        file.write_all(&(id.len() as u32).to_le_bytes())?;
        file.write_all(id.as_bytes())?;
        for v in vec {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}
