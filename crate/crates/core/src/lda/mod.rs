//! Latent Dirichlet allocation with collapsed Gibbs sampling and periodic
//! asymmetric-alpha optimization, plus the topic reports and the coarse/fine
//! union filter used to pick politically loaded training articles.

mod gibbs;
mod model_io;
mod report;
mod special;

pub use gibbs::{heldout_log_likelihood, infer_dominant_topic, run_lda, LdaRunConfig};
pub use model_io::{load_model, save_model};
pub use report::{
    filter_by_topics, render_keyword_tsv, render_source_matrix_tsv, source_topic_counts,
    top_keywords, FilterSummary, TopicField, TopicKeywords, TopicReport,
};
pub use special::digamma;

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::TokenStream;

/// Dirichlet prior on topic mixtures starts symmetric at 5.0 / K and is then
/// optimized per topic.
pub const ALPHA_INIT_TOTAL: f64 = 5.0;
/// Symmetric Dirichlet prior on topic-word distributions.
pub const BETA_DEFAULT: f64 = 0.01;
/// Keywords listed per topic in reports.
pub const KEYWORDS_PER_TOPIC: usize = 30;
/// Gibbs sweeps used to fold a new document into a frozen model.
pub const INFERENCE_SWEEPS: u64 = 20;
/// Smallest value any optimized alpha component may reach.
pub const ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LdaError {
    #[error("corpus is empty after tokenization")]
    EmptyCorpus,
    #[error("topic count must be >= 1, got {0}")]
    BadTopicCount(usize),
    #[error("document has no in-vocabulary tokens")]
    EmptyDocument,
    #[error("article {0} is missing a topic assignment")]
    MissingTopicAssignment(String),
    #[error("requested {n} keywords but vocabulary has {v} entries")]
    KeywordCountExceedsVocab { n: usize, v: usize },
    #[error("topic id {id} out of range for K={k}")]
    TopicIdOutOfRange { id: usize, k: usize },
    #[error("model file version {got}, expected {expected}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense token/id bijection with document frequencies. Ids are assigned in
/// lexicographic token order, so identical corpora produce identical files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
    doc_frequency: Vec<usize>,
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            tokens: Vec<String>,
            doc_frequency: Vec<usize>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.tokens.len() != raw.doc_frequency.len() {
            return Err(serde::de::Error::custom(
                "vocabulary tokens and doc_frequency lengths differ",
            ));
        }
        Ok(Vocabulary::from_parts(raw.tokens, raw.doc_frequency))
    }
}

impl Vocabulary {
    /// Builds the vocabulary from tokenized documents, dropping tokens whose
    /// document frequency is below `min_doc_freq`.
    pub fn build(docs: &[TokenStream], min_doc_freq: usize) -> Result<Self, LdaError> {
        if docs.is_empty() {
            return Err(LdaError::EmptyCorpus);
        }
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let mut seen: Vec<&str> = doc.tokens.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for tok in seen {
                *df.entry(tok).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = df
            .into_iter()
            .filter(|(_, c)| *c >= min_doc_freq.max(1))
            .collect();
        kept.sort_unstable_by(|a, b| a.0.cmp(b.0));
        if kept.is_empty() {
            return Err(LdaError::EmptyCorpus);
        }
        let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
        let doc_frequency: Vec<usize> = kept.iter().map(|(_, c)| *c).collect();
        Ok(Self::from_parts(tokens, doc_frequency))
    }

    pub(crate) fn from_parts(tokens: Vec<String>, doc_frequency: Vec<usize>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            ids,
            doc_frequency,
        }
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_frequency(&self, id: usize) -> usize {
        self.doc_frequency[id]
    }

    pub fn doc_frequencies(&self) -> &[usize] {
        &self.doc_frequency
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Maps a token stream to vocabulary ids, silently skipping
    /// out-of-vocabulary tokens.
    pub fn encode(&self, doc: &TokenStream) -> Vec<usize> {
        doc.tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

/// Collapsed-Gibbs sampler state: per-token assignments and the count tables
/// they imply.
#[derive(Debug, Clone)]
pub struct LdaState {
    pub k: usize,
    pub vocab_size: usize,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub iteration: u64,
    pub rng_seed: u64,
    docs: Vec<Vec<usize>>,
    z: Vec<Vec<usize>>,
    n_dk: Vec<u32>,
    n_kw: Vec<u32>,
    n_k: Vec<u32>,
    n_d: Vec<u32>,
}

impl LdaState {
    /// Initializes the sampler: every token gets a uniform-random topic from
    /// the seeded generator and the count tables are tallied from those
    /// assignments.
    pub fn init(
        docs: &[TokenStream],
        vocab: &Vocabulary,
        k: usize,
        seed: u64,
    ) -> Result<Self, LdaError> {
        if k < 1 {
            return Err(LdaError::BadTopicCount(k));
        }
        if docs.is_empty() {
            return Err(LdaError::EmptyCorpus);
        }
        let encoded: Vec<Vec<usize>> = docs.iter().map(|d| vocab.encode(d)).collect();
        if encoded.iter().all(Vec::is_empty) {
            return Err(LdaError::EmptyCorpus);
        }
        let v = vocab.len();
        let d_count = encoded.len();
        let mut state = LdaState {
            k,
            vocab_size: v,
            alpha: vec![ALPHA_INIT_TOTAL / k as f64; k],
            beta: BETA_DEFAULT,
            iteration: 0,
            rng_seed: seed,
            z: encoded.iter().map(|d| vec![0usize; d.len()]).collect(),
            docs: encoded,
            n_dk: vec![0; d_count * k],
            n_kw: vec![0; k * v],
            n_k: vec![0; k],
            n_d: vec![0; d_count],
        };
        let mut rng = stream_rng(seed, 0);
        for d in 0..state.docs.len() {
            for i in 0..state.docs[d].len() {
                let topic = rng.random_range(0..k);
                state.z[d][i] = topic;
                state.bump(d, i, topic, 1);
            }
        }
        Ok(state)
    }

    /// Rebuilds a sampler state from explicit token ids and assignments, for
    /// example when resuming from persisted assignments. Count tables are
    /// tallied from scratch.
    #[allow(clippy::too_many_arguments)]
    pub fn from_assignments(
        k: usize,
        vocab_size: usize,
        docs: Vec<Vec<usize>>,
        z: Vec<Vec<usize>>,
        alpha: Vec<f64>,
        beta: f64,
        seed: u64,
        iteration: u64,
    ) -> Result<Self, LdaError> {
        if k < 1 {
            return Err(LdaError::BadTopicCount(k));
        }
        if docs.is_empty() || docs.iter().all(Vec::is_empty) {
            return Err(LdaError::EmptyCorpus);
        }
        if docs.len() != z.len()
            || docs.iter().zip(&z).any(|(d, zd)| d.len() != zd.len())
            || alpha.len() != k
            || alpha.iter().any(|&a| a <= 0.0)
            || beta <= 0.0
        {
            return Err(LdaError::CorruptModel(
                "assignment shapes or priors inconsistent".to_string(),
            ));
        }
        if docs.iter().flatten().any(|&w| w >= vocab_size) || z.iter().flatten().any(|&t| t >= k) {
            return Err(LdaError::CorruptModel(
                "token or topic id out of range".to_string(),
            ));
        }
        let d_count = docs.len();
        let mut state = LdaState {
            k,
            vocab_size,
            alpha,
            beta,
            iteration,
            rng_seed: seed,
            docs,
            z: Vec::new(),
            n_dk: vec![0; d_count * k],
            n_kw: vec![0; k * vocab_size],
            n_k: vec![0; k],
            n_d: vec![0; d_count],
        };
        state.z = state.docs.iter().map(|d| vec![0usize; d.len()]).collect();
        for (d, zd) in z.into_iter().enumerate() {
            for (i, topic) in zd.into_iter().enumerate() {
                state.z[d][i] = topic;
                state.bump(d, i, topic, 1);
            }
        }
        Ok(state)
    }

    fn bump(&mut self, d: usize, i: usize, topic: usize, delta: i64) {
        let w = self.docs[d][i];
        let adj = |c: &mut u32| {
            *c = (*c as i64 + delta) as u32;
        };
        adj(&mut self.n_dk[d * self.k + topic]);
        adj(&mut self.n_kw[topic * self.vocab_size + w]);
        adj(&mut self.n_k[topic]);
        adj(&mut self.n_d[d]);
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.n_d.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn doc_topic_counts(&self, d: usize) -> &[u32] {
        &self.n_dk[d * self.k..(d + 1) * self.k]
    }

    pub fn topic_word_counts(&self, k: usize) -> &[u32] {
        &self.n_kw[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn topic_totals(&self) -> &[u32] {
        &self.n_k
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.n_d
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.z
    }

    pub fn encoded_docs(&self) -> &[Vec<usize>] {
        &self.docs
    }

    pub(crate) fn counts_mut(&mut self) -> CountsMut<'_> {
        (
            &self.docs,
            &mut self.z,
            &mut self.n_dk,
            &mut self.n_kw,
            &mut self.n_k,
            &mut self.n_d,
        )
    }

    /// Smoothed topic-word probability (n_kw + beta) / (n_k + V beta).
    pub fn topic_word_prob(&self, topic: usize, word: usize) -> f64 {
        (f64::from(self.n_kw[topic * self.vocab_size + word]) + self.beta)
            / (f64::from(self.n_k[topic]) + self.vocab_size as f64 * self.beta)
    }

    /// Recounts every table from the raw assignments and compares exactly.
    pub fn verify_counts(&self) -> Result<(), LdaError> {
        let mut n_dk = vec![0u32; self.docs.len() * self.k];
        let mut n_kw = vec![0u32; self.k * self.vocab_size];
        let mut n_k = vec![0u32; self.k];
        let mut n_d = vec![0u32; self.docs.len()];
        for (d, doc) in self.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let topic = self.z[d][i];
                n_dk[d * self.k + topic] += 1;
                n_kw[topic * self.vocab_size + w] += 1;
                n_k[topic] += 1;
                n_d[d] += 1;
            }
        }
        if n_dk != self.n_dk || n_kw != self.n_kw || n_k != self.n_k || n_d != self.n_d {
            return Err(LdaError::CorruptModel(
                "count tables disagree with a full recount of assignments".to_string(),
            ));
        }
        Ok(())
    }

    /// Projects the trainable state onto the frozen view used for inference,
    /// reporting and persistence.
    pub fn to_model(&self) -> TopicModel {
        TopicModel {
            k: self.k,
            vocab_size: self.vocab_size,
            alpha: self.alpha.clone(),
            beta: self.beta,
            n_kw: self.n_kw.clone(),
            n_k: self.n_k.clone(),
            iteration: self.iteration,
            seed: self.rng_seed,
        }
    }
}

#[cfg(test)]
impl LdaState {
    /// Replaces the assignments and retallies all counts. Test-only: lets
    /// tests construct exact count configurations.
    pub(crate) fn set_assignments_for_tests(&mut self, z: Vec<Vec<usize>>) {
        assert_eq!(z.len(), self.docs.len());
        self.z = z;
        self.n_dk.fill(0);
        self.n_kw.fill(0);
        self.n_k.fill(0);
        self.n_d.fill(0);
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let topic = self.z[d][i];
                self.bump(d, i, topic, 1);
            }
        }
    }

    /// Builds a state whose documents realize the given doc-topic counts,
    /// using one dedicated word per topic. Test-only.
    pub(crate) fn from_doc_topic_counts_for_tests(counts: &[[u32; 2]]) -> Self {
        let docs: Vec<Vec<usize>> = counts
            .iter()
            .map(|row| {
                let mut doc = Vec::new();
                for (t, &c) in row.iter().enumerate() {
                    doc.extend(std::iter::repeat_n(t, c as usize));
                }
                doc
            })
            .collect();
        let z = docs.clone();
        LdaState::from_assignments(2, 2, docs, z, vec![1.0; 2], BETA_DEFAULT, 0, 0)
            .expect("test state is well formed")
    }
}

/// Frozen topic-word statistics: everything fold-in inference and reporting
/// need, without per-document state.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub k: usize,
    pub vocab_size: usize,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub n_kw: Vec<u32>,
    pub n_k: Vec<u32>,
    pub iteration: u64,
    pub seed: u64,
}

impl TopicModel {
    pub fn topic_word_prob(&self, topic: usize, word: usize) -> f64 {
        (f64::from(self.n_kw[topic * self.vocab_size + word]) + self.beta)
            / (f64::from(self.n_k[topic]) + self.vocab_size as f64 * self.beta)
    }

    pub fn topic_word_counts(&self, topic: usize) -> &[u32] {
        &self.n_kw[topic * self.vocab_size..(topic + 1) * self.vocab_size]
    }
}

/// Topic ids (per granularity) whose articles are kept for training. Chosen
/// by a human after inspecting the keyword report; never auto-labeled.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSelection {
    #[serde(default)]
    pub k10: std::collections::BTreeSet<usize>,
    #[serde(default)]
    pub k15: std::collections::BTreeSet<usize>,
}

impl TopicSelection {
    pub fn validate(&self, k_coarse: usize, k_fine: usize) -> Result<(), LdaError> {
        for &id in &self.k10 {
            if id >= k_coarse {
                return Err(LdaError::TopicIdOutOfRange { id, k: k_coarse });
            }
        }
        for &id in &self.k15 {
            if id >= k_fine {
                return Err(LdaError::TopicIdOutOfRange { id, k: k_fine });
            }
        }
        Ok(())
    }
}

/// Borrowed mutable view of the sampler's tables: (docs, z, n_dk, n_kw, n_k, n_d).
pub(crate) type CountsMut<'a> = (
    &'a [Vec<usize>],
    &'a mut [Vec<usize>],
    &'a mut [u32],
    &'a mut [u32],
    &'a mut [u32],
    &'a mut [u32],
);

/// Seeded generator for one numbered pass, so a state re-created at any
/// iteration replays an identical trajectory.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(tokens: &[&str]) -> TokenStream {
        TokenStream {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            language: "en".to_string(),
        }
    }

    #[test]
    fn vocabulary_min_doc_freq() {
        let docs = vec![stream(&["a", "b"]), stream(&["b"])];
        let v2 = Vocabulary::build(&docs, 2).unwrap();
        assert_eq!(v2.len(), 1);
        assert_eq!(v2.token(0), "b");
        let v1 = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(v1.len(), 2);
        assert_eq!(v1.token(0), "a");
        assert_eq!(v1.token(1), "b");
        assert_eq!(v1.doc_frequency(1), 2);
    }

    #[test]
    fn vocabulary_ids_are_lexicographic_and_stable() {
        let docs = vec![stream(&["zeta", "alpha", "mid"]), stream(&["mid", "alpha"])];
        let v1 = Vocabulary::build(&docs, 1).unwrap();
        let v2 = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.tokens(), &["alpha", "mid", "zeta"]);
        assert_eq!(
            serde_json::to_string(&v1).unwrap(),
            serde_json::to_string(&v2).unwrap()
        );
    }

    #[test]
    fn vocabulary_empty_corpus() {
        assert!(matches!(
            Vocabulary::build(&[], 1),
            Err(LdaError::EmptyCorpus)
        ));
        let docs = vec![stream(&["a"])];
        assert!(matches!(
            Vocabulary::build(&docs, 5),
            Err(LdaError::EmptyCorpus)
        ));
    }

    #[test]
    fn init_single_topic_puts_all_mass_on_topic_zero() {
        let docs = vec![stream(&["a", "b", "a"]), stream(&["b", "c"])];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let state = LdaState::init(&docs, &vocab, 1, 7).unwrap();
        assert!(state.assignments().iter().flatten().all(|&z| z == 0));
        assert_eq!(state.topic_totals()[0], 5);
        state.verify_counts().unwrap();
    }

    #[test]
    fn init_counts_match_recount() {
        let docs = vec![
            stream(&["a", "b", "c", "a"]),
            stream(&["c", "d"]),
            stream(&["d", "d", "a"]),
        ];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let state = LdaState::init(&docs, &vocab, 4, 123).unwrap();
        state.verify_counts().unwrap();
        assert_eq!(state.total_tokens(), 9);
        assert_eq!(state.alpha, vec![ALPHA_INIT_TOTAL / 4.0; 4]);
        assert_eq!(state.beta, BETA_DEFAULT);
    }

    #[test]
    fn init_same_seed_same_assignments() {
        let docs = vec![stream(&["a", "b", "c", "d", "e", "f"]); 5];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let s1 = LdaState::init(&docs, &vocab, 3, 99).unwrap();
        let s2 = LdaState::init(&docs, &vocab, 3, 99).unwrap();
        assert_eq!(s1.assignments(), s2.assignments());
        let s3 = LdaState::init(&docs, &vocab, 3, 100).unwrap();
        assert_ne!(s1.assignments(), s3.assignments());
    }

    #[test]
    fn init_rejects_bad_inputs() {
        let docs = vec![stream(&["a"])];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        assert!(matches!(
            LdaState::init(&docs, &vocab, 0, 1),
            Err(LdaError::BadTopicCount(0))
        ));
        assert!(matches!(
            LdaState::init(&[], &vocab, 2, 1),
            Err(LdaError::EmptyCorpus)
        ));
        // Documents entirely out of vocabulary are an empty corpus.
        let oov = vec![stream(&["zzz"])];
        assert!(matches!(
            LdaState::init(&oov, &vocab, 2, 1),
            Err(LdaError::EmptyCorpus)
        ));
    }

    #[test]
    fn selection_validation() {
        let sel = TopicSelection {
            k10: [0, 9].into_iter().collect(),
            k15: [14].into_iter().collect(),
        };
        sel.validate(10, 15).unwrap();
        assert!(matches!(
            sel.validate(9, 15),
            Err(LdaError::TopicIdOutOfRange { id: 9, k: 9 })
        ));
    }

    #[test]
    fn selection_parses_spec_shaped_json() {
        let sel: TopicSelection =
            serde_json::from_str(r#"{"k10": [0,2,3,5,8], "k15": [1,2,5,6,7,8,9,10,11,13]}"#)
                .unwrap();
        assert_eq!(sel.k10.len(), 5);
        assert_eq!(sel.k15.len(), 10);
        sel.validate(10, 15).unwrap();
    }
}
