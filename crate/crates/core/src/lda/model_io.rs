//! Topic model persistence. JSON with an explicit format version: header
//! (K, V, beta, iteration, seed), alpha vector, topic-word table and the
//! vocabulary. Topic totals are recomputed on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LdaError, TopicModel, Vocabulary};

pub const LDA_MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    v: usize,
    beta: f64,
    iteration: u64,
    seed: u64,
    alpha: Vec<f64>,
    /// One row of word counts per topic.
    n_kw: Vec<Vec<u32>>,
    vocabulary: Vocabulary,
}

pub fn save_model(model: &TopicModel, vocab: &Vocabulary, path: &Path) -> Result<(), LdaError> {
    let rows: Vec<Vec<u32>> = (0..model.k)
        .map(|t| model.topic_word_counts(t).to_vec())
        .collect();
    let file = ModelFile {
        format: "stancebench-lda".to_string(),
        version: LDA_MODEL_FORMAT_VERSION,
        k: model.k,
        v: model.vocab_size,
        beta: model.beta,
        iteration: model.iteration,
        seed: model.seed,
        alpha: model.alpha.clone(),
        n_kw: rows,
        vocabulary: vocab.clone(),
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| LdaError::CorruptModel(format!("serialize: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(TopicModel, Vocabulary), LdaError> {
    let content = fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&content).map_err(|e| LdaError::CorruptModel(e.to_string()))?;
    if file.format != "stancebench-lda" {
        return Err(LdaError::CorruptModel(format!(
            "unexpected format tag `{}`",
            file.format
        )));
    }
    if file.version != LDA_MODEL_FORMAT_VERSION {
        return Err(LdaError::VersionMismatch {
            expected: LDA_MODEL_FORMAT_VERSION,
            got: file.version,
        });
    }
    if file.alpha.len() != file.k
        || file.n_kw.len() != file.k
        || file.n_kw.iter().any(|row| row.len() != file.v)
        || file.vocabulary.len() != file.v
    {
        return Err(LdaError::CorruptModel(
            "dimension mismatch between header and tables".to_string(),
        ));
    }
    let mut n_kw = Vec::with_capacity(file.k * file.v);
    let mut n_k = Vec::with_capacity(file.k);
    for row in &file.n_kw {
        n_k.push(row.iter().sum());
        n_kw.extend_from_slice(row);
    }
    Ok((
        TopicModel {
            k: file.k,
            vocab_size: file.v,
            alpha: file.alpha,
            beta: file.beta,
            n_kw,
            n_k,
            iteration: file.iteration,
            seed: file.seed,
        },
        file.vocabulary,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lda::{run_lda, LdaRunConfig};
    use crate::synth::planted_topic_corpus;

    #[test]
    fn model_round_trips() {
        let corpus = planted_topic_corpus(2, 8, 20, 15, 0, 51);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let cfg = LdaRunConfig {
            sweeps: 8,
            burn_in: 2,
            alpha_opt_interval: 4,
            seed: 6,
        };
        let state = run_lda(&corpus.docs, &vocab, 2, &cfg).unwrap();
        let model = state.to_model();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &vocab, &path).unwrap();
        let (loaded, loaded_vocab) = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded_vocab, vocab);

        // Saving the loaded model reproduces the file byte for byte.
        let path2 = dir.path().join("model2.json");
        save_model(&loaded, &loaded_vocab, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let corpus = planted_topic_corpus(2, 5, 10, 10, 0, 1);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let state = crate::lda::LdaState::init(&corpus.docs, &vocab, 2, 0).unwrap();
        save_model(&state.to_model(), &vocab, &path).unwrap();

        let mut content = fs::read_to_string(&path).unwrap();
        content = content.replace("\"version\":1", "\"version\":9");
        fs::write(&path, content).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(LdaError::VersionMismatch {
                expected: 1,
                got: 9
            })
        ));
    }

    #[test]
    fn corrupt_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(&path, "{\"format\": \"stancebench-lda\", \"version\": 1").unwrap();
        assert!(matches!(load_model(&path), Err(LdaError::CorruptModel(_))));
    }
}
