//! Seeded synthetic corpora: planted topic mixtures for the sampler, planted
//! stance vocabularies for the classifier, and a small self-contained demo
//! corpus (manifest, articles, selection, stopwords) for end-to-end runs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Stance;
use crate::lda::{TopicModel, Vocabulary};
use crate::textprep::TokenStream;

/// Corpus drawn from K disjoint uniform word distributions, one per planted
/// topic; each document is sampled from exactly one of them.
#[derive(Debug, Clone)]
pub struct PlantedTopicCorpus {
    pub docs: Vec<TokenStream>,
    pub heldout: Vec<TokenStream>,
    pub topic_words: Vec<Vec<String>>,
    pub doc_topics: Vec<usize>,
}

pub fn planted_topic_corpus(
    n_topics: usize,
    words_per_topic: usize,
    n_docs: usize,
    doc_len: usize,
    n_heldout: usize,
    seed: u64,
) -> PlantedTopicCorpus {
    let topic_words: Vec<Vec<String>> = (0..n_topics)
        .map(|t| {
            (0..words_per_topic)
                .map(|w| format!("t{t}w{w:03}"))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |topic: usize, rng: &mut ChaCha8Rng| -> TokenStream {
        let words = &topic_words[topic];
        TokenStream {
            tokens: (0..doc_len)
                .map(|_| words[rng.random_range(0..words.len())].clone())
                .collect(),
            language: "en".to_string(),
        }
    };
    let mut docs = Vec::with_capacity(n_docs);
    let mut doc_topics = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let topic = d % n_topics;
        doc_topics.push(topic);
        docs.push(draw(topic, &mut rng));
    }
    let heldout = (0..n_heldout)
        .map(|d| draw(d % n_topics, &mut rng))
        .collect();
    PlantedTopicCorpus {
        docs,
        heldout,
        topic_words,
        doc_topics,
    }
}

impl PlantedTopicCorpus {
    /// The true word distribution of one planted topic over the vocabulary.
    pub fn planted_distribution(&self, topic: usize, vocab: &Vocabulary) -> Vec<f64> {
        let mut dist = vec![0.0; vocab.len()];
        let words = &self.topic_words[topic];
        let mass = 1.0 / words.len() as f64;
        for w in words {
            if let Some(id) = vocab.id(w) {
                dist[id] = mass;
            }
        }
        dist
    }

    /// Mean total-variation distance between the planted distributions and
    /// the model's topic-word distributions under greedy matching: the
    /// closest (planted, estimated) pair is matched first, then the next
    /// closest among the remaining, and so on.
    pub fn mean_tv_distance(&self, model: &TopicModel, vocab: &Vocabulary) -> f64 {
        let n = self.topic_words.len();
        let mut pair_tv = Vec::new();
        for planted in 0..n {
            let truth = self.planted_distribution(planted, vocab);
            for est in 0..model.k {
                let tv: f64 = 0.5
                    * (0..vocab.len())
                        .map(|w| (model.topic_word_prob(est, w) - truth[w]).abs())
                        .sum::<f64>();
                pair_tv.push((tv, planted, est));
            }
        }
        pair_tv.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut used_planted = vec![false; n];
        let mut used_est = vec![false; model.k];
        let mut total = 0.0;
        let mut matched = 0;
        for (tv, planted, est) in pair_tv {
            if !used_planted[planted] && !used_est[est] {
                used_planted[planted] = true;
                used_est[est] = true;
                total += tv;
                matched += 1;
                if matched == n.min(model.k) {
                    break;
                }
            }
        }
        total / matched.max(1) as f64
    }
}

/// Left/Right marker vocabularies used by the planted stance corpus. The two
/// sets are disjoint, so the classes are linearly separable.
pub fn stance_marker_words(stance: Stance, n: usize) -> Vec<String> {
    let prefix = match stance {
        Stance::Left => "lmark",
        Stance::Right => "rmark",
    };
    (0..n).map(|i| format!("{prefix}{i:02}")).collect()
}

/// Documents whose stance is encoded by which disjoint marker set they draw
/// from, diluted with shared filler words.
pub fn planted_stance_docs(n_docs: usize, seed: u64) -> Vec<(String, Stance)> {
    let left_words = stance_marker_words(Stance::Left, 25);
    let right_words = stance_marker_words(Stance::Right, 25);
    let filler: Vec<String> = (0..30).map(|i| format!("filler{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|d| {
            let stance = if d % 2 == 0 {
                Stance::Left
            } else {
                Stance::Right
            };
            let markers = match stance {
                Stance::Left => &left_words,
                Stance::Right => &right_words,
            };
            let len = rng.random_range(25..45);
            let tokens: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < 0.6 {
                        markers[rng.random_range(0..markers.len())].as_str()
                    } else {
                        filler[rng.random_range(0..filler.len())].as_str()
                    }
                })
                .collect();
            (tokens.join(" "), stance)
        })
        .collect()
}

/// Paths of a generated demo corpus.
#[derive(Debug, Clone)]
pub struct DemoCorpus {
    pub manifest: PathBuf,
    pub articles: PathBuf,
    pub selection: PathBuf,
    pub stopwords_dir: PathBuf,
    pub test_source_ids: Vec<String>,
}

/// Writes a small self-contained corpus: six rated sources (two of them held
/// out for testing), boilerplate footers, a couple of themes for the topic
/// stage, and stance markers tied to each source's rating. The selection file
/// keeps every topic id, so the union filter passes the corpus through.
pub fn write_demo_corpus(
    dir: &Path,
    seed: u64,
    k_coarse: usize,
    k_fine: usize,
) -> io::Result<DemoCorpus> {
    fs::create_dir_all(dir)?;
    let stopwords_dir = dir.join("stopwords");
    fs::create_dir_all(&stopwords_dir)?;
    fs::write(stopwords_dir.join("en.txt"), "the\na\nan\nof\nto\nand\n")?;

    // source_id, name, domain, stance, role
    let sources: [(&str, &str, &str, Stance, bool); 6] = [
        (
            "citizen-ledger",
            "Citizen Ledger",
            "citizenledger.example",
            Stance::Left,
            false,
        ),
        (
            "daily-progress",
            "Daily Progress",
            "dailyprogress.example",
            Stance::Left,
            false,
        ),
        (
            "liberty-post",
            "Liberty Post",
            "libertypost.example",
            Stance::Right,
            false,
        ),
        (
            "national-signal",
            "National Signal",
            "nationalsignal.example",
            Stance::Right,
            false,
        ),
        (
            "harbor-times",
            "Harbor Times",
            "harbortimes.example",
            Stance::Left,
            true,
        ),
        (
            "summit-courier",
            "Summit Courier",
            "summitcourier.example",
            Stance::Right,
            true,
        ),
    ];

    let manifest_path = dir.join("manifest.tsv");
    let mut manifest =
        String::from("source_id\tname\turl_domain\tcountry\tlanguage\tstance\trating_provider\n");
    for (id, name, domain, stance, _) in &sources {
        manifest.push_str(&format!(
            "{id}\t{name}\t{domain}\tDemo\ten\t{}\tsynthetic\n",
            stance.letter()
        ));
    }
    fs::write(&manifest_path, manifest)?;

    let theme_words: [Vec<String>; 2] = [
        (0..20).map(|i| format!("civic{i:02}")).collect(),
        (0..20).map(|i| format!("arena{i:02}")).collect(),
    ];
    let filler: Vec<String> = (0..30).map(|i| format!("filler{i:02}")).collect();
    let left_words = stance_marker_words(Stance::Left, 25);
    let right_words = stance_marker_words(Stance::Right, 25);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for (id, _, domain, stance, is_test) in &sources {
        let n_articles = if *is_test { 40 } else { 60 };
        let markers = match stance {
            Stance::Left => &left_words,
            Stance::Right => &right_words,
        };
        for a in 0..n_articles {
            // A couple of under-length articles per source exercise the
            // length gate.
            let body = if a < 2 {
                format!("too short {a}")
            } else {
                let theme = &theme_words[a % 2];
                let len = rng.random_range(30..55);
                let words: Vec<&str> = (0..len)
                    .map(|_| {
                        let roll = rng.random::<f64>();
                        if roll < 0.55 {
                            theme[rng.random_range(0..theme.len())].as_str()
                        } else if roll < 0.80 {
                            filler[rng.random_range(0..filler.len())].as_str()
                        } else {
                            markers[rng.random_range(0..markers.len())].as_str()
                        }
                    })
                    .collect();
                words.join(" ")
            };
            let text = format!("{body}\nvisit {id} newsletter signup\ncopyright {id} network");
            let record = serde_json::json!({
                "id": format!("{id}-{a:03}"),
                "domain": domain,
                "language": "en",
                "text": text,
            });
            lines.push(record.to_string());
        }
    }
    let articles_path = dir.join("articles.jsonl");
    fs::write(&articles_path, lines.join("\n") + "\n")?;

    let selection_path = dir.join("selection.json");
    let selection = serde_json::json!({
        "k10": (0..k_coarse).collect::<Vec<_>>(),
        "k15": (0..k_fine).collect::<Vec<_>>(),
    });
    fs::write(&selection_path, serde_json::to_string_pretty(&selection)?)?;

    Ok(DemoCorpus {
        manifest: manifest_path,
        articles: articles_path,
        selection: selection_path,
        stopwords_dir,
        test_source_ids: sources
            .iter()
            .filter(|(_, _, _, _, is_test)| *is_test)
            .map(|(id, ..)| id.to_string())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_corpus_is_deterministic_and_disjoint() {
        let c1 = planted_topic_corpus(3, 10, 30, 20, 5, 42);
        let c2 = planted_topic_corpus(3, 10, 30, 20, 5, 42);
        assert_eq!(c1.docs, c2.docs);
        assert_eq!(c1.heldout, c2.heldout);
        for a in 0..3 {
            for b in (a + 1)..3 {
                for w in &c1.topic_words[a] {
                    assert!(!c1.topic_words[b].contains(w));
                }
            }
        }
        // Every token of every doc comes from its planted topic's words.
        for (doc, &topic) in c1.docs.iter().zip(&c1.doc_topics) {
            for tok in &doc.tokens {
                assert!(c1.topic_words[topic].contains(tok));
            }
        }
    }

    #[test]
    fn stance_docs_use_disjoint_markers() {
        let docs = planted_stance_docs(50, 9);
        for (text, stance) in &docs {
            let wrong_prefix = match stance {
                Stance::Left => "rmark",
                Stance::Right => "lmark",
            };
            assert!(!text.contains(wrong_prefix), "{text}");
        }
        let lefts = docs.iter().filter(|(_, s)| *s == Stance::Left).count();
        assert_eq!(lefts, 25);
    }

    #[test]
    fn demo_corpus_files_exist_and_parse() {
        let dir = tempfile::tempdir().unwrap();
        let demo = write_demo_corpus(dir.path(), 7, 2, 3).unwrap();
        let sources = crate::corpus::load_source_manifest(&demo.manifest).unwrap();
        assert_eq!(sources.len(), 6);
        let outcome = crate::corpus::ingest_articles(
            &demo.articles,
            &sources,
            crate::corpus::UnknownDomainPolicy::Abort,
        )
        .unwrap();
        assert_eq!(outcome.articles.len(), 4 * 60 + 2 * 40);
        crate::corpus::verify_label_consistency(&outcome.articles, &sources).unwrap();
        let sel: crate::lda::TopicSelection =
            serde_json::from_str(&std::fs::read_to_string(&demo.selection).unwrap()).unwrap();
        sel.validate(2, 3).unwrap();
    }
}
