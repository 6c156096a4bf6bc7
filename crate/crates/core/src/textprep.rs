//! Text preparation shared by the topic and classifier stages: length
//! filtering, per-source boilerplate detection and removal, tokenization and
//! stopword handling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::Article;

/// Articles shorter than this many whitespace words are discarded.
pub const MIN_WORDS: usize = 20;
/// Articles longer than this many whitespace words are discarded.
pub const MAX_WORDS: usize = 2000;

/// Default fraction of a source's articles a line must appear in to be
/// considered boilerplate.
pub const DEFAULT_MIN_DOC_FRACTION: f64 = 0.30;
/// Default absolute article count a line must appear in to be considered
/// boilerplate.
pub const DEFAULT_MIN_DOC_COUNT: usize = 5;

#[derive(Debug, Error)]
pub enum TextPrepError {
    #[error("no articles supplied for boilerplate detection")]
    EmptyInput,
    #[error("boilerplate profile for source `{expected}` applied to article of source `{got}`")]
    SourceMismatch { expected: String, got: String },
    #[error("articles from multiple sources in one detection batch: `{0}` and `{1}`")]
    MixedSources(String, String),
    #[error("min_doc_fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("min_doc_count must be >= 1")]
    BadCount,
    #[error("stopword file {path}: {source}")]
    StopwordIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Repeated lines of one source, detected over that source's articles.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoilerplateProfile {
    pub source_id: String,
    pub lines: BTreeSet<String>,
    pub min_doc_fraction: f64,
    pub min_doc_count: usize,
}

/// Lowercased tokens of one text with stopwords removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<String>,
    pub language: String,
}

/// Length gate applied to the raw text, before any cleaning.
pub fn filter_by_length(article: &Article) -> bool {
    (MIN_WORDS..=MAX_WORDS).contains(&article.word_count)
}

/// Splits a text into normalized lines: trimmed, inner whitespace runs
/// collapsed to single spaces, empty lines dropped.
pub fn normalize_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| line.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|line| !line.is_empty())
        .collect()
}

/// Finds lines that repeat across one source's articles. A line is flagged
/// when it occurs in at least `min_doc_fraction` of the articles and in at
/// least `min_doc_count` of them (both inclusive). Presence is counted once
/// per article.
pub fn detect_boilerplate(
    articles: &[Article],
    min_doc_fraction: f64,
    min_doc_count: usize,
) -> Result<BoilerplateProfile, TextPrepError> {
    if articles.is_empty() {
        return Err(TextPrepError::EmptyInput);
    }
    if !(min_doc_fraction > 0.0 && min_doc_fraction <= 1.0) {
        return Err(TextPrepError::BadFraction(min_doc_fraction));
    }
    if min_doc_count == 0 {
        return Err(TextPrepError::BadCount);
    }
    let source_id = articles[0].source_id.clone();
    for a in articles {
        if a.source_id != source_id {
            return Err(TextPrepError::MixedSources(source_id, a.source_id.clone()));
        }
    }

    let mut doc_counts: BTreeMap<String, usize> = BTreeMap::new();
    for article in articles {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for line in normalize_lines(&article.raw_text) {
            seen.insert(line);
        }
        for line in seen {
            *doc_counts.entry(line).or_insert(0) += 1;
        }
    }

    let n_docs = articles.len();
    let lines = doc_counts
        .into_iter()
        .filter(|(_, count)| {
            *count >= min_doc_count && (*count as f64) >= min_doc_fraction * n_docs as f64
        })
        .map(|(line, _)| line)
        .collect();

    Ok(BoilerplateProfile {
        source_id,
        lines,
        min_doc_fraction,
        min_doc_count,
    })
}

/// Removes the profile's lines from an article, writing the result into
/// `clean_text`. Lines are matched after normalization, so the operation is
/// idempotent.
pub fn strip_boilerplate(
    article: &Article,
    profile: &BoilerplateProfile,
) -> Result<Article, TextPrepError> {
    if article.source_id != profile.source_id {
        return Err(TextPrepError::SourceMismatch {
            expected: profile.source_id.clone(),
            got: article.source_id.clone(),
        });
    }
    let kept: Vec<String> = normalize_lines(&article.raw_text)
        .into_iter()
        .filter(|line| !profile.lines.contains(line))
        .collect();
    let mut out = article.clone();
    out.clean_text = Some(kept.join("\n"));
    Ok(out)
}

/// Lowercases, keeps Unicode letter/digit runs, drops punctuation and the
/// given stopwords. Empty text yields an empty stream.
pub fn tokenize(text: &str, language: &str, stopwords: &BTreeSet<String>) -> TokenStream {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            if !stopwords.contains(&current) {
                tokens.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    if !current.is_empty() && !stopwords.contains(&current) {
        tokens.push(current);
    }
    TokenStream {
        tokens,
        language: language.to_string(),
    }
}

/// Loads a stopword file: one token per line, UTF-8, `#` comments allowed.
pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>, TextPrepError> {
    let content = fs::read_to_string(path).map_err(|source| TextPrepError::StopwordIo {
        path: path.display().to_string(),
        source,
    })?;
    Ok(content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect())
}
