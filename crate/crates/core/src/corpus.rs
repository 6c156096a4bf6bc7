//! Source manifest loading, article ingestion with distant-supervision
//! labels, and balanced train/validation splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{fnv1a64, fnv1a64_with};

/// The two stance classes. There is deliberately no neutral class anywhere in
/// the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stance {
    Left,
    Right,
}

impl Stance {
    pub fn parse(token: &str) -> Result<Self, CorpusError> {
        match token.trim() {
            "L" => Ok(Stance::Left),
            "R" => Ok(Stance::Right),
            other => Err(CorpusError::UnknownStance(other.to_string())),
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Stance::Left => "L",
            Stance::Right => "R",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Stance::Left => Stance::Right,
            Stance::Right => Stance::Left,
        }
    }
}

/// A rated media outlet supplying distant-supervision labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub name: String,
    pub url_domain: String,
    pub country: String,
    pub language: String,
    pub stance: Stance,
    pub rating_provider: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Val,
    Test,
}

/// One text with its inherited stance label, topic assignments and split tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub source_id: String,
    pub language: String,
    pub raw_text: String,
    pub clean_text: Option<String>,
    pub word_count: usize,
    pub label: Stance,
    pub topic_k10: Option<usize>,
    pub topic_k15: Option<usize>,
    pub split: Split,
}

/// Parameters of the balanced train/validation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_size_per_class: usize,
    pub seed: u64,
    pub test_source_ids: BTreeSet<String>,
}

/// What to do with article records whose domain is not in the manifest.
/// Crawled corpora are noisy, so skipping (with a count) is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownDomainPolicy {
    #[default]
    SkipWithCount,
    Abort,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest file not found: {0}")]
    MissingFile(String),
    #[error("manifest parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate url_domain in manifest: {0}")]
    DuplicateDomain(String),
    #[error("unknown stance token `{0}` (expected L or R)")]
    UnknownStance(String),
    #[error("article domain not in manifest: {0}")]
    UnknownSource(String),
    #[error("malformed article record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("not enough articles for language `{language}` class {stance:?}: have {available}, need {needed}")]
    InsufficientArticles {
        language: String,
        stance: Stance,
        available: usize,
        needed: usize,
    },
    #[error("label of article {article_id} does not match source {source_id} rating")]
    LabelMismatch {
        article_id: String,
        source_id: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const MANIFEST_HEADER: [&str; 7] = [
    "source_id",
    "name",
    "url_domain",
    "country",
    "language",
    "stance",
    "rating_provider",
];

/// Loads the source-rating manifest. TSV with a fixed header; stance is `L`
/// or `R`; url_domain must be unique.
pub fn load_source_manifest(path: &Path) -> Result<Vec<SourceRecord>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.display().to_string()));
    }
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut seen_domains: BTreeSet<String> = BTreeSet::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if idx == 0 {
            let header: Vec<&str> = line.split('\t').map(str::trim).collect();
            if header != MANIFEST_HEADER {
                return Err(CorpusError::ParseError {
                    line: line_no,
                    message: format!("unexpected header: {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != MANIFEST_HEADER.len() {
            return Err(CorpusError::ParseError {
                line: line_no,
                message: format!(
                    "expected {} fields, got {}",
                    MANIFEST_HEADER.len(),
                    fields.len()
                ),
            });
        }
        let domain = normalize_domain(fields[2]).map_err(|message| CorpusError::ParseError {
            line: line_no,
            message,
        })?;
        if !seen_domains.insert(domain.clone()) {
            return Err(CorpusError::DuplicateDomain(domain));
        }
        let source_id = fields[0].trim().to_string();
        if source_id.is_empty() || !seen_ids.insert(source_id.clone()) {
            return Err(CorpusError::ParseError {
                line: line_no,
                message: format!("missing or duplicate source_id `{source_id}`"),
            });
        }
        let language = fields[4].trim().to_lowercase();
        if language.is_empty() {
            return Err(CorpusError::ParseError {
                line: line_no,
                message: "empty language".to_string(),
            });
        }
        records.push(SourceRecord {
            source_id,
            name: fields[1].trim().to_string(),
            url_domain: domain,
            country: fields[3].trim().to_string(),
            language,
            stance: Stance::parse(fields[5])?,
            rating_provider: fields[6].trim().to_string(),
        });
    }
    Ok(records)
}

fn normalize_domain(raw: &str) -> Result<String, String> {
    let mut domain = raw.trim().to_lowercase();
    for scheme in ["https://", "http://"] {
        if let Some(rest) = domain.strip_prefix(scheme) {
            domain = rest.to_string();
        }
    }
    if domain.is_empty() {
        return Err("empty url_domain".to_string());
    }
    if domain.contains('/') || domain.chars().any(char::is_whitespace) {
        return Err(format!("url_domain must be a bare domain, got `{raw}`"));
    }
    Ok(domain)
}

/// Article record as found in the input JSONL files.
#[derive(Debug, Deserialize)]
struct RawArticle {
    #[serde(default)]
    id: Option<String>,
    domain: String,
    language: String,
    text: String,
    #[serde(default)]
    #[allow(dead_code)]
    date: Option<String>,
}

/// Result of an ingestion pass.
#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub articles: Vec<Article>,
    /// Occurrence count per unknown domain under the skip policy.
    pub skipped_unknown: BTreeMap<String, usize>,
}

/// Reads a JSONL article file and attaches distant-supervision labels: each
/// article inherits the stance rating of its source.
pub fn ingest_articles(
    path: &Path,
    sources: &[SourceRecord],
    policy: UnknownDomainPolicy,
) -> Result<IngestOutcome, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.display().to_string()));
    }
    let by_domain: HashMap<&str, &SourceRecord> =
        sources.iter().map(|s| (s.url_domain.as_str(), s)).collect();

    let reader = BufReader::new(File::open(path)?);
    let mut outcome = IngestOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let domain = raw.domain.trim().to_lowercase();
        let source = match by_domain.get(domain.as_str()) {
            Some(s) => *s,
            None => match policy {
                UnknownDomainPolicy::Abort => return Err(CorpusError::UnknownSource(domain)),
                UnknownDomainPolicy::SkipWithCount => {
                    *outcome.skipped_unknown.entry(domain).or_insert(0) += 1;
                    continue;
                }
            },
        };
        let article_id = raw.id.filter(|s| !s.is_empty()).unwrap_or_else(|| {
            let digest = fnv1a64(raw.text.as_bytes());
            format!(
                "{:016x}",
                fnv1a64_with(fnv1a64(source.url_domain.as_bytes()), &digest.to_le_bytes())
            )
        });
        outcome.articles.push(Article {
            article_id,
            source_id: source.source_id.clone(),
            language: raw.language.trim().to_lowercase(),
            word_count: raw.text.split_whitespace().count(),
            raw_text: raw.text,
            clean_text: None,
            label: source.stance,
            topic_k10: None,
            topic_k15: None,
            split: Split::Unassigned,
        });
    }
    Ok(outcome)
}

/// Checks the distant-supervision invariant: every article's label equals the
/// manifest stance of its source.
pub fn verify_label_consistency(
    articles: &[Article],
    sources: &[SourceRecord],
) -> Result<(), CorpusError> {
    let by_id: HashMap<&str, Stance> = sources
        .iter()
        .map(|s| (s.source_id.as_str(), s.stance))
        .collect();
    for a in articles {
        match by_id.get(a.source_id.as_str()) {
            Some(stance) if *stance == a.label => {}
            _ => {
                return Err(CorpusError::LabelMismatch {
                    article_id: a.article_id.clone(),
                    source_id: a.source_id.clone(),
                })
            }
        }
    }
    Ok(())
}

/// Draws a balanced train/validation split per language. Test sources are
/// excluded from the candidate pool; validation takes exactly
/// `val_size_per_class` articles per class and language; the remaining
/// candidates form the train set with the majority class downsampled to the
/// minority count. Sampling is a seeded uniform draw without replacement and
/// is fully deterministic.
pub fn balanced_split(
    articles: &[Article],
    spec: &SplitSpec,
) -> Result<(Vec<Article>, Vec<Article>), CorpusError> {
    // Candidate indices per (language, class), in input order.
    let mut pools: BTreeMap<(String, Stance), Vec<usize>> = BTreeMap::new();
    for (i, a) in articles.iter().enumerate() {
        if spec.test_source_ids.contains(&a.source_id) {
            continue;
        }
        pools
            .entry((a.language.clone(), a.label))
            .or_default()
            .push(i);
    }

    let languages: BTreeSet<String> = pools.keys().map(|(lang, _)| lang.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut val_idx: Vec<usize> = Vec::new();
    let mut train_idx: Vec<usize> = Vec::new();

    for language in &languages {
        let mut remaining: BTreeMap<Stance, Vec<usize>> = BTreeMap::new();
        for stance in [Stance::Left, Stance::Right] {
            let pool = pools
                .get(&(language.clone(), stance))
                .cloned()
                .unwrap_or_default();
            if pool.len() < spec.val_size_per_class {
                return Err(CorpusError::InsufficientArticles {
                    language: language.clone(),
                    stance,
                    available: pool.len(),
                    needed: spec.val_size_per_class,
                });
            }
            let (chosen, rest) =
                sample_without_replacement(pool, spec.val_size_per_class, &mut rng);
            val_idx.extend(chosen);
            remaining.insert(stance, rest);
        }
        let n_train = remaining.values().map(Vec::len).min().unwrap_or(0);
        for stance in [Stance::Left, Stance::Right] {
            let pool = remaining.remove(&stance).unwrap_or_default();
            let (chosen, _) = sample_without_replacement(pool, n_train, &mut rng);
            train_idx.extend(chosen);
        }
    }

    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let tag = |idx: &[usize], split: Split| -> Vec<Article> {
        idx.iter()
            .map(|&i| {
                let mut a = articles[i].clone();
                a.split = split;
                a
            })
            .collect()
    };
    Ok((tag(&train_idx, Split::Train), tag(&val_idx, Split::Val)))
}

/// Partial Fisher-Yates: uniformly chooses `n` items, returns (chosen, rest).
fn sample_without_replacement(
    mut pool: Vec<usize>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let n = n.min(pool.len());
    for i in 0..n {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let rest = pool.split_off(n);
    (pool, rest)
}
