//! Topic keyword reports, source-by-topic matrices, and the coarse/fine
//! union filter over articles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LdaError, TopicModel, TopicSelection, Vocabulary};
use crate::corpus::Article;

/// Which topic-assignment slot of an article to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopicField {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicKeywords {
    pub topic_id: usize,
    /// Fraction of corpus tokens assigned to this topic.
    pub share: f64,
    /// Highest-probability words, descending.
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopicReport {
    pub topics: Vec<TopicKeywords>,
    /// Articles per (source, topic).
    pub source_counts: BTreeMap<String, Vec<u32>>,
}

/// Per-topic keyword lists sorted by descending smoothed topic-word
/// probability, with each topic's corpus share.
pub fn top_keywords(
    model: &TopicModel,
    vocab: &Vocabulary,
    n: usize,
) -> Result<TopicReport, LdaError> {
    if n > vocab.len() {
        return Err(LdaError::KeywordCountExceedsVocab { n, v: vocab.len() });
    }
    let total_tokens: u64 = model.n_k.iter().map(|&c| u64::from(c)).sum();
    let mut topics = Vec::with_capacity(model.k);
    for t in 0..model.k {
        let mut scored: Vec<(usize, f64)> = (0..model.vocab_size)
            .map(|w| (w, model.topic_word_prob(t, w)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let keywords = scored
            .iter()
            .take(n)
            .map(|&(w, _)| vocab.token(w).to_string())
            .collect();
        topics.push(TopicKeywords {
            topic_id: t,
            share: if total_tokens == 0 {
                0.0
            } else {
                f64::from(model.n_k[t]) / total_tokens as f64
            },
            keywords,
        });
    }
    Ok(TopicReport {
        topics,
        source_counts: BTreeMap::new(),
    })
}

/// Counts articles per (source, topic) from one assignment slot.
pub fn source_topic_counts(
    articles: &[Article],
    k: usize,
    field: TopicField,
) -> BTreeMap<String, Vec<u32>> {
    let mut counts: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for a in articles {
        let topic = match field {
            TopicField::Coarse => a.topic_k10,
            TopicField::Fine => a.topic_k15,
        };
        if let Some(t) = topic {
            if t < k {
                counts
                    .entry(a.source_id.clone())
                    .or_insert_with(|| vec![0; k])[t] += 1;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub kept: usize,
    pub filtered_out_fraction: f64,
}

/// Union filter: an article survives when its coarse topic is selected OR its
/// fine topic is selected. Both assignments must be present.
pub fn filter_by_topics(
    articles: &[Article],
    sel: &TopicSelection,
) -> Result<(Vec<Article>, FilterSummary), LdaError> {
    let mut kept = Vec::new();
    for a in articles {
        let (coarse, fine) = match (a.topic_k10, a.topic_k15) {
            (Some(c), Some(f)) => (c, f),
            _ => return Err(LdaError::MissingTopicAssignment(a.article_id.clone())),
        };
        if sel.k10.contains(&coarse) || sel.k15.contains(&fine) {
            kept.push(a.clone());
        }
    }
    let total = articles.len();
    let summary = FilterSummary {
        total,
        kept: kept.len(),
        filtered_out_fraction: if total == 0 {
            0.0
        } else {
            (total - kept.len()) as f64 / total as f64
        },
    };
    Ok((kept, summary))
}

/// Keyword table: one row per topic with its share and space-joined keywords.
pub fn render_keyword_tsv(report: &TopicReport) -> String {
    let mut out = String::from("topic\tshare\tkeywords\n");
    for t in &report.topics {
        out.push_str(&format!(
            "{}\t{:.2}\t{}\n",
            t.topic_id,
            t.share,
            t.keywords.join(" ")
        ));
    }
    out
}

/// Source-by-topic matrix: one row per source, one column per topic id.
pub fn render_source_matrix_tsv(counts: &BTreeMap<String, Vec<u32>>, k: usize) -> String {
    let mut out = String::from("source");
    for t in 0..k {
        out.push_str(&format!("\t{t}"));
    }
    out.push('\n');
    for (source, row) in counts {
        out.push_str(source);
        for t in 0..k {
            out.push_str(&format!("\t{}", row.get(t).copied().unwrap_or(0)));
        }
        out.push('\n');
    }
    out
}
