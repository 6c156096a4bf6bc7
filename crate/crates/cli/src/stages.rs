//! Pipeline stages. Each stage reads its predecessor's artifacts from the
//! output directory, writes its own, and records digests in provenance.json.
//! A lock file serializes writers; artifacts are plain files so runs can be
//! inspected and diffed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use stancebench_core::corpus::{
    balanced_split, ingest_articles, load_source_manifest, verify_label_consistency, Article,
    Split, SplitSpec, Stance, UnknownDomainPolicy,
};
use stancebench_core::evalrep::{build_source_report, write_reports, SourceReport};
use stancebench_core::hash::fnv1a64_hex;
use stancebench_core::lda::{
    filter_by_topics, infer_dominant_topic, render_keyword_tsv, render_source_matrix_tsv, run_lda,
    source_topic_counts, top_keywords, LdaRunConfig, TopicField, TopicSelection, Vocabulary,
};
use stancebench_core::probe::{
    build_prompts, collect_run, load_subjects, HttpTextGenerator, RateLimiter, RetryPolicy,
};
use stancebench_core::stance::{
    evaluate_accuracy, featurize_article, load_embeddings, predict, save_model, train,
    BackendConfig, EmbeddingStore, FeatureVector, StanceModel, TrainConfig,
};
use stancebench_core::textprep::{
    detect_boilerplate, filter_by_length, load_stopwords, strip_boilerplate, tokenize, TokenStream,
};

use crate::config::EffectiveConfig;

#[derive(Debug, Error)]
pub enum StageError {
    #[error("stage {stage} failed: {cause}")]
    Failure { stage: &'static str, cause: String },
    #[error("stage {stage} needs an artifact that does not exist: {expected}")]
    MissingArtifact {
        stage: &'static str,
        expected: PathBuf,
    },
    #[error("output directory is locked by another run: {0}")]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fail<E: std::fmt::Display>(stage: &'static str) -> impl FnOnce(E) -> StageError {
    move |e| StageError::Failure {
        stage,
        cause: e.to_string(),
    }
}

/// Pipeline commands, in stage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Clean,
    Topics,
    Filter,
    Split,
    Train,
    Eval,
    Probe,
    Report,
    Pipeline,
}

impl Command {
    pub fn parse(name: &str) -> Option<Command> {
        Some(match name {
            "ingest" => Command::Ingest,
            "clean" => Command::Clean,
            "topics" => Command::Topics,
            "filter" => Command::Filter,
            "split" => Command::Split,
            "train" => Command::Train,
            "eval" => Command::Eval,
            "probe" => Command::Probe,
            "report" => Command::Report,
            "pipeline" => Command::Pipeline,
            _ => return None,
        })
    }
}

/// Removes the lock file when the run ends.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(output_dir: &Path) -> Result<RunLock, StageError> {
        fs::create_dir_all(output_dir)?;
        let path = output_dir.join("run.lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StageError::Locked(path))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Runs one command (or the whole pipeline) with the output directory locked.
pub fn run_command(
    command: Command,
    cfg: &EffectiveConfig,
    resume: bool,
) -> Result<(), StageError> {
    let _lock = RunLock::acquire(&cfg.paths.output_dir)?;
    match command {
        Command::Pipeline => {
            stage_ingest(cfg)?;
            stage_clean(cfg)?;
            stage_topics(cfg)?;
            stage_filter(cfg)?;
            stage_split(cfg)?;
            stage_train(cfg)?;
            stage_eval(cfg)?;
            if cfg.probe.is_some() {
                stage_probe(cfg, resume)?;
            } else {
                eprintln!("[probe] skipped: no probe configuration");
            }
            stage_report(cfg)
        }
        Command::Ingest => stage_ingest(cfg),
        Command::Clean => stage_clean(cfg),
        Command::Topics => stage_topics(cfg),
        Command::Filter => stage_filter(cfg),
        Command::Split => stage_split(cfg),
        Command::Train => stage_train(cfg),
        Command::Eval => stage_eval(cfg),
        Command::Probe => stage_probe(cfg, resume),
        Command::Report => stage_report(cfg),
    }
}

fn timed<T>(
    stage: &'static str,
    f: impl FnOnce() -> Result<T, StageError>,
) -> Result<T, StageError> {
    let start = Instant::now();
    let out = f()?;
    eprintln!("[{stage}] done in {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

fn stage_dir(cfg: &EffectiveConfig, stage: &str) -> PathBuf {
    cfg.paths.output_dir.join(stage)
}

fn write_articles(path: &Path, articles: &[Article]) -> Result<(), StageError> {
    let mut out = String::new();
    for a in articles {
        out.push_str(&serde_json::to_string(a).expect("article serializes"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_articles(stage: &'static str, path: &Path) -> Result<Vec<Article>, StageError> {
    if !path.exists() {
        return Err(StageError::MissingArtifact {
            stage,
            expected: path.to_path_buf(),
        });
    }
    let mut articles = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Article = serde_json::from_str(line).map_err(|e| StageError::Failure {
            stage,
            cause: format!("{}:{}: {e}", path.display(), i + 1),
        })?;
        articles.push(a);
    }
    Ok(articles)
}

fn write_summary<T: Serialize>(dir: &Path, summary: &T) -> Result<(), StageError> {
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(summary).expect("summary serializes"),
    )?;
    Ok(())
}

/// Records the digest of every artifact a stage produced.
fn record_provenance(
    cfg: &EffectiveConfig,
    stage: &str,
    files: &[PathBuf],
) -> Result<(), StageError> {
    #[derive(Default, Serialize, Deserialize)]
    struct Provenance {
        #[serde(default)]
        config: serde_json::Value,
        #[serde(default)]
        version: String,
        #[serde(default)]
        stages: BTreeMap<String, BTreeMap<String, String>>,
    }
    let path = cfg.paths.output_dir.join("provenance.json");
    let mut prov: Provenance = if path.exists() {
        serde_json::from_str(&fs::read_to_string(&path)?).unwrap_or_default()
    } else {
        Provenance::default()
    };
    prov.config = serde_json::to_value(cfg).expect("config serializes");
    prov.version = env!("CARGO_PKG_VERSION").to_string();
    let mut digests = BTreeMap::new();
    for file in files {
        let rel = file
            .strip_prefix(&cfg.paths.output_dir)
            .unwrap_or(file)
            .display()
            .to_string();
        digests.insert(rel, fnv1a64_hex(&fs::read(file)?));
    }
    prov.stages.insert(stage.to_string(), digests);
    fs::write(
        &path,
        serde_json::to_string_pretty(&prov).expect("provenance"),
    )?;
    Ok(())
}

pub fn stage_ingest(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("ingest", || {
        let dir = stage_dir(cfg, "ingest");
        fs::create_dir_all(&dir)?;
        let sources = load_source_manifest(&cfg.paths.manifest).map_err(fail("ingest"))?;
        let allowed: BTreeSet<&str> = cfg.languages.iter().map(String::as_str).collect();
        let (kept_sources, dropped_sources): (Vec<_>, Vec<_>) = sources
            .into_iter()
            .partition(|s| allowed.contains(s.language.as_str()));
        if !dropped_sources.is_empty() {
            eprintln!(
                "[ingest] {} manifest sources outside configured languages ignored",
                dropped_sources.len()
            );
        }
        let policy = match cfg.unknown_domain_policy.as_str() {
            "abort" => UnknownDomainPolicy::Abort,
            _ => UnknownDomainPolicy::SkipWithCount,
        };
        let outcome =
            ingest_articles(&cfg.paths.articles, &kept_sources, policy).map_err(fail("ingest"))?;
        let (articles, dropped_lang): (Vec<_>, Vec<_>) = outcome
            .articles
            .into_iter()
            .partition(|a| allowed.contains(a.language.as_str()));
        verify_label_consistency(&articles, &kept_sources).map_err(fail("ingest"))?;

        let articles_path = dir.join("articles.jsonl");
        write_articles(&articles_path, &articles)?;
        #[derive(Serialize)]
        struct Summary {
            articles: usize,
            sources: usize,
            sources_outside_languages: usize,
            articles_outside_languages: usize,
            skipped_unknown_domains: BTreeMap<String, usize>,
        }
        write_summary(
            &dir,
            &Summary {
                articles: articles.len(),
                sources: kept_sources.len(),
                sources_outside_languages: dropped_sources.len(),
                articles_outside_languages: dropped_lang.len(),
                skipped_unknown_domains: outcome.skipped_unknown,
            },
        )?;
        record_provenance(cfg, "ingest", &[articles_path, dir.join("summary.json")])
    })
}

pub fn stage_clean(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("clean", || {
        let dir = stage_dir(cfg, "clean");
        fs::create_dir_all(&dir)?;
        let input = stage_dir(cfg, "ingest").join("articles.jsonl");
        let articles = read_articles("clean", &input)?;

        // Length gate runs on the raw text, before boilerplate removal.
        let total = articles.len();
        let kept: Vec<Article> = articles.into_iter().filter(filter_by_length).collect();
        let dropped_by_length = total - kept.len();

        let mut by_source: BTreeMap<String, Vec<Article>> = BTreeMap::new();
        for a in kept {
            by_source.entry(a.source_id.clone()).or_default().push(a);
        }
        let mut cleaned = Vec::new();
        let mut boilerplate_lines: BTreeMap<String, usize> = BTreeMap::new();
        for (source_id, group) in by_source {
            let profile =
                detect_boilerplate(&group, cfg.clean.min_doc_fraction, cfg.clean.min_doc_count)
                    .map_err(fail("clean"))?;
            boilerplate_lines.insert(source_id, profile.lines.len());
            for a in &group {
                cleaned.push(strip_boilerplate(a, &profile).map_err(fail("clean"))?);
            }
        }
        cleaned.sort_by(|a, b| a.article_id.cmp(&b.article_id));

        let articles_path = dir.join("articles.jsonl");
        write_articles(&articles_path, &cleaned)?;
        #[derive(Serialize)]
        struct Summary {
            input_articles: usize,
            dropped_by_length: usize,
            articles: usize,
            boilerplate_lines_per_source: BTreeMap<String, usize>,
        }
        write_summary(
            &dir,
            &Summary {
                input_articles: total,
                dropped_by_length,
                articles: cleaned.len(),
                boilerplate_lines_per_source: boilerplate_lines,
            },
        )?;
        record_provenance(cfg, "clean", &[articles_path, dir.join("summary.json")])
    })
}

fn tokenized_clean_text(a: &Article, stopwords: &BTreeSet<String>) -> TokenStream {
    let text = a.clean_text.as_deref().unwrap_or(&a.raw_text);
    tokenize(text, &a.language, stopwords)
}

pub fn stage_topics(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("topics", || {
        let dir = stage_dir(cfg, "topics");
        fs::create_dir_all(&dir)?;
        let input = stage_dir(cfg, "clean").join("articles.jsonl");
        let mut articles = read_articles("topics", &input)?;

        let (k_coarse, k_fine) = (cfg.lda.k_list[0], cfg.lda.k_list[1]);
        let mut outputs = vec![];
        let mut unassigned: BTreeMap<String, usize> = BTreeMap::new();

        // One topic model per language and granularity, like one run per
        // language with 10 and another with 15 clusters.
        let languages: BTreeSet<String> = articles.iter().map(|a| a.language.clone()).collect();
        for language in &languages {
            let stopword_path = cfg.paths.stopwords_dir.join(format!("{language}.txt"));
            if !stopword_path.exists() {
                return Err(StageError::MissingArtifact {
                    stage: "topics",
                    expected: stopword_path,
                });
            }
            let stopwords = load_stopwords(&stopword_path).map_err(fail("topics"))?;
            let indices: Vec<usize> = articles
                .iter()
                .enumerate()
                .filter(|(_, a)| &a.language == language)
                .map(|(i, _)| i)
                .collect();
            let docs: Vec<TokenStream> = indices
                .iter()
                .map(|&i| tokenized_clean_text(&articles[i], &stopwords))
                .collect();
            let vocab = Vocabulary::build(&docs, cfg.lda.min_doc_freq).map_err(fail("topics"))?;

            let lang_dir = dir.join(language);
            fs::create_dir_all(&lang_dir)?;
            for (slot, k) in [(TopicField::Coarse, k_coarse), (TopicField::Fine, k_fine)] {
                // Each (language, K) run gets its own deterministic stream.
                let run_cfg = LdaRunConfig {
                    sweeps: cfg.lda.sweeps,
                    burn_in: cfg.lda.burn_in,
                    alpha_opt_interval: cfg.lda.alpha_opt_interval,
                    seed: cfg.lda.seed
                        ^ k as u64
                        ^ stancebench_core::hash::fnv1a64(language.as_bytes()),
                };
                let state = run_lda(&docs, &vocab, k, &run_cfg).map_err(fail("topics"))?;
                let model = state.to_model();
                for (&i, doc) in indices.iter().zip(&docs) {
                    let topic = match infer_dominant_topic(doc, &model, &vocab) {
                        Ok(t) => Some(t),
                        Err(_) => {
                            *unassigned.entry(language.clone()).or_insert(0) += 1;
                            None
                        }
                    };
                    match slot {
                        TopicField::Coarse => articles[i].topic_k10 = topic,
                        TopicField::Fine => articles[i].topic_k15 = topic,
                    }
                }
                let tag = match slot {
                    TopicField::Coarse => "k10",
                    TopicField::Fine => "k15",
                };
                let model_path = lang_dir.join(format!("model_{tag}.json"));
                stancebench_core::lda::save_model(&model, &vocab, &model_path)
                    .map_err(fail("topics"))?;
                let n_keywords = cfg.lda.keywords_per_topic.min(vocab.len());
                let report = top_keywords(&model, &vocab, n_keywords).map_err(fail("topics"))?;
                let keywords_path = lang_dir.join(format!("keywords_{tag}.tsv"));
                fs::write(&keywords_path, render_keyword_tsv(&report))?;
                outputs.push(model_path);
                outputs.push(keywords_path);
            }
            // Source-by-topic matrices over this language's articles.
            let lang_articles: Vec<Article> =
                indices.iter().map(|&i| articles[i].clone()).collect();
            for (field, k, tag) in [
                (TopicField::Coarse, k_coarse, "k10"),
                (TopicField::Fine, k_fine, "k15"),
            ] {
                let counts = source_topic_counts(&lang_articles, k, field);
                let path = lang_dir.join(format!("source_topics_{tag}.tsv"));
                fs::write(&path, render_source_matrix_tsv(&counts, k))?;
                outputs.push(path);
            }
        }

        // Articles destined for training pools must carry both assignments;
        // held-out test sources pass through regardless.
        let before = articles.len();
        let articles: Vec<Article> = articles
            .into_iter()
            .filter(|a| {
                cfg.split.test_source_ids.contains(&a.source_id)
                    || (a.topic_k10.is_some() && a.topic_k15.is_some())
            })
            .collect();
        let dropped_unassignable = before - articles.len();

        let articles_path = dir.join("articles.jsonl");
        write_articles(&articles_path, &articles)?;
        outputs.push(articles_path);
        #[derive(Serialize)]
        struct Summary {
            articles: usize,
            dropped_unassignable: usize,
            inference_failures_per_language: BTreeMap<String, usize>,
            k_coarse: usize,
            k_fine: usize,
            sweeps: u64,
            burn_in: u64,
            alpha_opt_interval: u64,
        }
        write_summary(
            &dir,
            &Summary {
                articles: articles.len(),
                dropped_unassignable,
                inference_failures_per_language: unassigned,
                k_coarse,
                k_fine,
                sweeps: cfg.lda.sweeps,
                burn_in: cfg.lda.burn_in,
                alpha_opt_interval: cfg.lda.alpha_opt_interval,
            },
        )?;
        outputs.push(dir.join("summary.json"));
        record_provenance(cfg, "topics", &outputs)
    })
}

/// The selection file is either one selection applied to every language or a
/// map from language to selection.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SelectionFile {
    Shared(TopicSelection),
    PerLanguage(BTreeMap<String, TopicSelection>),
}

pub fn stage_filter(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("filter", || {
        let dir = stage_dir(cfg, "filter");
        fs::create_dir_all(&dir)?;
        let input = stage_dir(cfg, "topics").join("articles.jsonl");
        let articles = read_articles("filter", &input)?;
        let selection: SelectionFile =
            serde_json::from_str(&fs::read_to_string(&cfg.selection_file)?)
                .map_err(fail("filter"))?;
        let (k_coarse, k_fine) = (cfg.lda.k_list[0], cfg.lda.k_list[1]);

        // Held-out test sources bypass the topic filter: topics select
        // training data, not evaluation data.
        let (test_articles, pool): (Vec<Article>, Vec<Article>) = articles
            .into_iter()
            .partition(|a| cfg.split.test_source_ids.contains(&a.source_id));

        let mut kept = Vec::new();
        let mut fractions: BTreeMap<String, f64> = BTreeMap::new();
        let languages: BTreeSet<String> = pool.iter().map(|a| a.language.clone()).collect();
        for language in &languages {
            let sel = match &selection {
                SelectionFile::Shared(s) => s,
                SelectionFile::PerLanguage(map) => {
                    map.get(language).ok_or_else(|| StageError::Failure {
                        stage: "filter",
                        cause: format!("selection file has no entry for language `{language}`"),
                    })?
                }
            };
            sel.validate(k_coarse, k_fine).map_err(fail("filter"))?;
            let group: Vec<Article> = pool
                .iter()
                .filter(|a| &a.language == language)
                .cloned()
                .collect();
            let (survivors, summary) = filter_by_topics(&group, sel).map_err(fail("filter"))?;
            fractions.insert(language.clone(), summary.filtered_out_fraction);
            kept.extend(survivors);
        }
        let pool_total: usize = pool.len();
        let kept_total = kept.len();
        kept.extend(test_articles.iter().cloned());
        kept.sort_by(|a, b| a.article_id.cmp(&b.article_id));

        let articles_path = dir.join("articles.jsonl");
        write_articles(&articles_path, &kept)?;
        #[derive(Serialize)]
        struct Summary {
            pool_articles: usize,
            kept_articles: usize,
            test_articles_bypassed: usize,
            filtered_out_fraction: f64,
            filtered_out_fraction_per_language: BTreeMap<String, f64>,
        }
        write_summary(
            &dir,
            &Summary {
                pool_articles: pool_total,
                kept_articles: kept_total,
                test_articles_bypassed: test_articles.len(),
                filtered_out_fraction: if pool_total == 0 {
                    0.0
                } else {
                    (pool_total - kept_total) as f64 / pool_total as f64
                },
                filtered_out_fraction_per_language: fractions,
            },
        )?;
        record_provenance(cfg, "filter", &[articles_path, dir.join("summary.json")])
    })
}

pub fn stage_split(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("split", || {
        let dir = stage_dir(cfg, "split");
        fs::create_dir_all(&dir)?;
        let input = stage_dir(cfg, "filter").join("articles.jsonl");
        let articles = read_articles("split", &input)?;

        let spec = SplitSpec {
            val_size_per_class: cfg.split.val_size_per_class,
            seed: cfg.split.seed,
            test_source_ids: cfg.split.test_source_ids.clone(),
        };
        let (train_set, val_set) = balanced_split(&articles, &spec).map_err(fail("split"))?;
        let test_set: Vec<Article> = articles
            .iter()
            .filter(|a| cfg.split.test_source_ids.contains(&a.source_id))
            .map(|a| {
                let mut a = a.clone();
                a.split = Split::Test;
                a
            })
            .collect();

        let train_path = dir.join("train.jsonl");
        let val_path = dir.join("val.jsonl");
        let test_path = dir.join("test.jsonl");
        write_articles(&train_path, &train_set)?;
        write_articles(&val_path, &val_set)?;
        write_articles(&test_path, &test_set)?;

        #[derive(Serialize)]
        struct Summary {
            train: usize,
            val: usize,
            test: usize,
            train_left: usize,
            train_right: usize,
        }
        write_summary(
            &dir,
            &Summary {
                train: train_set.len(),
                val: val_set.len(),
                test: test_set.len(),
                train_left: train_set.iter().filter(|a| a.label == Stance::Left).count(),
                train_right: train_set
                    .iter()
                    .filter(|a| a.label == Stance::Right)
                    .count(),
            },
        )?;
        record_provenance(
            cfg,
            "split",
            &[train_path, val_path, test_path, dir.join("summary.json")],
        )
    })
}

fn load_store(cfg: &EffectiveConfig) -> Result<Option<EmbeddingStore>, StageError> {
    match (&cfg.train.backend, &cfg.train.embeddings_file) {
        (BackendConfig::PrecomputedEmbedding { dim }, Some(path)) => {
            Ok(Some(load_embeddings(path, *dim).map_err(fail("train"))?))
        }
        (BackendConfig::PrecomputedEmbedding { .. }, None) => Err(StageError::Failure {
            stage: "train",
            cause: "precomputed backend requires train.embeddings_file".into(),
        }),
        _ => Ok(None),
    }
}

fn featurize_set(
    stage: &'static str,
    articles: &[Article],
    backend: &BackendConfig,
    store: Option<&EmbeddingStore>,
) -> Result<Vec<(FeatureVector, Stance)>, StageError> {
    articles
        .iter()
        .map(|a| {
            featurize_article(a, backend, store)
                .map(|f| (f, a.label))
                .map_err(fail(stage))
        })
        .collect()
}

pub fn stage_train(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("train", || {
        let dir = stage_dir(cfg, "train");
        fs::create_dir_all(&dir)?;
        let split_dir = stage_dir(cfg, "split");
        let train_articles = read_articles("train", &split_dir.join("train.jsonl"))?;
        let val_articles = read_articles("train", &split_dir.join("val.jsonl"))?;

        let store = load_store(cfg)?;
        let train_set =
            featurize_set("train", &train_articles, &cfg.train.backend, store.as_ref())?;
        let val_set = featurize_set("train", &val_articles, &cfg.train.backend, store.as_ref())?;

        let model = StanceModel::new(
            cfg.train.backend.clone(),
            cfg.train.embed_dim,
            cfg.train.seed,
        );
        let train_cfg = TrainConfig {
            batch_size: cfg.train.batch_size,
            peak_lr: cfg.train.peak_lr,
            epochs: cfg.train.epochs,
            warmup_fraction: cfg.train.warmup_fraction,
            weight_decay: cfg.train.weight_decay,
            seed: cfg.train.seed,
            eval_every: cfg.train.eval_every,
        };
        let trained = train(model, &train_set, &val_set, &train_cfg).map_err(fail("train"))?;

        let model_path = dir.join("model.bin");
        save_model(&trained, &model_path).map_err(fail("train"))?;
        #[derive(Serialize)]
        struct Summary {
            best_step: u64,
            best_val_accuracy: f64,
            final_val_accuracy: f64,
            train_examples: usize,
            val_examples: usize,
            seed: u64,
        }
        write_summary(
            &dir,
            &Summary {
                best_step: trained.metadata.best_step,
                best_val_accuracy: trained.metadata.best_val_accuracy,
                final_val_accuracy: evaluate_accuracy(&trained, &val_set),
                train_examples: train_set.len(),
                val_examples: val_set.len(),
                seed: cfg.train.seed,
            },
        )?;
        record_provenance(cfg, "train", &[model_path, dir.join("summary.json")])
    })
}

pub fn stage_eval(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("eval", || {
        let dir = stage_dir(cfg, "eval");
        fs::create_dir_all(&dir)?;
        let model_path = stage_dir(cfg, "train").join("model.bin");
        if !model_path.exists() {
            return Err(StageError::MissingArtifact {
                stage: "eval",
                expected: model_path,
            });
        }
        let test_path = stage_dir(cfg, "split").join("test.jsonl");
        let test_articles = read_articles("eval", &test_path)?;
        let model = stancebench_core::stance::load_model(&model_path).map_err(fail("eval"))?;
        let model_digest = fnv1a64_hex(&fs::read(&model_path)?);
        let store = load_store(cfg)?;

        let mut predictions_by_source: BTreeMap<String, Vec<stancebench_core::stance::Prediction>> =
            BTreeMap::new();
        let mut tsv = String::from("article_id\tstance\tprob_left\n");
        for article in &test_articles {
            let p = predict(&model, article, store.as_ref()).map_err(fail("eval"))?;
            tsv.push_str(&format!(
                "{}\t{}\t{}\n",
                p.article_id,
                p.stance.letter(),
                p.prob_left
            ));
            predictions_by_source
                .entry(article.source_id.clone())
                .or_default()
                .push(p);
        }
        let predictions_path = dir.join("predictions.tsv");
        fs::write(&predictions_path, tsv)?;

        let mut reports: Vec<SourceReport> = Vec::new();
        for (source_id, preds) in &predictions_by_source {
            let seed = cfg.eval.seed ^ stancebench_core::hash::fnv1a64(source_id.as_bytes());
            let report = build_source_report(
                source_id,
                preds,
                cfg.eval.n_boot,
                cfg.eval.level,
                seed,
                &model_digest,
                &cfg.run_date,
            )
            .map_err(fail("eval"))?;
            reports.push(report);
        }
        let reports_path = dir.join("source_reports.json");
        fs::write(
            &reports_path,
            serde_json::to_string_pretty(&reports).expect("reports serialize"),
        )?;
        record_provenance(cfg, "eval", &[predictions_path, reports_path])
    })
}

pub fn stage_report(cfg: &EffectiveConfig) -> Result<(), StageError> {
    timed("report", || {
        let dir = stage_dir(cfg, "report");
        let input = stage_dir(cfg, "eval").join("source_reports.json");
        if !input.exists() {
            return Err(StageError::MissingArtifact {
                stage: "report",
                expected: input,
            });
        }
        let reports: Vec<SourceReport> =
            serde_json::from_str(&fs::read_to_string(&input)?).map_err(fail("report"))?;
        write_reports(&dir, &reports).map_err(fail("report"))?;
        record_provenance(
            cfg,
            "report",
            &[
                dir.join("report.tsv"),
                dir.join("report.md"),
                dir.join("report.json"),
            ],
        )
    })
}

pub fn stage_probe(cfg: &EffectiveConfig, resume: bool) -> Result<(), StageError> {
    timed("probe", || {
        let probe = cfg.probe.as_ref().ok_or_else(|| StageError::Failure {
            stage: "probe",
            cause: "no probe configuration present".into(),
        })?;
        let subjects = load_subjects(&probe.subjects_file).map_err(fail("probe"))?;
        let jobs =
            build_prompts(&subjects, &probe.languages, &probe.templates).map_err(fail("probe"))?;
        let client =
            HttpTextGenerator::from_env(&probe.endpoint, Duration::from_secs(probe.timeout_secs));
        let retry = RetryPolicy {
            max_attempts: probe.max_attempts,
            ..RetryPolicy::default()
        };
        let mut rate = RateLimiter::new(probe.rate_per_sec);
        let runs_root = cfg.paths.output_dir.join("runs");
        let summary = collect_run(
            &runs_root,
            &probe.run_tag,
            &jobs,
            &client,
            &retry,
            &mut rate,
            resume,
            &probe.model,
        )
        .map_err(fail("probe"))?;
        eprintln!(
            "[probe] completed {} skipped {} failed {}",
            summary.completed,
            summary.skipped_existing,
            summary.failures.len()
        );
        let run_dir = runs_root.join(&probe.run_tag);
        record_provenance(cfg, "probe", &[run_dir.join("manifest.json")])
    })
}
