//! Run configuration: one JSON file drives every stage. Parsing fills
//! defaults, validates invariants, and echoes the effective configuration
//! into the output directory for provenance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use stancebench_core::evalrep::{DEFAULT_CI_LEVEL, DEFAULT_N_BOOT};
use stancebench_core::stance::{
    BackendConfig, EMBED_DIM_DEFAULT, FINETUNE_PEAK_LR, HASHED_PEAK_LR,
};
use stancebench_core::textprep::{DEFAULT_MIN_DOC_COUNT, DEFAULT_MIN_DOC_FRACTION};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}` points at a missing path: {path}")]
    MissingPath { field: &'static str, path: PathBuf },
    #[error("config field `{field}` invalid: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Paths {
    pub manifest: PathBuf,
    pub articles: PathBuf,
    pub stopwords_dir: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanConfig {
    pub min_doc_fraction: f64,
    pub min_doc_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Coarse and fine topic counts; articles carry one assignment per slot.
    pub k_list: Vec<usize>,
    pub sweeps: u64,
    pub burn_in: u64,
    pub alpha_opt_interval: u64,
    pub min_doc_freq: usize,
    pub keywords_per_topic: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub val_size_per_class: usize,
    pub seed: u64,
    pub test_source_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub backend: BackendConfig,
    pub embed_dim: usize,
    pub batch_size: usize,
    /// Defaults per backend when absent.
    pub peak_lr: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: u64,
    /// Required by the precomputed-embedding backend.
    pub embeddings_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub endpoint: String,
    pub run_tag: String,
    pub model: String,
    pub languages: Vec<String>,
    pub subjects_file: PathBuf,
    /// Language to template; defaults cover the four shipped languages.
    #[serde(default)]
    pub templates: BTreeMap<String, String>,
    pub rate_per_sec: f64,
    pub max_attempts: u32,
    pub timeout_secs: u64,
}

/// The validated configuration every stage consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub paths: Paths,
    pub languages: Vec<String>,
    pub unknown_domain_policy: String,
    pub clean: CleanConfig,
    pub lda: LdaConfig,
    pub selection_file: PathBuf,
    pub split: SplitConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
    /// Stamped into reports; comes from config so artifacts stay
    /// byte-reproducible.
    pub run_date: String,
}

#[derive(Debug, Deserialize)]
struct RawConfig {
    paths: RawPaths,
    languages: Option<Vec<String>>,
    unknown_domain_policy: Option<String>,
    clean: Option<RawClean>,
    lda: Option<RawLda>,
    selection_file: PathBuf,
    split: RawSplit,
    train: Option<RawTrain>,
    eval: Option<RawEval>,
    probe: Option<RawProbe>,
    run_date: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawPaths {
    manifest: PathBuf,
    articles: PathBuf,
    stopwords_dir: PathBuf,
    output_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
struct RawClean {
    min_doc_fraction: Option<f64>,
    min_doc_count: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct RawLda {
    k_list: Option<Vec<usize>>,
    sweeps: Option<u64>,
    burn_in: Option<u64>,
    alpha_opt_interval: Option<u64>,
    min_doc_freq: Option<usize>,
    keywords_per_topic: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct RawSplit {
    val_size_per_class: usize,
    seed: Option<u64>,
    test_source_ids: Option<BTreeSet<String>>,
}

#[derive(Debug, Default, Deserialize)]
struct RawTrain {
    backend: Option<BackendConfig>,
    embed_dim: Option<usize>,
    batch_size: Option<usize>,
    peak_lr: Option<f64>,
    epochs: Option<usize>,
    warmup_fraction: Option<f64>,
    weight_decay: Option<f64>,
    seed: Option<u64>,
    eval_every: Option<u64>,
    embeddings_file: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
struct RawEval {
    n_boot: Option<usize>,
    level: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct RawProbe {
    endpoint: String,
    run_tag: String,
    model: Option<String>,
    languages: Option<Vec<String>>,
    subjects_file: PathBuf,
    templates: Option<BTreeMap<String, String>>,
    rate_per_sec: Option<f64>,
    max_attempts: Option<u32>,
    timeout_secs: Option<u64>,
}

fn require_exists(field: &'static str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingPath {
            field,
            path: path.to_path_buf(),
        })
    }
}

/// Parses, fills defaults, checks invariants, and writes the effective
/// configuration into the output directory.
pub fn validate_config(path: &Path) -> Result<EffectiveConfig, ConfigError> {
    require_exists("config", path)?;
    let raw: RawConfig = serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| ConfigError::Parse(e.to_string()))?;

    require_exists("paths.manifest", &raw.paths.manifest)?;
    require_exists("paths.articles", &raw.paths.articles)?;
    require_exists("paths.stopwords_dir", &raw.paths.stopwords_dir)?;
    require_exists("selection_file", &raw.selection_file)?;

    let languages = raw.languages.unwrap_or_else(|| {
        vec![
            "en".to_string(),
            "de".to_string(),
            "es".to_string(),
            "ca".to_string(),
        ]
    });
    if languages.is_empty() {
        return Err(ConfigError::InvalidValue {
            field: "languages",
            reason: "must name at least one language".into(),
        });
    }
    let unknown_domain_policy = raw
        .unknown_domain_policy
        .unwrap_or_else(|| "skip".to_string());
    if !matches!(unknown_domain_policy.as_str(), "skip" | "abort") {
        return Err(ConfigError::InvalidValue {
            field: "unknown_domain_policy",
            reason: format!("expected `skip` or `abort`, got `{unknown_domain_policy}`"),
        });
    }

    let clean_raw = raw.clean.unwrap_or_default();
    let clean = CleanConfig {
        min_doc_fraction: clean_raw
            .min_doc_fraction
            .unwrap_or(DEFAULT_MIN_DOC_FRACTION),
        min_doc_count: clean_raw.min_doc_count.unwrap_or(DEFAULT_MIN_DOC_COUNT),
    };
    if !(clean.min_doc_fraction > 0.0 && clean.min_doc_fraction <= 1.0) {
        return Err(ConfigError::InvalidValue {
            field: "clean.min_doc_fraction",
            reason: format!("must be in (0, 1], got {}", clean.min_doc_fraction),
        });
    }
    if clean.min_doc_count == 0 {
        return Err(ConfigError::InvalidValue {
            field: "clean.min_doc_count",
            reason: "must be >= 1".into(),
        });
    }

    let lda_raw = raw.lda.unwrap_or_default();
    let lda = LdaConfig {
        k_list: lda_raw.k_list.unwrap_or_else(|| vec![10, 15]),
        sweeps: lda_raw.sweeps.unwrap_or(1000),
        burn_in: lda_raw.burn_in.unwrap_or(50),
        alpha_opt_interval: lda_raw.alpha_opt_interval.unwrap_or(10),
        min_doc_freq: lda_raw.min_doc_freq.unwrap_or(2),
        keywords_per_topic: lda_raw
            .keywords_per_topic
            .unwrap_or(stancebench_core::lda::KEYWORDS_PER_TOPIC),
        seed: lda_raw.seed.unwrap_or(7),
    };
    if lda.k_list.len() != 2 || lda.k_list.contains(&0) {
        return Err(ConfigError::InvalidValue {
            field: "lda.k_list",
            reason: format!(
                "exactly two positive topic counts (coarse, fine), got {:?}",
                lda.k_list
            ),
        });
    }
    if lda.sweeps == 0 {
        return Err(ConfigError::InvalidValue {
            field: "lda.sweeps",
            reason: "must be >= 1".into(),
        });
    }

    if raw.split.val_size_per_class == 0 {
        return Err(ConfigError::InvalidValue {
            field: "split.val_size_per_class",
            reason: "must be >= 1".into(),
        });
    }
    let split = SplitConfig {
        val_size_per_class: raw.split.val_size_per_class,
        seed: raw.split.seed.unwrap_or(11),
        test_source_ids: raw.split.test_source_ids.unwrap_or_default(),
    };

    let train_raw = raw.train.unwrap_or_default();
    let backend = train_raw
        .backend
        .unwrap_or_else(BackendConfig::hashed_default);
    let peak_lr = train_raw.peak_lr.unwrap_or(match backend {
        BackendConfig::HashedNgram { .. } => HASHED_PEAK_LR,
        BackendConfig::PrecomputedEmbedding { .. } => FINETUNE_PEAK_LR,
    });
    let train = TrainSection {
        embed_dim: train_raw.embed_dim.unwrap_or(EMBED_DIM_DEFAULT),
        batch_size: train_raw.batch_size.unwrap_or(8),
        peak_lr,
        epochs: train_raw.epochs.unwrap_or(4),
        warmup_fraction: train_raw.warmup_fraction.unwrap_or(0.06),
        weight_decay: train_raw.weight_decay.unwrap_or(0.01),
        seed: train_raw.seed.unwrap_or(13),
        eval_every: train_raw.eval_every.unwrap_or(200),
        embeddings_file: train_raw.embeddings_file,
        backend,
    };
    if train.batch_size == 0 {
        return Err(ConfigError::InvalidValue {
            field: "train.batch_size",
            reason: "must be >= 1".into(),
        });
    }
    if !(0.0..1.0).contains(&train.warmup_fraction) {
        return Err(ConfigError::InvalidValue {
            field: "train.warmup_fraction",
            reason: format!("must be in [0, 1), got {}", train.warmup_fraction),
        });
    }
    if train.epochs == 0 {
        return Err(ConfigError::InvalidValue {
            field: "train.epochs",
            reason: "must be >= 1".into(),
        });
    }
    if matches!(train.backend, BackendConfig::PrecomputedEmbedding { .. }) {
        match &train.embeddings_file {
            Some(p) => require_exists("train.embeddings_file", p)?,
            None => {
                return Err(ConfigError::InvalidValue {
                    field: "train.embeddings_file",
                    reason: "required by the precomputed-embedding backend".into(),
                })
            }
        }
    }

    let eval_raw = raw.eval.unwrap_or_default();
    let eval = EvalConfig {
        n_boot: eval_raw.n_boot.unwrap_or(DEFAULT_N_BOOT),
        level: eval_raw.level.unwrap_or(DEFAULT_CI_LEVEL),
        seed: eval_raw.seed.unwrap_or(17),
    };
    if eval.n_boot == 0 {
        return Err(ConfigError::InvalidValue {
            field: "eval.n_boot",
            reason: "must be >= 1".into(),
        });
    }
    if !(eval.level > 0.0 && eval.level < 1.0) {
        return Err(ConfigError::InvalidValue {
            field: "eval.level",
            reason: format!("must be in (0, 1), got {}", eval.level),
        });
    }

    let probe = match raw.probe {
        None => None,
        Some(p) => {
            require_exists("probe.subjects_file", &p.subjects_file)?;
            let mut templates = stancebench_core::probe::default_templates();
            if let Some(overrides) = p.templates {
                templates.extend(overrides);
            }
            let rate = p.rate_per_sec.unwrap_or(1.0);
            if rate <= 0.0 {
                return Err(ConfigError::InvalidValue {
                    field: "probe.rate_per_sec",
                    reason: "must be positive".into(),
                });
            }
            Some(ProbeConfig {
                endpoint: p.endpoint,
                run_tag: p.run_tag,
                model: p.model.unwrap_or_else(|| "unspecified".to_string()),
                languages: p.languages.unwrap_or_else(|| languages.clone()),
                subjects_file: p.subjects_file,
                templates,
                rate_per_sec: rate,
                max_attempts: p.max_attempts.unwrap_or(5),
                timeout_secs: p.timeout_secs.unwrap_or(60),
            })
        }
    };

    let effective = EffectiveConfig {
        paths: Paths {
            manifest: raw.paths.manifest,
            articles: raw.paths.articles,
            stopwords_dir: raw.paths.stopwords_dir,
            output_dir: raw.paths.output_dir,
        },
        languages,
        unknown_domain_policy,
        clean,
        lda,
        selection_file: raw.selection_file,
        split,
        train,
        eval,
        probe,
        run_date: raw.run_date.unwrap_or_else(|| "unspecified".to_string()),
    };

    fs::create_dir_all(&effective.paths.output_dir)?;
    fs::write(
        effective.paths.output_dir.join("effective_config.json"),
        serde_json::to_string_pretty(&effective).map_err(|e| ConfigError::Parse(e.to_string()))?,
    )?;
    Ok(effective)
}

impl EffectiveConfig {
    /// Applies the command-line seed override to every stochastic stage.
    pub fn override_seed(&mut self, seed: u64) {
        self.lda.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }
}
