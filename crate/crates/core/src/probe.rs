//! Treat an instruction-following model as a media source: build the
//! multilingual subject battery, collect generations through a generic HTTP
//! text-generation endpoint with retry/backoff and rate limiting, persist
//! versioned runs, and record Political Compass questionnaire sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Substitution slot of the prompt templates.
pub const SUBJECT_SLOT: &str = "[SUBJECT]";

/// The Political Compass questionnaire has exactly 62 propositions.
pub const PC_PROPOSITION_COUNT: usize = 62;

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "STANCEBENCH_API_KEY";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("template must contain exactly one {SUBJECT_SLOT} slot: `{0}`")]
    BadTemplate(String),
    #[error("no template configured for language `{0}`")]
    MissingTemplate(String),
    #[error("subject {index} has no translation for language `{language}`")]
    MissingTranslation { index: usize, language: String },
    #[error("subject file invalid: {0}")]
    BadSubjectFile(String),
    #[error("authentication rejected by the endpoint")]
    Auth,
    #[error("retries exhausted after {attempts} attempts (last status: {last_status:?})")]
    ExhaustedRetries {
        attempts: u32,
        last_status: Option<u16>,
    },
    #[error("endpoint returned an empty generation")]
    EmptyResponse,
    #[error("request failed without retry: {0}")]
    RequestFailed(String),
    #[error("run `{0}` already exists (pass resume to continue it)")]
    RunExists(String),
    #[error("propositions file must contain {PC_PROPOSITION_COUNT} entries, found {0}")]
    PropositionCount(usize),
    #[error("incomplete questionnaire session: {0} answers")]
    IncompleteSession(usize),
    #[error("invalid answer token `{0}`")]
    InvalidAnswer(String),
    #[error("reported {axis} score {value} outside [-10, 10]")]
    ScoreOutOfRange { axis: &'static str, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed record in run file: {0}")]
    MalformedRun(String),
}

/// One battery subject with its translations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSubject {
    pub index: usize,
    pub text: BTreeMap<String, String>,
}

/// Loads the subject battery from TSV: header `index<TAB>lang...`, one row
/// per subject. Indices must be dense 1..=n and every cell non-empty.
pub fn load_subjects(path: &Path) -> Result<Vec<PromptSubject>, ProbeError> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ProbeError::BadSubjectFile("empty file".into()))?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    if columns.first() != Some(&"index") || columns.len() < 2 {
        return Err(ProbeError::BadSubjectFile(format!(
            "header must start with `index` and name at least one language, got {header:?}"
        )));
    }
    let languages: Vec<String> = columns[1..].iter().map(|c| c.to_lowercase()).collect();
    let mut subjects = Vec::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(ProbeError::BadSubjectFile(format!(
                "line {}: expected {} fields, got {}",
                line_no + 1,
                columns.len(),
                fields.len()
            )));
        }
        let index: usize = fields[0].trim().parse().map_err(|_| {
            ProbeError::BadSubjectFile(format!("line {}: bad index `{}`", line_no + 1, fields[0]))
        })?;
        let mut text = BTreeMap::new();
        for (lang, value) in languages.iter().zip(&fields[1..]) {
            let value = value.trim();
            if value.is_empty() {
                return Err(ProbeError::BadSubjectFile(format!(
                    "subject {index}: empty translation for `{lang}`"
                )));
            }
            text.insert(lang.clone(), value.to_string());
        }
        subjects.push(PromptSubject { index, text });
    }
    subjects.sort_by_key(|s| s.index);
    let indices: BTreeSet<usize> = subjects.iter().map(|s| s.index).collect();
    if indices.len() != subjects.len()
        || subjects.first().map(|s| s.index) != Some(1)
        || subjects.last().map(|s| s.index) != Some(subjects.len())
    {
        return Err(ProbeError::BadSubjectFile(
            "subject indices must be unique and dense from 1".into(),
        ));
    }
    Ok(subjects)
}

/// The default prompt template per language.
pub fn default_templates() -> BTreeMap<String, String> {
    [
        ("en", "Write a newspaper article on [SUBJECT]"),
        ("de", "Schreibe einen Zeitungsartikel über [SUBJECT]"),
        ("es", "Escribe un artículo de periódico sobre [SUBJECT]"),
        ("ca", "Escriu un article de diari sobre [SUBJECT]"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// One generation request to issue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptJob {
    pub subject_index: usize,
    pub language: String,
    pub prompt: String,
}

/// Builds one job per (subject, language) pair, ordered by subject index and
/// then by the given language order. Each used template must contain exactly
/// one subject slot.
pub fn build_prompts(
    subjects: &[PromptSubject],
    languages: &[String],
    templates: &BTreeMap<String, String>,
) -> Result<Vec<PromptJob>, ProbeError> {
    for lang in languages {
        let template = templates
            .get(lang)
            .ok_or_else(|| ProbeError::MissingTemplate(lang.clone()))?;
        if template.matches(SUBJECT_SLOT).count() != 1 {
            return Err(ProbeError::BadTemplate(template.clone()));
        }
    }
    let mut jobs = Vec::with_capacity(subjects.len() * languages.len());
    for subject in subjects {
        for lang in languages {
            let text = subject
                .text
                .get(lang)
                .ok_or_else(|| ProbeError::MissingTranslation {
                    index: subject.index,
                    language: lang.clone(),
                })?;
            jobs.push(PromptJob {
                subject_index: subject.index,
                language: lang.clone(),
                prompt: templates[lang].replace(SUBJECT_SLOT, text),
            });
        }
    }
    Ok(jobs)
}

/// Client-level failure classification used by the retry loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenError {
    /// Credential rejected; never retried.
    Auth,
    /// Worth retrying: rate limits, server errors, transport failures.
    Transient {
        status: Option<u16>,
        message: String,
    },
    /// Permanent failure; not retried.
    Fatal {
        status: Option<u16>,
        message: String,
    },
}

/// A text-generation backend: one prompt in, one generation out.
pub trait TextGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GenError>;
}

/// Generic JSON-over-HTTP client: POST `{"prompt": ...}`, expect
/// `{"text": ...}`. Vendor-specific schemas adapt behind [`TextGenerator`].
pub struct HttpTextGenerator {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTextGenerator {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTextGenerator {
            agent,
            endpoint: endpoint.to_string(),
            api_key,
        }
    }

    /// Credential comes from the environment, never from config files.
    pub fn from_env(endpoint: &str, timeout: Duration) -> Self {
        Self::new(endpoint, std::env::var(API_KEY_ENV).ok(), timeout)
    }
}

impl TextGenerator for HttpTextGenerator {
    fn generate(&self, prompt: &str) -> Result<String, GenError> {
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        match request.send_json(serde_json::json!({ "prompt": prompt })) {
            Ok(mut response) => {
                let body: serde_json::Value =
                    response
                        .body_mut()
                        .read_json()
                        .map_err(|e| GenError::Transient {
                            status: None,
                            message: format!("bad response body: {e}"),
                        })?;
                match body.get("text").and_then(|t| t.as_str()) {
                    Some(text) => Ok(text.to_string()),
                    None => Err(GenError::Fatal {
                        status: None,
                        message: "response has no `text` field".into(),
                    }),
                }
            }
            Err(ureq::Error::StatusCode(code)) => match code {
                401 | 403 => Err(GenError::Auth),
                429 | 500..=599 => Err(GenError::Transient {
                    status: Some(code),
                    message: format!("http status {code}"),
                }),
                other => Err(GenError::Fatal {
                    status: Some(other),
                    message: format!("http status {other}"),
                }),
            },
            Err(e) => Err(GenError::Transient {
                status: None,
                message: e.to_string(),
            }),
        }
    }
}

/// Exponential backoff bounds for transient failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

/// Token bucket limiting request issue rate; burst capacity of one.
pub struct RateLimiter {
    rate_per_sec: f64,
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        RateLimiter {
            rate_per_sec: rate_per_sec.max(1e-6),
            tokens: 1.0,
            last: Instant::now(),
        }
    }

    pub fn acquire(&mut self) {
        self.refill();
        if self.tokens < 1.0 {
            let wait = (1.0 - self.tokens) / self.rate_per_sec;
            std::thread::sleep(Duration::from_secs_f64(wait));
            self.refill();
        }
        self.tokens = (self.tokens - 1.0).max(0.0);
    }

    fn refill(&mut self) {
        let now = Instant::now();
        self.tokens = (self.tokens
            + now.duration_since(self.last).as_secs_f64() * self.rate_per_sec)
            .min(1.0);
        self.last = now;
    }
}

/// One persisted generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub run_tag: String,
    pub subject_index: usize,
    pub language: String,
    pub prompt: String,
    pub response: String,
    pub model: String,
    pub timestamp: String,
    pub attempts: u32,
}

fn unix_now() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".to_string())
}

/// Issues one generation with exponential backoff on transient failures.
/// Authentication errors abort immediately and are never retried.
pub fn generate_article(
    job: &PromptJob,
    client: &dyn TextGenerator,
    retry: &RetryPolicy,
    run_tag: &str,
    model: &str,
) -> Result<GenerationRecord, ProbeError> {
    let mut attempts = 0u32;
    let mut delay = retry.base_delay;
    loop {
        attempts += 1;
        match client.generate(&job.prompt) {
            Ok(text) if text.is_empty() => return Err(ProbeError::EmptyResponse),
            Ok(text) => {
                return Ok(GenerationRecord {
                    run_tag: run_tag.to_string(),
                    subject_index: job.subject_index,
                    language: job.language.clone(),
                    prompt: job.prompt.clone(),
                    response: text,
                    model: model.to_string(),
                    timestamp: unix_now(),
                    attempts,
                })
            }
            Err(GenError::Auth) => return Err(ProbeError::Auth),
            Err(GenError::Fatal { status, message }) => {
                return Err(ProbeError::RequestFailed(format!(
                    "{message} (status {status:?})"
                )))
            }
            Err(GenError::Transient { status, .. }) => {
                if attempts >= retry.max_attempts {
                    return Err(ProbeError::ExhaustedRetries {
                        attempts,
                        last_status: status,
                    });
                }
                std::thread::sleep(delay);
                delay = (delay * 2).min(retry.max_delay);
            }
        }
    }
}

/// Static description of a collection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_tag: String,
    pub model: String,
    pub languages: Vec<String>,
    pub n_subjects: usize,
    pub started_unix: String,
}

/// Outcome counters of one `collect_run` invocation.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub completed: usize,
    pub skipped_existing: usize,
    pub requests_issued: usize,
    pub failures: Vec<(usize, String, String)>,
}

fn read_existing_records(path: &Path) -> Result<BTreeSet<(usize, String)>, ProbeError> {
    let mut done = BTreeSet::new();
    if !path.exists() {
        return Ok(done);
    }
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord = serde_json::from_str(line)
            .map_err(|e| ProbeError::MalformedRun(format!("line {}: {e}", i + 1)))?;
        done.insert((record.subject_index, record.language));
    }
    Ok(done)
}

/// Runs (or resumes) a collection: records persist append-only as JSONL, jobs
/// with an existing record are skipped, failures are recorded per job and the
/// run continues, but an authentication error aborts. Resuming a complete run
/// issues no requests.
#[allow(clippy::too_many_arguments)]
pub fn collect_run(
    root: &Path,
    run_tag: &str,
    jobs: &[PromptJob],
    client: &dyn TextGenerator,
    retry: &RetryPolicy,
    rate: &mut RateLimiter,
    resume: bool,
    model: &str,
) -> Result<RunSummary, ProbeError> {
    let dir = root.join(run_tag);
    if dir.exists() && !resume {
        return Err(ProbeError::RunExists(run_tag.to_string()));
    }
    fs::create_dir_all(&dir)?;
    let generations_path = dir.join("generations.jsonl");
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        let mut languages: Vec<String> = jobs.iter().map(|j| j.language.clone()).collect();
        languages.sort();
        languages.dedup();
        let manifest = RunManifest {
            run_tag: run_tag.to_string(),
            model: model.to_string(),
            languages,
            n_subjects: jobs
                .iter()
                .map(|j| j.subject_index)
                .collect::<BTreeSet<_>>()
                .len(),
            started_unix: unix_now(),
        };
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    }

    let done = read_existing_records(&generations_path)?;
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&generations_path)?;
    let mut summary = RunSummary::default();
    for job in jobs {
        if done.contains(&(job.subject_index, job.language.clone())) {
            summary.skipped_existing += 1;
            continue;
        }
        rate.acquire();
        summary.requests_issued += 1;
        match generate_article(job, client, retry, run_tag, model) {
            Ok(record) => {
                writeln!(file, "{}", serde_json::to_string(&record)?)?;
                file.flush()?;
                summary.completed += 1;
            }
            Err(ProbeError::Auth) => return Err(ProbeError::Auth),
            Err(e) => {
                summary
                    .failures
                    .push((job.subject_index, job.language.clone(), e.to_string()));
            }
        }
    }
    Ok(summary)
}

impl From<serde_json::Error> for ProbeError {
    fn from(e: serde_json::Error) -> Self {
        ProbeError::MalformedRun(e.to_string())
    }
}

/// Questionnaire answer scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcAnswer {
    StronglyAgree,
    Agree,
    Disagree,
    StronglyDisagree,
}

impl PcAnswer {
    pub fn parse(token: &str) -> Result<Self, ProbeError> {
        let normalized = token
            .to_lowercase()
            .replace(['-', '_'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        match normalized.as_str() {
            "strongly agree" | "stronglyagree" => Ok(PcAnswer::StronglyAgree),
            "agree" => Ok(PcAnswer::Agree),
            "disagree" => Ok(PcAnswer::Disagree),
            "strongly disagree" | "stronglydisagree" => Ok(PcAnswer::StronglyDisagree),
            _ => Err(ProbeError::InvalidAnswer(token.to_string())),
        }
    }
}

/// One recorded questionnaire session. The scoring formula is proprietary,
/// so the reported scores are operator-entered metadata; raw answers are kept
/// so any future scorer can run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcSession {
    pub propositions: Vec<String>,
    pub language: String,
    pub answers: Vec<PcAnswer>,
    pub reported_scores: Option<(f64, f64)>,
    pub model_tag: String,
    pub timestamp: String,
}

/// Loads the proposition list: one per line, exactly 62 entries.
pub fn load_propositions(path: &Path) -> Result<Vec<String>, ProbeError> {
    let content = fs::read_to_string(path)?;
    let props: Vec<String> = content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if props.len() != PC_PROPOSITION_COUNT {
        return Err(ProbeError::PropositionCount(props.len()));
    }
    Ok(props)
}

/// Validates and assembles a questionnaire session.
pub fn record_pc_answers(
    propositions: &[String],
    language: &str,
    answer_tokens: &[String],
    reported_scores: Option<(f64, f64)>,
    model_tag: &str,
) -> Result<PcSession, ProbeError> {
    if propositions.len() != PC_PROPOSITION_COUNT {
        return Err(ProbeError::PropositionCount(propositions.len()));
    }
    if answer_tokens.len() != PC_PROPOSITION_COUNT {
        return Err(ProbeError::IncompleteSession(answer_tokens.len()));
    }
    let answers = answer_tokens
        .iter()
        .map(|t| PcAnswer::parse(t))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some((econ, social)) = reported_scores {
        if !(-10.0..=10.0).contains(&econ) {
            return Err(ProbeError::ScoreOutOfRange {
                axis: "economic",
                value: econ,
            });
        }
        if !(-10.0..=10.0).contains(&social) {
            return Err(ProbeError::ScoreOutOfRange {
                axis: "social",
                value: social,
            });
        }
    }
    Ok(PcSession {
        propositions: propositions.to_vec(),
        language: language.to_string(),
        answers,
        reported_scores,
        model_tag: model_tag.to_string(),
        timestamp: unix_now(),
    })
}

/// Appends a session to `pc_sessions.jsonl` in the run directory.
pub fn append_pc_session(run_dir: &Path, session: &PcSession) -> Result<PathBuf, ProbeError> {
    fs::create_dir_all(run_dir)?;
    let path = run_dir.join("pc_sessions.jsonl");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)?;
    writeln!(file, "{}", serde_json::to_string(session)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;
    use std::collections::VecDeque;

    fn subjects(n: usize) -> Vec<PromptSubject> {
        (1..=n)
            .map(|i| PromptSubject {
                index: i,
                text: [
                    ("en".to_string(), format!("subject {i}")),
                    ("de".to_string(), format!("thema {i}")),
                ]
                .into_iter()
                .collect(),
            })
            .collect()
    }

    struct ScriptedClient {
        script: RefCell<VecDeque<Result<String, GenError>>>,
        calls: RefCell<usize>,
        fallback: Result<String, GenError>,
    }

    impl ScriptedClient {
        fn new(script: Vec<Result<String, GenError>>) -> Self {
            ScriptedClient {
                script: RefCell::new(script.into()),
                calls: RefCell::new(0),
                fallback: Ok("generated text".to_string()),
            }
        }

        fn calls(&self) -> usize {
            *self.calls.borrow()
        }
    }

    impl TextGenerator for ScriptedClient {
        fn generate(&self, _prompt: &str) -> Result<String, GenError> {
            *self.calls.borrow_mut() += 1;
            self.script
                .borrow_mut()
                .pop_front()
                .unwrap_or_else(|| self.fallback.clone())
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(2),
        }
    }

    #[test]
    fn prompts_substitute_the_subject() {
        let subj = vec![PromptSubject {
            index: 4,
            text: [("en".to_string(), "housing prices".to_string())]
                .into_iter()
                .collect(),
        }];
        let jobs = build_prompts(&subj, &["en".to_string()], &default_templates()).unwrap();
        assert_eq!(jobs.len(), 1);
        assert_eq!(
            jobs[0].prompt,
            "Write a newspaper article on housing prices"
        );
    }

    #[test]
    fn job_count_is_subjects_times_languages() {
        let jobs = build_prompts(
            &subjects(101),
            &["en".to_string(), "de".to_string()],
            &default_templates(),
        )
        .unwrap();
        assert_eq!(jobs.len(), 202);
        // Ordered by subject index, then language order.
        assert_eq!(jobs[0].subject_index, 1);
        assert_eq!(jobs[0].language, "en");
        assert_eq!(jobs[1].subject_index, 1);
        assert_eq!(jobs[1].language, "de");
        assert_eq!(jobs[2].subject_index, 2);
    }

    #[test]
    fn empty_language_list_yields_no_jobs() {
        let jobs = build_prompts(&subjects(5), &[], &default_templates()).unwrap();
        assert!(jobs.is_empty());
    }

    #[test]
    fn bad_templates_rejected() {
        let mut templates = default_templates();
        templates.insert("en".to_string(), "No slot here".to_string());
        assert!(matches!(
            build_prompts(&subjects(1), &["en".to_string()], &templates),
            Err(ProbeError::BadTemplate(_))
        ));
        templates.insert(
            "en".to_string(),
            "Two [SUBJECT] slots [SUBJECT]".to_string(),
        );
        assert!(matches!(
            build_prompts(&subjects(1), &["en".to_string()], &templates),
            Err(ProbeError::BadTemplate(_))
        ));
    }

    #[test]
    fn prompts_are_pure_functions_of_inputs() {
        let a = build_prompts(
            &subjects(7),
            &["en".into(), "de".into()],
            &default_templates(),
        )
        .unwrap();
        let b = build_prompts(
            &subjects(7),
            &["en".into(), "de".into()],
            &default_templates(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    fn job() -> PromptJob {
        PromptJob {
            subject_index: 1,
            language: "en".to_string(),
            prompt: "Write a newspaper article on tests".to_string(),
        }
    }

    #[test]
    fn happy_path_records_one_attempt() {
        let client = ScriptedClient::new(vec![Ok("Lorem ipsum dolor".to_string())]);
        let record = generate_article(&job(), &client, &fast_retry(), "run-a", "mock-1").unwrap();
        assert_eq!(record.attempts, 1);
        assert_eq!(record.response, "Lorem ipsum dolor");
        assert_eq!(record.run_tag, "run-a");
        // The stored prompt is re-derivable from subject + language + template.
        assert_eq!(record.prompt, job().prompt);
    }

    #[test]
    fn transient_429_retries_until_success() {
        let transient = Err(GenError::Transient {
            status: Some(429),
            message: "rate limited".into(),
        });
        let client = ScriptedClient::new(vec![
            transient.clone(),
            transient,
            Ok("after backoff".to_string()),
        ]);
        let record = generate_article(&job(), &client, &fast_retry(), "r", "m").unwrap();
        assert_eq!(record.attempts, 3);
        assert_eq!(client.calls(), 3);
    }

    #[test]
    fn auth_error_never_retries() {
        let client = ScriptedClient::new(vec![Err(GenError::Auth)]);
        assert!(matches!(
            generate_article(&job(), &client, &fast_retry(), "r", "m"),
            Err(ProbeError::Auth)
        ));
        assert_eq!(client.calls(), 1);
    }

    #[test]
    fn retries_exhaust_with_last_status() {
        let transient = Err(GenError::Transient {
            status: Some(503),
            message: "unavailable".into(),
        });
        let client = ScriptedClient::new(vec![transient; 10]);
        match generate_article(&job(), &client, &fast_retry(), "r", "m") {
            Err(ProbeError::ExhaustedRetries {
                attempts: 5,
                last_status: Some(503),
            }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        assert_eq!(client.calls(), 5);
    }

    #[test]
    fn empty_generation_is_an_error() {
        let client = ScriptedClient::new(vec![Ok(String::new())]);
        assert!(matches!(
            generate_article(&job(), &client, &fast_retry(), "r", "m"),
            Err(ProbeError::EmptyResponse)
        ));
    }

    fn run_jobs(n_subjects: usize) -> Vec<PromptJob> {
        build_prompts(
            &subjects(n_subjects),
            &["en".to_string(), "de".to_string()],
            &default_templates(),
        )
        .unwrap()
    }

    #[test]
    fn collect_persists_all_records() {
        let dir = tempfile::tempdir().unwrap();
        let jobs = run_jobs(5);
        let client = ScriptedClient::new(vec![]);
        let mut rate = RateLimiter::new(1e6);
        let summary = collect_run(
            dir.path(),
            "v-test",
            &jobs,
            &client,
            &fast_retry(),
            &mut rate,
            false,
            "mock",
        )
        .unwrap();
        assert_eq!(summary.completed, 10);
        assert_eq!(summary.skipped_existing, 0);
        let content =
            fs::read_to_string(dir.path().join("v-test").join("generations.jsonl")).unwrap();
        assert_eq!(content.lines().count(), 10);
        assert!(dir.path().join("v-test").join("manifest.json").exists());
    }

    #[test]
    fn resume_skips_existing_and_is_idempotent_when_complete() {
        let dir = tempfile::tempdir().unwrap();
        let jobs = run_jobs(4);
        // First pass fails half the jobs with a fatal error.
        let mut script: Vec<Result<String, GenError>> = Vec::new();
        for i in 0..8 {
            if i % 2 == 0 {
                script.push(Ok(format!("text {i}")));
            } else {
                script.push(Err(GenError::Fatal {
                    status: Some(400),
                    message: "bad request".into(),
                }));
            }
        }
        let client = ScriptedClient::new(script);
        let mut rate = RateLimiter::new(1e6);
        let summary = collect_run(
            dir.path(),
            "v1",
            &jobs,
            &client,
            &fast_retry(),
            &mut rate,
            false,
            "mock",
        )
        .unwrap();
        assert_eq!(summary.completed, 4);
        assert_eq!(summary.failures.len(), 4);

        // Resume: only the missing four are attempted.
        let client2 = ScriptedClient::new(vec![]);
        let summary2 = collect_run(
            dir.path(),
            "v1",
            &jobs,
            &client2,
            &fast_retry(),
            &mut rate,
            true,
            "mock",
        )
        .unwrap();
        assert_eq!(summary2.skipped_existing, 4);
        assert_eq!(summary2.completed, 4);
        assert_eq!(client2.calls(), 4);

        // Resuming the now-complete run issues zero requests.
        let client3 = ScriptedClient::new(vec![]);
        let summary3 = collect_run(
            dir.path(),
            "v1",
            &jobs,
            &client3,
            &fast_retry(),
            &mut rate,
            true,
            "mock",
        )
        .unwrap();
        assert_eq!(client3.calls(), 0);
        assert_eq!(summary3.requests_issued, 0);
        assert_eq!(summary3.skipped_existing, 8);
    }

    #[test]
    fn duplicate_run_tag_without_resume_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let jobs = run_jobs(1);
        let client = ScriptedClient::new(vec![]);
        let mut rate = RateLimiter::new(1e6);
        collect_run(
            dir.path(),
            "dup",
            &jobs,
            &client,
            &fast_retry(),
            &mut rate,
            false,
            "mock",
        )
        .unwrap();
        assert!(matches!(
            collect_run(
                dir.path(),
                "dup",
                &jobs,
                &client,
                &fast_retry(),
                &mut rate,
                false,
                "mock"
            ),
            Err(ProbeError::RunExists(tag)) if tag == "dup"
        ));
    }

    #[test]
    fn auth_error_aborts_collection() {
        let dir = tempfile::tempdir().unwrap();
        let jobs = run_jobs(3);
        let client = ScriptedClient::new(vec![Ok("one".into()), Err(GenError::Auth)]);
        let mut rate = RateLimiter::new(1e6);
        assert!(matches!(
            collect_run(
                dir.path(),
                "abort",
                &jobs,
                &client,
                &fast_retry(),
                &mut rate,
                false,
                "mock"
            ),
            Err(ProbeError::Auth)
        ));
        assert_eq!(client.calls(), 2);
    }

    fn props() -> Vec<String> {
        (1..=PC_PROPOSITION_COUNT)
            .map(|i| format!("proposition {i}"))
            .collect()
    }

    #[test]
    fn complete_session_with_reported_scores() {
        let answers: Vec<String> = (0..62)
            .map(|i| {
                ["strongly agree", "agree", "disagree", "strongly disagree"][i % 4].to_string()
            })
            .collect();
        let session = record_pc_answers(
            &props(),
            "en",
            &answers,
            Some((-6.50, -4.77)),
            "surveyed-ilm",
        )
        .unwrap();
        assert_eq!(session.answers.len(), 62);
        assert_eq!(session.reported_scores, Some((-6.50, -4.77)));
        assert_eq!(session.answers[0], PcAnswer::StronglyAgree);
        assert_eq!(session.answers[3], PcAnswer::StronglyDisagree);

        let dir = tempfile::tempdir().unwrap();
        let path = append_pc_session(dir.path(), &session).unwrap();
        let line = fs::read_to_string(path).unwrap();
        let back: PcSession = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, session);
    }

    #[test]
    fn incomplete_session_rejected() {
        let answers: Vec<String> = vec!["agree".to_string(); 61];
        assert!(matches!(
            record_pc_answers(&props(), "en", &answers, None, "m"),
            Err(ProbeError::IncompleteSession(61))
        ));
    }

    #[test]
    fn invalid_answer_token_rejected() {
        let mut answers: Vec<String> = vec!["agree".to_string(); 62];
        answers[10] = "maybe".to_string();
        assert!(matches!(
            record_pc_answers(&props(), "en", &answers, None, "m"),
            Err(ProbeError::InvalidAnswer(t)) if t == "maybe"
        ));
    }

    #[test]
    fn out_of_range_scores_rejected() {
        let answers: Vec<String> = vec!["agree".to_string(); 62];
        assert!(matches!(
            record_pc_answers(&props(), "en", &answers, Some((12.0, 0.0)), "m"),
            Err(ProbeError::ScoreOutOfRange {
                axis: "economic",
                ..
            })
        ));
    }

    #[test]
    fn proposition_count_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("props.txt");
        fs::write(&path, "only\nthree\nlines\n").unwrap();
        assert!(matches!(
            load_propositions(&path),
            Err(ProbeError::PropositionCount(3))
        ));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let mut rate = RateLimiter::new(200.0); // 5ms spacing keeps the test fast
        let start = Instant::now();
        for _ in 0..4 {
            rate.acquire();
        }
        // First token is free; three more need ~15ms of refill.
        assert!(start.elapsed() >= Duration::from_millis(12));
    }
}
