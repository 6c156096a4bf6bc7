//! Source-level aggregation: stance percentages, bootstrap confidence
//! intervals, the strict-majority verdict, and report rendering.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Stance;
use crate::stance::Prediction;

pub const DEFAULT_N_BOOT: usize = 1000;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction set is empty")]
    EmptyPredictionSet,
    #[error("bootstrap count must be >= 1")]
    BadBootstrapCount,
    #[error("confidence level must be in (0, 1), got {0}")]
    BadLevel(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Exact class percentages of a prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanceBreakdown {
    pub n: usize,
    pub pct_left: f64,
    pub pct_right: f64,
}

/// Percentile bootstrap interval on pct_left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapCi {
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }

    /// The interval on pct_right mirrors the left interval by complement.
    pub fn mirrored(&self) -> BootstrapCi {
        BootstrapCi {
            point: 100.0 - self.point,
            lo: 100.0 - self.hi,
            hi: 100.0 - self.lo,
            ..*self
        }
    }
}

/// Strict-majority verdict; an exact 50/50 split stays undetermined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Left,
    Right,
    Undetermined,
}

/// One report row: a test newspaper or an ILM run tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source_id: String,
    pub breakdown: StanceBreakdown,
    pub ci_left: BootstrapCi,
    pub verdict: Verdict,
    pub model_digest: String,
    pub run_date: String,
}

/// Exact counting arithmetic; rounding happens only at render time.
pub fn stance_percentages(predictions: &[Prediction]) -> Result<StanceBreakdown, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictionSet);
    }
    let n = predictions.len();
    let left = predictions
        .iter()
        .filter(|p| p.stance == Stance::Left)
        .count();
    let pct_left = 100.0 * left as f64 / n as f64;
    Ok(StanceBreakdown {
        n,
        pct_left,
        pct_right: 100.0 * (n - left) as f64 / n as f64,
    })
}

/// Percentile bootstrap on pct_left: the prediction list is resampled with
/// replacement `n_boot` times and the interval is read off the empirical
/// quantiles with linear interpolation. Seeded and deterministic.
pub fn bootstrap_ci(
    predictions: &[Prediction],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictionSet);
    }
    if n_boot == 0 {
        return Err(EvalError::BadBootstrapCount);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::BadLevel(level));
    }
    let is_left: Vec<bool> = predictions
        .iter()
        .map(|p| p.stance == Stance::Left)
        .collect();
    let n = is_left.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut left = 0usize;
        for _ in 0..n {
            if is_left[rng.random_range(0..n)] {
                left += 1;
            }
        }
        stats.push(100.0 * left as f64 / n as f64);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    let lo = percentile(&stats, tail);
    let hi = percentile(&stats, 1.0 - tail);
    let point = 100.0 * is_left.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(BootstrapCi {
        point,
        lo,
        hi,
        n_boot,
        level,
        seed,
    })
}

/// Empirical quantile with linear interpolation over a sorted sample.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A source is declared Left/Right when strictly more than 50% of its
/// articles are classified as such.
pub fn source_verdict(breakdown: &StanceBreakdown) -> Verdict {
    if breakdown.pct_left > 50.0 {
        Verdict::Left
    } else if breakdown.pct_right > 50.0 {
        Verdict::Right
    } else {
        Verdict::Undetermined
    }
}

/// Assembles the full report row for one source.
pub fn build_source_report(
    source_id: &str,
    predictions: &[Prediction],
    n_boot: usize,
    level: f64,
    seed: u64,
    model_digest: &str,
    run_date: &str,
) -> Result<SourceReport, EvalError> {
    let breakdown = stance_percentages(predictions)?;
    let ci_left = bootstrap_ci(predictions, n_boot, level, seed)?;
    Ok(SourceReport {
        source_id: source_id.to_string(),
        breakdown,
        ci_left,
        verdict: source_verdict(&breakdown),
        model_digest: model_digest.to_string(),
        run_date: run_date.to_string(),
    })
}

/// Display cell "82±5": percentage and CI half-width both rounded half-up to
/// integers.
pub fn format_cell(pct: f64, half_width: f64) -> String {
    format!("{}±{}", round_half_up(pct), round_half_up(half_width))
}

fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Tab-separated report, one row per source, majority column marked by the
/// verdict field.
pub fn render_tsv(reports: &[SourceReport]) -> String {
    let mut out = String::from("source\tn\tleft\tright\tverdict\tmodel_digest\trun_date\n");
    for r in reports {
        let right_ci = r.ci_left.mirrored();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.source_id,
            r.breakdown.n,
            format_cell(r.breakdown.pct_left, r.ci_left.half_width()),
            format_cell(r.breakdown.pct_right, right_ci.half_width()),
            match r.verdict {
                Verdict::Left => "L",
                Verdict::Right => "R",
                Verdict::Undetermined => "-",
            },
            r.model_digest,
            r.run_date,
        ));
    }
    out
}

/// Markdown table with the majority cell boldfaced.
pub fn render_markdown(reports: &[SourceReport]) -> String {
    let mut out = String::from("| Source | n | L | R | Verdict |\n|---|---|---|---|---|\n");
    for r in reports {
        let left = format_cell(r.breakdown.pct_left, r.ci_left.half_width());
        let right = format_cell(r.breakdown.pct_right, r.ci_left.mirrored().half_width());
        let (left, right) = match r.verdict {
            Verdict::Left => (format!("**{left}**"), right),
            Verdict::Right => (left, format!("**{right}**")),
            Verdict::Undetermined => (left, right),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.source_id,
            r.breakdown.n,
            left,
            right,
            match r.verdict {
                Verdict::Left => "Left",
                Verdict::Right => "Right",
                Verdict::Undetermined => "Undetermined",
            }
        ));
    }
    out
}

/// Machine-readable rendering; deserializes back to the same values.
pub fn render_json(reports: &[SourceReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}

/// Writes report.tsv, report.md and report.json into a directory.
pub fn write_reports(dir: &std::path::Path, reports: &[SourceReport]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.tsv"), render_tsv(reports))?;
    std::fs::write(dir.join("report.md"), render_markdown(reports))?;
    std::fs::write(dir.join("report.json"), render_json(reports))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(n_left: usize, n_right: usize) -> Vec<Prediction> {
        let mut out = Vec::new();
        for i in 0..n_left {
            out.push(Prediction {
                article_id: format!("l{i}"),
                stance: Stance::Left,
                prob_left: 0.9,
            });
        }
        for i in 0..n_right {
            out.push(Prediction {
                article_id: format!("r{i}"),
                stance: Stance::Right,
                prob_left: 0.1,
            });
        }
        out
    }

    #[test]
    fn percentages_exact() {
        let b = stance_percentages(&preds(82, 18)).unwrap();
        assert_eq!(b.n, 100);
        assert_eq!(b.pct_left, 82.0);
        assert_eq!(b.pct_right, 18.0);

        let b = stance_percentages(&preds(3, 0)).unwrap();
        assert_eq!((b.pct_left, b.pct_right), (100.0, 0.0));

        let b = stance_percentages(&preds(1, 2)).unwrap();
        assert!((b.pct_left - 100.0 / 3.0).abs() < 1e-12);
        assert!((b.pct_left + b.pct_right - 100.0).abs() < 1e-9);
    }

    #[test]
    fn percentages_reject_empty() {
        assert!(matches!(
            stance_percentages(&[]),
            Err(EvalError::EmptyPredictionSet)
        ));
    }

    #[test]
    fn degenerate_bootstrap_has_zero_width() {
        let ci = bootstrap_ci(&preds(17, 0), 200, 0.95, 3).unwrap();
        assert_eq!(ci.lo, 100.0);
        assert_eq!(ci.hi, 100.0);
        assert_eq!(ci.point, 100.0);
        assert_eq!(ci.half_width(), 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_per_seed() {
        let p = preds(40, 60);
        let a = bootstrap_ci(&p, 500, 0.95, 9).unwrap();
        let b = bootstrap_ci(&p, 500, 0.95, 9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&p, 500, 0.95, 10).unwrap();
        assert!(a.lo != c.lo || a.hi != c.hi);
    }

    #[test]
    fn wider_levels_nest() {
        let p = preds(70, 30);
        let narrow = bootstrap_ci(&p, 1000, 0.90, 5).unwrap();
        let wide = bootstrap_ci(&p, 1000, 0.99, 5).unwrap();
        assert!(wide.lo <= narrow.lo);
        assert!(wide.hi >= narrow.hi);
        assert!(narrow.lo <= narrow.point && narrow.point <= narrow.hi);
    }

    #[test]
    fn bootstrap_input_validation() {
        let p = preds(5, 5);
        assert!(matches!(
            bootstrap_ci(&[], 100, 0.95, 0),
            Err(EvalError::EmptyPredictionSet)
        ));
        assert!(matches!(
            bootstrap_ci(&p, 0, 0.95, 0),
            Err(EvalError::BadBootstrapCount)
        ));
        assert!(matches!(
            bootstrap_ci(&p, 10, 1.5, 0),
            Err(EvalError::BadLevel(_))
        ));
    }

    #[test]
    fn coverage_of_nominal_interval() {
        // 500 seeded trials of n=300 Bernoulli(0.7) draws; the 95% interval
        // must cover the true 70% between 92% and 98% of the time.
        use rand::Rng;
        use rand::SeedableRng;
        let mut covered = 0usize;
        let trials = 500;
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000 + trial);
            let sample: Vec<Prediction> = (0..300)
                .map(|i| {
                    let left = rng.random::<f64>() < 0.7;
                    Prediction {
                        article_id: format!("t{trial}-{i}"),
                        stance: if left { Stance::Left } else { Stance::Right },
                        prob_left: if left { 0.9 } else { 0.1 },
                    }
                })
                .collect();
            let ci = bootstrap_ci(&sample, 1000, 0.95, 777 + trial).unwrap();
            if ci.lo <= 70.0 && 70.0 <= ci.hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        assert!(
            (0.92..=0.98).contains(&rate),
            "coverage {rate} outside [0.92, 0.98]"
        );
    }

    #[test]
    fn verdict_rule_cells() {
        let b65 = stance_percentages(&preds(65, 35)).unwrap();
        assert_eq!(source_verdict(&b65), Verdict::Left);
        let b50 = stance_percentages(&preds(50, 50)).unwrap();
        assert_eq!(source_verdict(&b50), Verdict::Undetermined);
        let b49 = stance_percentages(&preds(49, 51)).unwrap();
        assert_eq!(source_verdict(&b49), Verdict::Right);
    }

    #[test]
    fn verdict_is_permutation_invariant_and_exclusive() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut p = preds(42, 58);
        let v = source_verdict(&stance_percentages(&p).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            p.shuffle(&mut rng);
            assert_eq!(source_verdict(&stance_percentages(&p).unwrap()), v);
        }
        // Exactly one verdict value holds for any breakdown.
        for left in 0..=10 {
            let b = stance_percentages(&preds(left, 10 - left)).unwrap();
            let verdicts = [Verdict::Left, Verdict::Right, Verdict::Undetermined];
            let holds: Vec<bool> = verdicts.iter().map(|v| source_verdict(&b) == *v).collect();
            assert_eq!(holds.iter().filter(|&&h| h).count(), 1);
        }
    }

    #[test]
    fn cell_rendering_rounds_half_up() {
        assert_eq!(format_cell(82.0, 4.6), "82±5");
        assert_eq!(format_cell(81.5, 4.5), "82±5");
        assert_eq!(format_cell(65.0, 2.0), "65±2");
        assert_eq!(format_cell(49.9, 0.4), "50±0");
    }

    #[test]
    fn renders_and_round_trips() {
        let p = preds(82, 18);
        let report =
            build_source_report("newspaper-l", &p, 1000, 0.95, 4, "deadbeef", "2026-08-08")
                .unwrap();
        let tsv = render_tsv(std::slice::from_ref(&report));
        assert!(tsv.contains("newspaper-l"));
        assert!(tsv.contains("\tL\t"));
        let md = render_markdown(std::slice::from_ref(&report));
        // Majority cell is emphasized.
        assert!(md.contains("**82±"));
        let json = render_json(std::slice::from_ref(&report));
        let back: Vec<SourceReport> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![report]);
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(
            render_tsv(&[]),
            "source\tn\tleft\tright\tverdict\tmodel_digest\trun_date\n"
        );
        let md = render_markdown(&[]);
        assert_eq!(md.lines().count(), 2);
    }

    #[test]
    fn write_reports_creates_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = preds(10, 5);
        let report = build_source_report("s", &p, 100, 0.95, 1, "d", "today").unwrap();
        write_reports(dir.path(), &[report]).unwrap();
        for name in ["report.tsv", "report.md", "report.json"] {
            assert!(dir.path().join(name).exists());
        }
    }
}
