//! Collapsed Gibbs sweeps, Minka fixed-point alpha optimization, and fold-in
//! inference for unseen documents.

use rand::Rng;

use crate::hash::{fnv1a64_with, FNV_OFFSET};
use crate::textprep::TokenStream;

use super::special::digamma;
use super::{
    stream_rng, LdaError, LdaState, TopicModel, Vocabulary, ALPHA_FLOOR, INFERENCE_SWEEPS,
};

/// Sweep schedule of a full training run.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LdaRunConfig {
    pub sweeps: u64,
    pub burn_in: u64,
    pub alpha_opt_interval: u64,
    pub seed: u64,
}

impl Default for LdaRunConfig {
    fn default() -> Self {
        LdaRunConfig {
            sweeps: 1000,
            burn_in: 50,
            alpha_opt_interval: 10,
            seed: 0,
        }
    }
}

impl LdaState {
    /// Resamples every token once, in document order, from the collapsed
    /// conditional p(z = k | rest) ∝ (n_dk + alpha_k) (n_kw + beta) / (n_k + V beta),
    /// where all counts exclude the token being resampled.
    pub fn gibbs_sweep(&mut self) {
        let k = self.k;
        let v = self.vocab_size;
        let beta = self.beta;
        let v_beta = v as f64 * beta;
        let alpha = self.alpha.clone();
        let mut rng = stream_rng(self.rng_seed, self.iteration + 1);
        let mut weights = vec![0.0f64; k];

        let (docs, z, n_dk, n_kw, n_k, _n_d) = self.counts_mut();
        for (d, doc) in docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i];
                n_dk[d * k + old] -= 1;
                n_kw[old * v + w] -= 1;
                n_k[old] -= 1;

                let mut total = 0.0;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (f64::from(n_dk[d * k + t]) + alpha[t])
                        * (f64::from(n_kw[t * v + w]) + beta)
                        / (f64::from(n_k[t]) + v_beta);
                    total += *weight;
                }
                let mut u = rng.random::<f64>() * total;
                let mut new = k - 1;
                for (t, &weight) in weights.iter().enumerate() {
                    if u < weight {
                        new = t;
                        break;
                    }
                    u -= weight;
                }

                z[d][i] = new;
                n_dk[d * k + new] += 1;
                n_kw[new * v + w] += 1;
                n_k[new] += 1;
            }
        }
        self.iteration += 1;
    }

    /// Leave-one-out conditional distribution at one site, normalized.
    pub fn conditional_at(&self, d: usize, i: usize) -> Vec<f64> {
        let w = self.encoded_docs()[d][i];
        let old = self.assignments()[d][i];
        let v_beta = self.vocab_size as f64 * self.beta;
        let minus =
            |count: u32, topic: usize| f64::from(count) - if topic == old { 1.0 } else { 0.0 };
        let mut weights: Vec<f64> = (0..self.k)
            .map(|t| {
                (minus(self.doc_topic_counts(d)[t], t) + self.alpha[t])
                    * (minus(self.topic_word_counts(t)[w], t) + self.beta)
                    / (minus(self.topic_totals()[t], t) + v_beta)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        weights
    }

    /// One round of the fixed-point update
    /// alpha_k <- alpha_k * sum_d[psi(n_dk + alpha_k) - psi(alpha_k)]
    ///                    / sum_d[psi(n_d + sum alpha) - psi(sum alpha)],
    /// iterated until the largest relative change drops below 1e-5 or 100
    /// rounds pass. Components are clamped to stay strictly positive.
    pub fn optimize_alpha(&mut self) {
        const MAX_ROUNDS: usize = 100;
        const REL_TOL: f64 = 1e-5;

        let d_count = self.num_docs();
        for _ in 0..MAX_ROUNDS {
            let alpha_sum: f64 = self.alpha.iter().sum();
            let mut denom = 0.0;
            for d in 0..d_count {
                let n_d = f64::from(self.doc_lengths()[d]);
                if n_d > 0.0 {
                    denom += digamma(n_d + alpha_sum) - digamma(alpha_sum);
                }
            }
            if denom <= 0.0 {
                return;
            }
            let mut max_rel = 0.0f64;
            let mut next = self.alpha.clone();
            for (t, next_t) in next.iter_mut().enumerate() {
                let a = self.alpha[t];
                let mut numer = 0.0;
                for d in 0..d_count {
                    let n_dk = f64::from(self.doc_topic_counts(d)[t]);
                    if n_dk > 0.0 {
                        numer += digamma(n_dk + a) - digamma(a);
                    }
                }
                let updated = (a * numer / denom).max(ALPHA_FLOOR);
                max_rel = max_rel.max((updated - a).abs() / a);
                *next_t = updated;
            }
            self.alpha = next;
            if max_rel < REL_TOL {
                break;
            }
        }
    }
}

/// Runs initialization plus the full sweep schedule: alpha is re-optimized
/// every `alpha_opt_interval` sweeps once past burn-in.
pub fn run_lda(
    docs: &[TokenStream],
    vocab: &Vocabulary,
    k: usize,
    cfg: &LdaRunConfig,
) -> Result<LdaState, LdaError> {
    let mut state = LdaState::init(docs, vocab, k, cfg.seed)?;
    for _ in 0..cfg.sweeps {
        state.gibbs_sweep();
        if cfg.alpha_opt_interval > 0
            && state.iteration > cfg.burn_in
            && state.iteration % cfg.alpha_opt_interval == 0
        {
            state.optimize_alpha();
        }
    }
    Ok(state)
}

/// Assigns the dominant topic of an unseen document by fold-in: 20 seeded
/// Gibbs sweeps over the document with the model's topic-word counts frozen,
/// then the argmax of the document-topic counts. Ties break to the lowest
/// topic id.
pub fn infer_dominant_topic(
    doc: &TokenStream,
    model: &TopicModel,
    vocab: &Vocabulary,
) -> Result<usize, LdaError> {
    let ids = vocab.encode(doc);
    if ids.is_empty() {
        return Err(LdaError::EmptyDocument);
    }
    let k = model.k;
    let v = model.vocab_size;
    let v_beta = v as f64 * model.beta;

    // Deterministic per document: the stream is derived from the model seed
    // and the encoded token sequence, so inference can run in parallel.
    let mut doc_hash = FNV_OFFSET;
    for &id in &ids {
        doc_hash = fnv1a64_with(doc_hash, &(id as u64).to_le_bytes());
    }
    let mut rng = stream_rng(model.seed ^ doc_hash, u64::MAX);

    let mut local = vec![0u32; k];
    let mut z = vec![0usize; ids.len()];
    for slot in z.iter_mut() {
        let topic = rng.random_range(0..k);
        *slot = topic;
        local[topic] += 1;
    }
    let mut weights = vec![0.0f64; k];
    for _ in 0..INFERENCE_SWEEPS {
        for (i, &w) in ids.iter().enumerate() {
            let old = z[i];
            local[old] -= 1;
            let mut total = 0.0;
            for (t, weight) in weights.iter_mut().enumerate() {
                *weight = (f64::from(local[t]) + model.alpha[t])
                    * (f64::from(model.n_kw[t * v + w]) + model.beta)
                    / (f64::from(model.n_k[t]) + v_beta);
                total += *weight;
            }
            let mut u = rng.random::<f64>() * total;
            let mut new = k - 1;
            for (t, &weight) in weights.iter().enumerate() {
                if u < weight {
                    new = t;
                    break;
                }
                u -= weight;
            }
            z[i] = new;
            local[new] += 1;
        }
    }
    let mut best = 0usize;
    for t in 1..k {
        if local[t] > local[best] {
            best = t;
        }
    }
    Ok(best)
}

/// Mean per-token log-likelihood of held-out documents under the model, with
/// document mixtures estimated by fold-in.
pub fn heldout_log_likelihood(docs: &[TokenStream], model: &TopicModel, vocab: &Vocabulary) -> f64 {
    let k = model.k;
    let v = model.vocab_size;
    let v_beta = v as f64 * model.beta;
    let alpha_sum: f64 = model.alpha.iter().sum();
    let mut total_ll = 0.0;
    let mut total_tokens = 0usize;
    for doc in docs {
        let ids = vocab.encode(doc);
        if ids.is_empty() {
            continue;
        }
        // Same fold-in machinery as dominant-topic inference, but keeping
        // the mixture rather than its argmax.
        let mut doc_hash = FNV_OFFSET;
        for &id in &ids {
            doc_hash = fnv1a64_with(doc_hash, &(id as u64).to_le_bytes());
        }
        let mut rng = stream_rng(model.seed ^ doc_hash, u64::MAX - 1);
        let mut local = vec![0u32; k];
        let mut z = vec![0usize; ids.len()];
        for slot in z.iter_mut() {
            let topic = rng.random_range(0..k);
            *slot = topic;
            local[topic] += 1;
        }
        let mut weights = vec![0.0f64; k];
        for _ in 0..INFERENCE_SWEEPS {
            for (i, &w) in ids.iter().enumerate() {
                let old = z[i];
                local[old] -= 1;
                let mut total = 0.0;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (f64::from(local[t]) + model.alpha[t])
                        * (f64::from(model.n_kw[t * v + w]) + model.beta)
                        / (f64::from(model.n_k[t]) + v_beta);
                    total += *weight;
                }
                let mut u = rng.random::<f64>() * total;
                let mut new = k - 1;
                for (t, &weight) in weights.iter().enumerate() {
                    if u < weight {
                        new = t;
                        break;
                    }
                    u -= weight;
                }
                z[i] = new;
                local[new] += 1;
            }
        }
        let n_d: f64 = f64::from(local.iter().sum::<u32>());
        let theta: Vec<f64> = (0..k)
            .map(|t| (f64::from(local[t]) + model.alpha[t]) / (n_d + alpha_sum))
            .collect();
        for &w in &ids {
            let p: f64 = (0..k).map(|t| theta[t] * model.topic_word_prob(t, w)).sum();
            total_ll += p.ln();
        }
        total_tokens += ids.len();
    }
    if total_tokens == 0 {
        return f64::NEG_INFINITY;
    }
    total_ll / total_tokens as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::planted_topic_corpus;

    fn stream(tokens: &[&str]) -> TokenStream {
        TokenStream {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            language: "en".to_string(),
        }
    }

    #[test]
    fn single_topic_sweep_is_noop_on_assignments() {
        let docs = vec![stream(&["a", "b", "c"]), stream(&["a", "a"])];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let mut state = LdaState::init(&docs, &vocab, 1, 3).unwrap();
        let before = state.assignments().to_vec();
        state.gibbs_sweep();
        assert_eq!(state.assignments(), &before[..]);
        assert_eq!(state.iteration, 1);
        state.verify_counts().unwrap();
    }

    #[test]
    fn conditional_normalizes_at_every_site() {
        let docs = vec![
            stream(&["a", "b", "c", "d", "a", "b"]),
            stream(&["c", "d", "d", "a"]),
        ];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let mut state = LdaState::init(&docs, &vocab, 4, 11).unwrap();
        for _ in 0..3 {
            state.gibbs_sweep();
        }
        for d in 0..state.num_docs() {
            for i in 0..state.encoded_docs()[d].len() {
                let p = state.conditional_at(d, i);
                let sum: f64 = p.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "site ({d},{i}) sums to {sum}");
                assert!(p.iter().all(|&x| x > 0.0));
            }
        }
    }

    #[test]
    fn counts_conserved_across_sweeps() {
        let docs = vec![
            stream(&["a", "b", "c", "d", "e"]),
            stream(&["a", "a", "e", "f"]),
            stream(&["f", "f", "b"]),
        ];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let mut state = LdaState::init(&docs, &vocab, 3, 5).unwrap();
        for _ in 0..20 {
            state.gibbs_sweep();
            state.verify_counts().unwrap();
        }
        // Column sums over topics reproduce corpus frequencies.
        let mut word_totals = vec![0u32; vocab.len()];
        for t in 0..state.k {
            for (w, &c) in state.topic_word_counts(t).iter().enumerate() {
                word_totals[w] += c;
            }
        }
        let mut expected = vec![0u32; vocab.len()];
        for doc in state.encoded_docs() {
            for &w in doc {
                expected[w] += 1;
            }
        }
        assert_eq!(word_totals, expected);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let corpus = planted_topic_corpus(2, 10, 20, 30, 0, 77);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let cfg = LdaRunConfig {
            sweeps: 15,
            burn_in: 5,
            alpha_opt_interval: 5,
            seed: 42,
        };
        let s1 = run_lda(&corpus.docs, &vocab, 2, &cfg).unwrap();
        let s2 = run_lda(&corpus.docs, &vocab, 2, &cfg).unwrap();
        assert_eq!(s1.assignments(), s2.assignments());
        assert_eq!(s1.alpha, s2.alpha);
    }

    #[test]
    fn topic_word_distributions_normalize() {
        let corpus = planted_topic_corpus(3, 8, 30, 25, 0, 13);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let cfg = LdaRunConfig {
            sweeps: 10,
            burn_in: 2,
            alpha_opt_interval: 5,
            seed: 1,
        };
        let state = run_lda(&corpus.docs, &vocab, 3, &cfg).unwrap();
        for t in 0..state.k {
            let sum: f64 = (0..vocab.len()).map(|w| state.topic_word_prob(t, w)).sum();
            assert!((sum - 1.0).abs() < 1e-9, "topic {t} sums to {sum}");
        }
    }

    #[test]
    fn alpha_stays_equal_under_topic_symmetry() {
        // Every document uses each topic's block of words equally often, so
        // the count tables are symmetric under topic relabeling.
        let docs: Vec<TokenStream> = (0..6)
            .map(|_| stream(&["a", "b", "a", "b", "a", "b"]))
            .collect();
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let mut state = LdaState::init(&docs, &vocab, 2, 4).unwrap();
        // Force perfectly symmetric assignments: word a -> 0, word b -> 1.
        let symmetric: Vec<Vec<usize>> = state
            .encoded_docs()
            .iter()
            .map(|doc| doc.to_vec())
            .collect();
        state.set_assignments_for_tests(symmetric);
        state.verify_counts().unwrap();
        state.optimize_alpha();
        let a = &state.alpha;
        assert!((a[0] - a[1]).abs() < 1e-9, "alphas diverged: {a:?}");
        assert!(a.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn alpha_optimization_outputs_positive() {
        let corpus = planted_topic_corpus(3, 6, 12, 18, 0, 3);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let mut state = LdaState::init(&corpus.docs, &vocab, 3, 2).unwrap();
        for _ in 0..5 {
            state.gibbs_sweep();
        }
        state.optimize_alpha();
        assert!(state.alpha.iter().all(|&a| a >= ALPHA_FLOOR));
    }

    #[test]
    fn alpha_matches_grid_search_of_dm_likelihood() {
        // 5-document toy corpus with K=2. The oracle maximizes the
        // Dirichlet-multinomial log-likelihood over a 2-d grid; rising
        // factorials make the likelihood exact without lgamma. Dispersed
        // counts put the optimum at a small alpha, where the fixed point
        // converges well inside its iteration budget.
        let doc_topic_counts: [[u32; 2]; 5] = [[9, 1], [1, 9], [8, 2], [2, 8], [5, 5]];

        let dm_log_likelihood = |alpha: &[f64; 2]| -> f64 {
            let alpha_sum = alpha[0] + alpha[1];
            let mut ll = 0.0;
            for counts in &doc_topic_counts {
                let n_d = counts[0] + counts[1];
                for j in 0..n_d {
                    ll -= (alpha_sum + f64::from(j)).ln();
                }
                for (t, &c) in counts.iter().enumerate() {
                    for j in 0..c {
                        ll += (alpha[t] + f64::from(j)).ln();
                    }
                }
            }
            ll
        };

        // Coarse-to-fine grid search.
        let mut best = [1.0f64, 1.0];
        let mut best_ll = f64::NEG_INFINITY;
        let mut lo = [0.05f64, 0.05];
        let mut hi = [30.0f64, 30.0];
        for _ in 0..4 {
            let steps = 60;
            for i in 0..=steps {
                for j in 0..=steps {
                    let cand = [
                        lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / steps as f64,
                    ];
                    if cand[0] <= 0.0 || cand[1] <= 0.0 {
                        continue;
                    }
                    let ll = dm_log_likelihood(&cand);
                    if ll > best_ll {
                        best_ll = ll;
                        best = cand;
                    }
                }
            }
            let w0 = (hi[0] - lo[0]) / steps as f64;
            let w1 = (hi[1] - lo[1]) / steps as f64;
            lo = [
                (best[0] - 2.0 * w0).max(1e-4),
                (best[1] - 2.0 * w1).max(1e-4),
            ];
            hi = [best[0] + 2.0 * w0, best[1] + 2.0 * w1];
        }

        let mut state = LdaState::from_doc_topic_counts_for_tests(&doc_topic_counts);
        state.optimize_alpha();
        assert!(
            (state.alpha[0] - best[0]).abs() < 1e-2,
            "alpha0 {} vs grid {}",
            state.alpha[0],
            best[0]
        );
        assert!(
            (state.alpha[1] - best[1]).abs() < 1e-2,
            "alpha1 {} vs grid {}",
            state.alpha[1],
            best[1]
        );
    }

    #[test]
    fn planted_topics_recovered() {
        let corpus = planted_topic_corpus(3, 20, 90, 40, 0, 21);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let cfg = LdaRunConfig {
            sweeps: 120,
            burn_in: 20,
            alpha_opt_interval: 10,
            seed: 8,
        };
        let state = run_lda(&corpus.docs, &vocab, 3, &cfg).unwrap();
        let tv = corpus.mean_tv_distance(&state.to_model(), &vocab);
        assert!(tv < 0.15, "mean total-variation distance {tv}");
    }

    #[test]
    fn inference_recovers_planted_topic() {
        let corpus = planted_topic_corpus(3, 15, 60, 30, 0, 17);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let cfg = LdaRunConfig {
            sweeps: 80,
            burn_in: 20,
            alpha_opt_interval: 10,
            seed: 5,
        };
        let state = run_lda(&corpus.docs, &vocab, 3, &cfg).unwrap();
        let model = state.to_model();

        // Map each planted topic to the model topic holding most of its mass.
        let probe_doc = |planted: usize| -> usize {
            let words: Vec<&str> = corpus.topic_words[planted]
                .iter()
                .map(String::as_str)
                .collect();
            let doc = stream(&words);
            infer_dominant_topic(&doc, &model, &vocab).unwrap()
        };
        let mapped: Vec<usize> = (0..3).map(probe_doc).collect();
        let mut uniq = mapped.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), 3, "planted topics collapsed: {mapped:?}");

        // A fresh doc drawn from one planted vocabulary lands on its topic.
        let words: Vec<&str> = corpus.topic_words[1].iter().map(String::as_str).collect();
        let doc = stream(&words[..10]);
        assert_eq!(
            infer_dominant_topic(&doc, &model, &vocab).unwrap(),
            mapped[1]
        );
    }

    #[test]
    fn inference_tie_breaks_to_lowest_id() {
        // K=1 degenerate model: single topic always wins; and an explicitly
        // tied two-topic model must pick topic 0.
        let docs = vec![stream(&["a", "b"])];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let model = TopicModel {
            k: 2,
            vocab_size: 2,
            alpha: vec![1.0, 1.0],
            beta: 0.01,
            // Identical rows: the conditional is symmetric, and with an even
            // token count the final counts can tie.
            n_kw: vec![5, 5, 5, 5],
            n_k: vec![10, 10],
            iteration: 0,
            seed: 0,
        };
        // Whatever the sampled trajectory, argmax scans ids in ascending
        // order, so an exact tie yields the lower id. Probe a few docs and
        // check that ties (when they occur) resolve low.
        for seed_tok in ["a", "b"] {
            let doc = stream(&[seed_tok, seed_tok]);
            let t = infer_dominant_topic(&doc, &model, &vocab).unwrap();
            assert!(t < 2);
        }
        // Deterministic direct check of the tie rule on the counting step.
        let counts = [3u32, 3u32];
        let mut best = 0usize;
        for t in 1..2 {
            if counts[t] > counts[best] {
                best = t;
            }
        }
        assert_eq!(best, 0);
    }

    #[test]
    fn inference_rejects_oov_document() {
        let docs = vec![stream(&["a", "b"])];
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let state = LdaState::init(&docs, &vocab, 2, 1).unwrap();
        let doc = stream(&["zzz", "qqq"]);
        assert!(matches!(
            infer_dominant_topic(&doc, &state.to_model(), &vocab),
            Err(LdaError::EmptyDocument)
        ));
    }

    #[test]
    fn heldout_likelihood_improves_with_training() {
        let corpus = planted_topic_corpus(3, 20, 90, 40, 30, 29);
        let vocab = Vocabulary::build(&corpus.docs, 1).unwrap();
        let mut state = LdaState::init(&corpus.docs, &vocab, 3, 6).unwrap();
        state.gibbs_sweep();
        let ll_early = heldout_log_likelihood(&corpus.heldout, &state.to_model(), &vocab);
        for _ in 1..200 {
            state.gibbs_sweep();
        }
        let ll_late = heldout_log_likelihood(&corpus.heldout, &state.to_model(), &vocab);
        assert!(
            ll_late > ll_early,
            "held-out ll did not improve: {ll_early} -> {ll_late}"
        );
    }
}
