//! Exact Match, sentence BLEU-4 and greedy-matching BERTScore.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").unwrap());

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation and the articles "a", "an", "the", collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let stripped = PUNCT.replace_all(&lower, "");
    stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(candidate: &str, reference: &str) -> u8 {
    u8::from(normalize_answer(candidate) == normalize_answer(reference))
}

/// BLEU tokenization: lowercase, punctuation split off into its own tokens,
/// whitespace split.
pub fn tokenize(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    PUNCT
        .replace_all(&lower, " $0 ")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuResult {
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and total candidate n-grams.
fn modified_precision<T: Eq + std::hash::Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len().saturating_sub(n - 1))
}

/// Sentence-level BLEU-4, unsmoothed: any zero n-gram precision gives 0.
pub fn bleu4<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T]) -> BleuResult {
    bleu4_with(candidate, reference, false)
}

/// BLEU-4 with optional add-one smoothing of every precision.
pub fn bleu4_with<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T], smooth: bool) -> BleuResult {
    let c = candidate.len();
    let r = reference.len();
    let mut precisions = [0.0; 4];
    for (i, p) in precisions.iter_mut().enumerate() {
        let (matched, total) = modified_precision(candidate, reference, i + 1);
        *p = if smooth {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        } else if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
    }
    if c == 0 {
        return BleuResult {
            score: 0.0,
            precisions,
            brevity_penalty: 0.0,
            candidate_len: 0,
            reference_len: r,
        };
    }
    let brevity_penalty = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * precisions.iter().map(|p| 0.25 * p.ln()).sum::<f64>().exp()
    };
    BleuResult {
        score,
        precisions,
        brevity_penalty,
        candidate_len: c,
        reference_len: r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BertScoreResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BertScoreError {
    #[error("embedding matrix has no rows")]
    EmptyMatrix,
    #[error("row dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{side} row {row} is not unit-normalized (norm {norm})")]
    RowNotNormalized { side: &'static str, row: usize, norm: f64 },
}

impl BertScoreError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyMatrix => "EmptyMatrix",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::RowNotNormalized { .. } => "RowNotNormalized",
        }
    }
}

const UNIT_TOLERANCE: f64 = 1e-6;

fn check_rows(side: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<(), BertScoreError> {
    for (row, v) in rows.iter().enumerate() {
        if v.len() != dim {
            return Err(BertScoreError::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(BertScoreError::RowNotNormalized { side, row, norm });
        }
    }
    Ok(())
}

/// Harmonic mean of P and R.
///
/// When P and R have opposite signs the harmonic mean leaves the [min, max]
/// interval, so the smaller of the two is returned instead.
pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision == 0.0 || recall == 0.0 {
        0.0
    } else if (precision > 0.0) == (recall > 0.0) {
        // clamp away rounding so the mean never leaves [min, max]
        (2.0 * precision * recall / (precision + recall)).clamp(precision.min(recall), precision.max(recall))
    } else {
        precision.min(recall)
    }
}

/// Greedy-matching BERTScore over unit-normalized token embeddings
/// (no IDF weighting, no baseline rescaling).
pub fn bert_score(reference: &[Vec<f64>], candidate: &[Vec<f64>]) -> Result<BertScoreResult, BertScoreError> {
    let (Some(first), false) = (reference.first(), candidate.is_empty()) else {
        return Err(BertScoreError::EmptyMatrix);
    };
    let dim = first.len();
    check_rows("reference", reference, dim)?;
    check_rows("candidate", candidate, dim)?;

    let sim: Vec<Vec<f64>> = reference
        .iter()
        .map(|r| candidate.iter().map(|c| r.iter().zip(c).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let n = reference.len() as f64;
    let m = candidate.len() as f64;
    let recall = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / n;
    let precision = (0..candidate.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / m;
    Ok(BertScoreResult {
        precision,
        recall,
        f1: f1_of(precision, recall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    /// Counts every n-gram by linear scan; no hashing.
    fn brute_precision(cand: &[u8], reference: &[u8], n: usize) -> (usize, usize) {
        if cand.len() < n {
            return (0, 0);
        }
        let grams: Vec<&[u8]> = (0..=cand.len() - n).map(|i| &cand[i..i + n]).collect();
        let ref_grams: Vec<&[u8]> = if reference.len() >= n {
            (0..=reference.len() - n).map(|i| &reference[i..i + n]).collect()
        } else {
            Vec::new()
        };
        let mut seen: Vec<&[u8]> = Vec::new();
        let mut matched = 0;
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_cand = grams.iter().filter(|x| *x == g).count();
            let in_ref = ref_grams.iter().filter(|x| *x == g).count();
            matched += in_cand.min(in_ref);
        }
        (matched, grams.len())
    }

    fn brute_bleu(cand: &[u8], reference: &[u8]) -> f64 {
        if cand.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 1..=4 {
            let (m, t) = brute_precision(cand, reference, n);
            if m == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln() / 4.0;
        }
        let (c, r) = (cand.len() as f64, reference.len() as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * log_sum.exp()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The flu, is VIRAL."), "flu is viral");
        assert_eq!(normalize_answer("asthma"), "asthma");
        assert_eq!(normalize_answer("An  apple"), "apple");
        assert_eq!(normalize_answer("\u{201c}Theory\u{201d} \u{2014} a test"), "theory test");
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("The cause is X.", "the cause is x"), 1);
        assert_eq!(exact_match("X", "Y"), 0);
        assert_eq!(
            exact_match(
                "Asthma is managed with inhaled corticosteroids and bronchodilators.",
                "Treatment of asthma relies on bronchodilators and inhaled steroids."
            ),
            0
        );
    }

    #[test]
    fn bleu_hand_example() {
        let r = bleu4(&toks("the cat sat on the mat"), &toks("the cat is on the mat"));
        assert_eq!(r.precisions, [5.0 / 6.0, 3.0 / 5.0, 1.0 / 4.0, 0.0]);
        assert_eq!(r.score, 0.0);
        assert_eq!(r.brevity_penalty, 1.0);
        assert_eq!((r.candidate_len, r.reference_len), (6, 6));
        for n in 1..=4 {
            let c: Vec<u8> = b"abcdae".to_vec(); // the cat sat on the mat
            let rf: Vec<u8> = b"abfdae".to_vec(); // the cat is on the mat
            let (m, t) = brute_precision(&c, &rf, n);
            assert_eq!(m as f64 / t as f64, r.precisions[n - 1]);
        }
    }

    #[test]
    fn bleu_identity_and_empty() {
        let t = toks("Mammography can detect tumours before a lump is felt.");
        let r = bleu4(&t, &t);
        assert_eq!(r.score, 1.0);
        assert_eq!(r.precisions, [1.0; 4]);
        assert_eq!(r.brevity_penalty, 1.0);

        let e = bleu4::<String>(&[], &t);
        assert_eq!(e.score, 0.0);
        assert_eq!(e.brevity_penalty, 0.0);
    }

    #[test]
    fn bleu_brevity_and_smoothing() {
        let r = bleu4(&toks("a b c d"), &toks("a b c d e f g h"));
        assert_eq!(r.precisions, [1.0; 4]);
        assert!((r.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-15);
        assert!((r.score - r.brevity_penalty).abs() < 1e-15);

        let s = bleu4_with(&toks("the cat sat on the mat"), &toks("the cat is on the mat"), true);
        assert!(s.score > 0.0);
        assert_eq!(s.precisions[3], 1.0 / 4.0);
    }

    #[test]
    fn tokenizer_separates_punctuation() {
        assert_eq!(tokenize("Hello, World!"), ["hello", ",", "world", "!"]);
    }

    #[test]
    fn bert_hand_case() {
        let refs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cands = vec![vec![1.0, 0.0]];
        let s = bert_score(&refs, &cands).unwrap();
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.precision - 1.0).abs() < 1e-12);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn bert_errors() {
        assert_eq!(bert_score(&[], &[vec![1.0]]), Err(BertScoreError::EmptyMatrix));
        assert_eq!(bert_score(&[vec![1.0]], &[]), Err(BertScoreError::EmptyMatrix));
        assert!(matches!(
            bert_score(&[vec![1.0, 0.0]], &[vec![1.0]]),
            Err(BertScoreError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            bert_score(&[vec![2.0, 0.0]], &[vec![1.0, 0.0]]),
            Err(BertScoreError::RowNotNormalized { row: 0, .. })
        ));
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_of(0.0, 0.0), 0.0);
        assert!((f1_of(-0.5, -0.25) - (2.0 * 0.125 / -0.75)).abs() < 1e-15);
        assert_eq!(f1_of(-0.5, 1.0), -0.5);
    }

    fn unit_rows(max_rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..=max_rows).prop_filter_map(
            "zero row",
            |rows| {
                rows.into_iter()
                    .map(|r| {
                        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                        (n > 1e-3).then(|| r.iter().map(|x| x / n).collect())
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn bleu_matches_brute_force(
            cand in prop::collection::vec(0u8..6, 0..14),
            reference in prop::collection::vec(0u8..6, 0..14),
        ) {
            let got = bleu4(&cand, &reference).score;
            prop_assert!((got - brute_bleu(&cand, &reference)).abs() < 1e-9);
        }

        #[test]
        fn bert_bounds_and_swap((a, b) in (2usize..6).prop_flat_map(|d| (unit_rows(5, d), unit_rows(5, d)))) {
            let s = bert_score(&a, &b).unwrap();
            let t = bert_score(&b, &a).unwrap();
            prop_assert_eq!(s.precision, t.recall);
            prop_assert_eq!(s.recall, t.precision);
            prop_assert_eq!(s.f1, t.f1);
            let (lo, hi) = (s.precision.min(s.recall), s.precision.max(s.recall));
            prop_assert!(lo <= s.f1 && s.f1 <= hi);

            let sims: Vec<f64> = a.iter().flat_map(|r| b.iter().map(move |c| r.iter().zip(c).map(|(x, y)| x * y).sum::<f64>())).collect();
            let smin = sims.iter().copied().fold(f64::INFINITY, f64::min);
            let smax = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in [s.precision, s.recall] {
                prop_assert!(smin - 1e-12 <= v && v <= smax + 1e-12);
            }
            if s.precision > 0.0 && s.recall > 0.0 {
                let hm = 2.0 * s.precision * s.recall / (s.precision + s.recall);
                prop_assert!((s.f1 - hm).abs() <= 1e-15);
            }
        }

        #[test]
        fn bert_identity(a in (1usize..6).prop_flat_map(|d| unit_rows(6, d))) {
            let s = bert_score(&a, &a).unwrap();
            prop_assert!((s.precision - 1.0).abs() < 1e-9);
            prop_assert!((s.recall - 1.0).abs() < 1e-9);
            prop_assert!((s.f1 - 1.0).abs() < 1e-9);
        }

        #[test]
        fn exact_match_reflexive_symmetric(a in "[a-zA-Z ,.!]{0,20}", b in "[a-zA-Z ,.!]{0,20}") {
            prop_assert_eq!(exact_match(&a, &a), 1);
            prop_assert_eq!(exact_match(&a, &b), exact_match(&b, &a));
            let n = normalize_answer(&a);
            prop_assert_eq!(normalize_answer(&n), n);
        }
    }
}
