//! ROUGE-N, ROUGE-L and BLEU over lowercased whitespace tokens with ASCII
//! punctuation stripped from token edges.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn new(overlap: f64, cand_total: f64, ref_total: f64) -> Self {
        let precision = if cand_total > 0.0 {
            overlap / cand_total
        } else {
            0.0
        };
        let recall = if ref_total > 0.0 {
            overlap / ref_total
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// Clipped n-gram overlap. `n` must be at least 1.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> Prf {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let rc = ngram_counts(&r, n);
    let overlap: usize = ngram_counts(&c, n)
        .iter()
        .map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::new(
        overlap as f64,
        ngram_total(c.len(), n) as f64,
        ngram_total(r.len(), n) as f64,
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &str, reference: &str) -> Prf {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    Prf::new(lcs_len(&c, &r) as f64, c.len() as f64, r.len() as f64)
}

/// Corpus-free sentence BLEU with clipped precisions up to `max_n` and the
/// brevity penalty against the closest reference length (shorter on ties).
/// For n >= 2 a zero match count becomes (0 + 1) / (total + 1).
pub fn bleu(candidate: &str, references: &[&str], max_n: usize) -> f64 {
    let c = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    if c.is_empty() || refs.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(&c, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let matches: usize = cand
            .iter()
            .map(|(g, k)| {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(g).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                (*k).min(max_ref)
            })
            .sum();
        let total = ngram_total(c.len(), n);
        let p = if matches == 0 {
            if n == 1 {
                return 0.0;
            }
            1.0 / (total as f64 + 1.0)
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let c_len = c.len() as f64;
    let r_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - c.len() as i64).abs(), l))
        .expect("non-empty references") as f64;
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len / c_len).exp()
    };
    bp * (log_sum / max_n as f64).exp()
}

/// F1 of each ROUGE variant plus BLEU-4.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoteScores {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub bleu: f64,
}

impl NoteScores {
    pub fn score(candidate: &str, reference: &str) -> Self {
        Self {
            rouge1: rouge_n(candidate, reference, 1).f1,
            rouge2: rouge_n(candidate, reference, 2).f1,
            rouge_l: rouge_l(candidate, reference).f1,
            bleu: bleu(candidate, &[reference], 4),
        }
    }

    pub fn mean(rows: &[NoteScores]) -> Self {
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let sum = |f: fn(&NoteScores) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            rouge1: sum(|r| r.rouge1),
            rouge2: sum(|r| r.rouge2),
            rouge_l: sum(|r| r.rouge_l),
            bleu: sum(|r| r.bleu),
        }
    }
}
