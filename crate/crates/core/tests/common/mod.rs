//! Fixture builders and independent brute-force oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use clinrag::concepts::{Category, VocabEntry};
use clinrag::config::RetrievalConfig;
use clinrag::corpus::{CaseRepository, GuidelineCorpus, GuidelineDoc};
use clinrag::graph::{extract_graph, segment_guideline, RelationRuleSet, SegmentConfig};
use clinrag::synth::{self, SynthVocab};
use clinrag::text::fold_char;
use clinrag::{Engine, HashedTrigramEmbedder, Store};

pub fn rules() -> RelationRuleSet {
    RelationRuleSet {
        relations: RelationRuleSet::parse_relation_rules(synth::RULES_TSV.as_bytes()).unwrap(),
        qualifiers: RelationRuleSet::parse_qualifier_rules(synth::QUALIFIERS_TSV.as_bytes())
            .unwrap(),
    }
}

pub fn store(sv: &SynthVocab, repo: CaseRepository, docs: Vec<GuidelineDoc>) -> Store {
    let corpus = GuidelineCorpus::from_docs(docs).unwrap();
    let mut units = Vec::new();
    for d in corpus.iter() {
        units.extend(segment_guideline(d, &SegmentConfig::default()).unwrap());
    }
    let graph = extract_graph(&units, &sv.vocab, &rules());
    Store {
        repo,
        corpus,
        vocab: sv.vocab.clone(),
        graph,
    }
}

pub fn engine(sv: &SynthVocab, repo: CaseRepository, n_docs: usize, seed: u64) -> Engine {
    let docs = synth::synth_guidelines(n_docs, seed, sv).docs;
    Engine::build(
        store(sv, repo, docs),
        Box::new(HashedTrigramEmbedder::default()),
        seed,
        2400,
        RetrievalConfig::default(),
    )
    .unwrap()
}

/// Weighted Jaccard straight from the definition.
pub fn oracle_keyword(
    q: &BTreeMap<String, Category>,
    c: &BTreeMap<String, Category>,
    w: impl Fn(Category) -> f64,
) -> f64 {
    let union: BTreeSet<&String> = q.keys().chain(c.keys()).collect();
    let inter: f64 = union
        .iter()
        .filter(|k| q.contains_key(**k) && c.contains_key(**k))
        .map(|k| w(q[*k]))
        .sum();
    let total: f64 = union
        .iter()
        .map(|k| w(*q.get(*k).or_else(|| c.get(*k)).unwrap()))
        .sum();
    if total == 0.0 {
        0.0
    } else {
        inter / total
    }
}

pub fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn oracle_sem(a: &[f64], b: &[f64]) -> f64 {
    (1.0 + oracle_cos(a, b).clamp(-1.0, 1.0)) / 2.0
}

pub struct OracleCase<'a> {
    pub id: &'a str,
    pub concepts: BTreeMap<String, Category>,
    pub vector: &'a [f64],
}

/// Score every case, sort by score descending then id, keep `k`.
pub fn oracle_rank(
    query_id: &str,
    q_concepts: &BTreeMap<String, Category>,
    q_vec: &[f64],
    cases: &[OracleCase<'_>],
    lambda: f64,
    w: impl Fn(Category) -> f64 + Copy,
    k: usize,
) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = cases
        .iter()
        .filter(|c| c.id != query_id)
        .map(|c| {
            let kw = oracle_keyword(q_concepts, &c.concepts, w);
            let sem = oracle_sem(q_vec, c.vector);
            (c.id.to_string(), lambda * sem + (1.0 - lambda) * kw)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Every word-bounded, case-folded occurrence of every term, then greedy
/// selection longest first, leftmost on ties, dropping overlaps.
pub fn oracle_matches(text: &str, entries: &[VocabEntry]) -> Vec<(usize, usize, String)> {
    let hay: Vec<char> = text.chars().map(fold_char).collect();
    let mut cands = Vec::new();
    for e in entries {
        let needle: Vec<char> = e.term.chars().map(fold_char).collect();
        if needle.is_empty() || needle.len() > hay.len() {
            continue;
        }
        for s in 0..=hay.len() - needle.len() {
            let end = s + needle.len();
            let left_ok = s == 0 || !hay[s - 1].is_alphanumeric() || !hay[s].is_alphanumeric();
            let right_ok =
                end == hay.len() || !hay[end].is_alphanumeric() || !hay[end - 1].is_alphanumeric();
            if hay[s..end] == needle[..] && left_ok && right_ok {
                cands.push((s, end, e.concept_id.clone()));
            }
        }
    }
    cands.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    let mut taken: Vec<(usize, usize, String)> = Vec::new();
    for c in cands {
        if taken.iter().all(|t| c.1 <= t.0 || c.0 >= t.1) {
            taken.push(c);
        }
    }
    taken.sort();
    taken
}
