use std::hint::black_box;

use clinrag::community::detect_communities;
use clinrag::graph::{extract_graph, segment_guideline, RelationRuleSet, SegmentConfig};
use clinrag::synth::{synth_guidelines, SynthVocab, QUALIFIERS_TSV, RULES_TSV};
use clinrag::GuidelineCorpus;
use criterion::{criterion_group, criterion_main, Criterion};

fn extraction(c: &mut Criterion) {
    let sv = SynthVocab::generate(3);
    let corpus = GuidelineCorpus::from_docs(synth_guidelines(50, 4, &sv).docs).unwrap();
    let rules = RelationRuleSet {
        relations: RelationRuleSet::parse_relation_rules(RULES_TSV.as_bytes()).unwrap(),
        qualifiers: RelationRuleSet::parse_qualifier_rules(QUALIFIERS_TSV.as_bytes()).unwrap(),
    };
    let cfg = SegmentConfig::default();
    let units: Vec<_> = corpus
        .iter()
        .flat_map(|d| segment_guideline(d, &cfg).unwrap())
        .collect();

    c.bench_function("segment_50_docs", |b| {
        b.iter(|| {
            for d in corpus.iter() {
                black_box(segment_guideline(d, &cfg).unwrap());
            }
        })
    });
    c.bench_function("extract_graph_50_docs", |b| {
        b.iter(|| extract_graph(black_box(&units), &sv.vocab, &rules))
    });
    let graph = extract_graph(&units, &sv.vocab, &rules);
    c.bench_function("label_propagation_50_docs", |b| {
        b.iter(|| detect_communities(black_box(&graph), 0).unwrap())
    });
}

criterion_group!(benches, extraction);
criterion_main!(benches);
