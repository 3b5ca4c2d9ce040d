//! Fixtures shared by the benches in benches/.

use clinrag::config::RetrievalConfig;
use clinrag::synth::{fixture_store, synth_cases, synth_guidelines, SynthVocab};
use clinrag::{Engine, HashedTrigramEmbedder};

/// An engine over `n_cases` synthetic cases and `n_docs` guidelines.
pub fn engine(n_cases: usize, n_docs: usize, seed: u64) -> (SynthVocab, Engine) {
    let sv = SynthVocab::generate(seed);
    let cases = synth_cases(n_cases, seed + 1, &sv);
    let docs = synth_guidelines(n_docs, seed + 2, &sv).docs;
    let store = fixture_store(&sv, &cases, &docs).expect("synthetic fixture ingests");
    let engine = Engine::build(
        store,
        Box::new(HashedTrigramEmbedder::default()),
        seed,
        2400,
        RetrievalConfig::default(),
    )
    .expect("synthetic engine builds");
    (sv, engine)
}
