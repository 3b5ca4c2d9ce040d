//! Serialized stores written by ingestion: annotated cases, guideline corpus,
//! vocabulary and the extracted knowledge graph.
//!
//! Every file is a pure function of the inputs. Maps are ordered and no
//! timestamps are written, so re-ingesting identical inputs is byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::concepts::{annotate_case, VocabError, Vocabulary};
use crate::corpus::{
    ingest_cases, ingest_guidelines, CaseRepository, CorpusError, GuidelineCorpus, GuidelineDoc,
    SoapCase,
};
use crate::graph::{
    extract_graph, segment_guideline, GraphError, KnowledgeGraph, RelationRuleSet, RuleError,
    SegmentConfig,
};

pub const CASES_FILE: &str = "cases.jsonl";
pub const GUIDELINES_FILE: &str = "guidelines.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const STORE_FILES: [&str; 4] = [CASES_FILE, GUIDELINES_FILE, VOCAB_FILE, GRAPH_FILE];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl StoreError {
    /// Whether the error stems from missing or malformed user input.
    pub fn is_input_error(&self) -> bool {
        match self {
            StoreError::Io { source, .. } => source.kind() == io::ErrorKind::NotFound,
            _ => true,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    pub repo: CaseRepository,
    pub corpus: GuidelineCorpus,
    pub vocab: Vocabulary,
    pub graph: KnowledgeGraph,
}

/// Readers for the raw ingestion inputs.
pub struct IngestSources<R> {
    pub cases: R,
    pub guidelines: R,
    pub vocab: R,
    pub rules: R,
    pub qualifiers: Option<R>,
}

/// Parse, annotate, segment and extract.
pub fn ingest<R: Read>(
    sources: IngestSources<R>,
    segment: &SegmentConfig,
) -> Result<Store, StoreError> {
    let vocab = Vocabulary::from_tsv(sources.vocab)?;
    let mut repo = ingest_cases(BufReader::new(sources.cases))?;
    for case in repo.iter_mut() {
        annotate_case(case, &vocab);
    }
    let corpus = ingest_guidelines(BufReader::new(sources.guidelines))?;
    let rules = RelationRuleSet {
        relations: RelationRuleSet::parse_relation_rules(sources.rules)?,
        qualifiers: match sources.qualifiers {
            Some(q) => RelationRuleSet::parse_qualifier_rules(q)?,
            None => Vec::new(),
        },
    };
    let mut units = Vec::new();
    for doc in corpus.iter() {
        units.extend(segment_guideline(doc, segment)?);
    }
    let graph = extract_graph(&units, &vocab, &rules);
    tracing::info!(
        cases = repo.len(),
        guidelines = corpus.len(),
        units = units.len(),
        nodes = graph.nodes.len(),
        edges = graph.edges.len(),
        "ingested"
    );
    Ok(Store {
        repo,
        corpus,
        vocab,
        graph,
    })
}

/// Open the four input files and ingest them.
pub fn ingest_files(
    cases: &Path,
    guidelines: &Path,
    vocab: &Path,
    rules: &Path,
    qualifiers: Option<&Path>,
    segment: &SegmentConfig,
) -> Result<Store, StoreError> {
    let open = |p: &Path| File::open(p).map_err(io_err(p));
    let sources = IngestSources {
        cases: open(cases)?,
        guidelines: open(guidelines)?,
        vocab: open(vocab)?,
        rules: open(rules)?,
        qualifiers: qualifiers.map(open).transpose()?,
    };
    ingest(sources, segment)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

fn jsonl<T: serde::Serialize>(items: impl Iterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("store records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_store(store: &Store, dir: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(CASES_FILE), jsonl(store.repo.iter()).as_bytes())?;
    write_file(
        &dir.join(GUIDELINES_FILE),
        jsonl(store.corpus.iter()).as_bytes(),
    )?;
    let vocab = serde_json::to_string_pretty(&store.vocab).expect("vocabulary serializes") + "\n";
    write_file(&dir.join(VOCAB_FILE), vocab.as_bytes())?;
    write_file(
        &dir.join(GRAPH_FILE),
        (store.graph.to_json() + "\n").as_bytes(),
    )?;
    Ok(())
}

fn parse_err(path: &Path, reason: impl ToString) -> StoreError {
    StoreError::Parse {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|e| parse_err(path, e))
}

pub fn read_store(dir: &Path) -> Result<Store, StoreError> {
    let repo = CaseRepository::from_cases(read_jsonl::<SoapCase>(&dir.join(CASES_FILE))?)?;
    let corpus =
        GuidelineCorpus::from_docs(read_jsonl::<GuidelineDoc>(&dir.join(GUIDELINES_FILE))?)?;
    let vocab: Vocabulary = read_json(&dir.join(VOCAB_FILE))?;
    let graph: KnowledgeGraph = read_json(&dir.join(GRAPH_FILE))?;
    Ok(Store {
        repo,
        corpus,
        vocab,
        graph,
    })
}

/// SHA-256 of each store file, keyed by file name.
pub fn store_hashes(dir: &Path) -> Result<BTreeMap<String, String>, StoreError> {
    STORE_FILES
        .iter()
        .map(|name| {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            Ok((name.to_string(), hex::encode(Sha256::digest(&bytes))))
        })
        .collect()
}

/// Copy the store files from `from` into `to`.
pub fn copy_store(from: &Path, to: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for name in STORE_FILES {
        let src = from.join(name);
        fs::copy(&src, to.join(name)).map_err(io_err(&src))?;
    }
    Ok(())
}
