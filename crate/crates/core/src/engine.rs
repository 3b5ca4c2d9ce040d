//! Immutable retrieval snapshot: stores, communities, summaries, index and the
//! embedder that built it.
//!
//! A snapshot directory holds the persisted index plus:
//!
//! ```text
//! store/              copy of the ingestion stores
//! communities.json
//! summaries.json
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{
    detect_communities, summarize_all, CommunityAssignment, CommunityError, CommunitySummary,
};
use crate::concepts::{annotate_case, ConceptMention};
use crate::config::{HybridWeights, RetrievalConfig};
use crate::corpus::{parse_soap, CaseSource, CorpusError, SoapCase};
use crate::embed::{provider_from_id, EmbedError, EmbeddingProvider};
use crate::graph::{resolve_provenance, GraphError, Provenance};
use crate::index::{
    build_index, load_index, persist_index, EvidenceIndex, IndexError, IndexInputs, Manifest,
};
use crate::qa::{LlmClient, LlmError, LlmParams, PromptPackage, DEFAULT_PREAMBLE};
use crate::retrieval::{
    assemble_evidence, saliency_levels, CommunityPool, EvidenceSet, PatientPool, Query,
    RetrievalContext, RetrievalError, SaliencyLevel, SaliencyThresholds, Toggles,
};
use crate::store::{copy_store, io_err, read_json, read_store, store_hashes, Store, StoreError};

pub const STORE_DIR: &str = "store";
pub const COMMUNITIES_FILE: &str = "communities.json";
pub const SUMMARIES_FILE: &str = "summaries.json";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Community(#[from] CommunityError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl EngineError {
    /// Whether the failure came from a remote embedder or LLM.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            EngineError::Embed(EmbedError::ProviderUnavailable(_))
                | EngineError::Index(IndexError::Embed(EmbedError::ProviderUnavailable(_)))
                | EngineError::Retrieval(RetrievalError::Embed(EmbedError::ProviderUnavailable(_)))
                | EngineError::Llm(_)
        )
    }
}

/// Detect communities, summarize, embed everything and write a snapshot
/// directory at `out` from the stores in `store_dir`.
pub fn build_snapshot(
    store_dir: &Path,
    out: &Path,
    provider: &dyn EmbeddingProvider,
    seed: u64,
    summary_chars: usize,
) -> Result<Manifest, EngineError> {
    let store = read_store(store_dir)?;
    let assignment = detect_communities(&store.graph, seed)?;
    let summaries = summarize_all(&store.graph, &assignment, None, summary_chars);
    let inputs = IndexInputs {
        graph: &store.graph,
        summaries: &summaries,
        repo: &store.repo,
        corpus_hashes: store_hashes(store_dir)?,
    };
    let index = build_index(&inputs, provider, seed)?;
    persist_index(&index, out)?;
    copy_store(store_dir, &out.join(STORE_DIR))?;
    let write = |name: &str, json: String| -> Result<(), StoreError> {
        let path = out.join(name);
        fs::write(&path, json + "\n").map_err(io_err(&path))
    };
    write(
        COMMUNITIES_FILE,
        serde_json::to_string_pretty(&assignment).expect("assignment serializes"),
    )?;
    write(
        SUMMARIES_FILE,
        serde_json::to_string_pretty(&summaries).expect("summaries serialize"),
    )?;
    Ok(index.manifest)
}

/// Toggles and cut-offs for one retrieval; unset `k`s take config defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieveOptions {
    pub use_patients: bool,
    pub use_guidelines: bool,
    pub k_patients: Option<usize>,
    pub k_communities: Option<usize>,
}

impl Default for RetrieveOptions {
    fn default() -> Self {
        Self {
            use_patients: true,
            use_guidelines: true,
            k_patients: None,
            k_communities: None,
        }
    }
}

impl RetrieveOptions {
    pub fn toggles(&self) -> Toggles {
        Toggles {
            use_patients: self.use_patients,
            use_guidelines: self.use_guidelines,
        }
    }
}

impl From<Toggles> for RetrieveOptions {
    fn from(t: Toggles) -> Self {
        Self {
            use_patients: t.use_patients,
            use_guidelines: t.use_guidelines,
            ..Default::default()
        }
    }
}

/// A retrieved case as shown to the user, with saliency against the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDetail {
    pub case_id: String,
    pub source: CaseSource,
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
    pub concepts: Vec<ConceptMention>,
    pub saliency: Vec<SaliencyLevel>,
}

/// Evidence set plus everything a client needs to render it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub evidence: EvidenceSet,
    /// Saliency of the query case's own concepts.
    pub query_saliency: Vec<SaliencyLevel>,
    /// One entry per patient hit, in rank order.
    pub patients: Vec<PatientDetail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaOutcome {
    pub answer: String,
    pub prompt_echo: String,
    pub package: PromptPackage,
}

pub struct Engine {
    pub store: Store,
    pub assignment: CommunityAssignment,
    pub summaries: Vec<CommunitySummary>,
    pub index: EvidenceIndex,
    config: RetrievalConfig,
    weights: HybridWeights,
    provider: Box<dyn EmbeddingProvider>,
    patients: PatientPool,
    communities: CommunityPool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("cases", &self.store.repo.len())
            .field("communities", &self.summaries.len())
            .field("embedder", &self.provider.id())
            .finish()
    }
}

impl Engine {
    pub fn from_parts(
        store: Store,
        assignment: CommunityAssignment,
        summaries: Vec<CommunitySummary>,
        index: EvidenceIndex,
        provider: Box<dyn EmbeddingProvider>,
        config: RetrievalConfig,
    ) -> Result<Self, EngineError> {
        index.check_embedder(&provider.id())?;
        let patients = PatientPool::build(&store.repo, &index)?;
        let communities = CommunityPool::build(&summaries, &store.graph, &index)?;
        Ok(Self {
            store,
            assignment,
            summaries,
            index,
            weights: config.hybrid_weights(),
            config,
            provider,
            patients,
            communities,
        })
    }

    /// Build a snapshot in memory, without touching disk.
    pub fn build(
        store: Store,
        provider: Box<dyn EmbeddingProvider>,
        seed: u64,
        summary_chars: usize,
        config: RetrievalConfig,
    ) -> Result<Self, EngineError> {
        let assignment = detect_communities(&store.graph, seed)?;
        let summaries = summarize_all(&store.graph, &assignment, None, summary_chars);
        let inputs = IndexInputs {
            graph: &store.graph,
            summaries: &summaries,
            repo: &store.repo,
            corpus_hashes: Default::default(),
        };
        let index = build_index(&inputs, provider.as_ref(), seed)?;
        Self::from_parts(store, assignment, summaries, index, provider, config)
    }

    /// Load a snapshot directory. Without an explicit provider the one named
    /// in the manifest is reconstructed.
    pub fn open(
        dir: &Path,
        provider: Option<Box<dyn EmbeddingProvider>>,
        config: RetrievalConfig,
    ) -> Result<Self, EngineError> {
        let index = load_index(dir)?;
        let provider = match provider {
            Some(p) => p,
            None => provider_from_id(&index.manifest.embedder_id)?,
        };
        let store = read_store(&dir.join(STORE_DIR))?;
        let assignment: CommunityAssignment = read_json(&dir.join(COMMUNITIES_FILE))?;
        let summaries: Vec<CommunitySummary> = read_json(&dir.join(SUMMARIES_FILE))?;
        Self::from_parts(store, assignment, summaries, index, provider, config)
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn provider(&self) -> &dyn EmbeddingProvider {
        self.provider.as_ref()
    }

    /// Parse raw SOAP text and annotate it with the snapshot vocabulary.
    pub fn lock_case(&self, raw: &str, case_id: &str) -> Result<SoapCase, CorpusError> {
        let mut case = parse_soap(raw, case_id, CaseSource::Synthetic)?;
        annotate_case(&mut case, &self.store.vocab);
        Ok(case)
    }

    /// Annotate a case that was not produced by `lock_case`.
    pub fn annotate(&self, case: &mut SoapCase) {
        annotate_case(case, &self.store.vocab);
    }

    pub fn query(&self, case: &SoapCase) -> Result<Query, EngineError> {
        Ok(Query::from_case(case, self.provider.as_ref())?)
    }

    fn context<'a>(&'a self, weights: &'a HybridWeights) -> RetrievalContext<'a> {
        RetrievalContext {
            patients: &self.patients,
            communities: &self.communities,
            graph: &self.store.graph,
            corpus: &self.store.corpus,
            weights,
            alpha: self.config.alpha,
        }
    }

    pub fn evidence(
        &self,
        query: &Query,
        opts: &RetrieveOptions,
    ) -> Result<EvidenceSet, EngineError> {
        self.evidence_with(query, opts, &self.weights)
    }

    /// Same as [`Engine::evidence`] under explicit hybrid weights.
    pub fn evidence_with(
        &self,
        query: &Query,
        opts: &RetrieveOptions,
        weights: &HybridWeights,
    ) -> Result<EvidenceSet, EngineError> {
        Ok(assemble_evidence(
            self.context(weights),
            query,
            opts.toggles(),
            opts.k_patients.unwrap_or(self.config.k_patients),
            opts.k_communities.unwrap_or(self.config.k_communities),
        )?)
    }

    pub fn thresholds(&self) -> SaliencyThresholds {
        SaliencyThresholds {
            low: self.config.theta_low,
            high: self.config.theta_high,
        }
    }

    /// Evidence plus saliency for the query case and every retrieved case.
    pub fn report(
        &self,
        case: &SoapCase,
        query: &Query,
        opts: &RetrieveOptions,
    ) -> Result<EvidenceReport, EngineError> {
        let evidence = self.evidence(query, opts)?;
        let t = self.thresholds();
        let query_saliency =
            saliency_levels(&query.vector, &case.concepts, self.provider.as_ref(), t)?;
        let patients = evidence
            .patient_hits
            .iter()
            .filter_map(|h| self.store.repo.get(&h.case_id))
            .map(|c| {
                Ok(PatientDetail {
                    case_id: c.case_id.clone(),
                    source: c.source,
                    subjective: c.subjective.clone(),
                    objective: c.objective.clone(),
                    assessment: c.assessment.clone(),
                    plan: c.plan.clone(),
                    concepts: c.concepts.clone(),
                    saliency: saliency_levels(
                        &query.vector,
                        &c.concepts,
                        self.provider.as_ref(),
                        t,
                    )?,
                })
            })
            .collect::<Result<_, EmbedError>>()?;
        Ok(EvidenceReport {
            evidence,
            query_saliency,
            patients,
        })
    }

    pub fn retrieve(
        &self,
        case: &SoapCase,
        opts: &RetrieveOptions,
    ) -> Result<EvidenceReport, EngineError> {
        let query = self.query(case)?;
        self.report(case, &query, opts)
    }

    pub fn prompt(&self, case: &SoapCase, evidence: &EvidenceSet, question: &str) -> PromptPackage {
        PromptPackage::build(case, evidence, &self.store.repo, question, DEFAULT_PREAMBLE)
    }

    /// Retrieve, package and ask.
    pub fn answer(
        &self,
        case: &SoapCase,
        query: &Query,
        question: &str,
        opts: &RetrieveOptions,
        client: &dyn LlmClient,
        params: &LlmParams,
    ) -> Result<QaOutcome, EngineError> {
        let evidence = self.evidence(query, opts)?;
        let package = self.prompt(case, &evidence, question);
        let prompt_echo = package.render();
        let answer = client.complete(&prompt_echo, params)?;
        Ok(QaOutcome {
            answer,
            prompt_echo,
            package,
        })
    }

    pub fn provenance(&self, unit_id: &str) -> Result<Provenance, GraphError> {
        resolve_provenance(&self.store.graph, unit_id)
    }
}
