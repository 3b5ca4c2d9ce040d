//! Dual-evidence clinical retrieval.
//!
//! Guideline documents become provenance-anchored text units, a typed
//! knowledge graph and summarized communities. Patient cases in SOAP form are
//! ranked by a hybrid of weighted concept overlap and embedding similarity.
//! Both evidence streams can be toggled independently and packaged into a
//! prompt for a pluggable LLM client.

pub mod community;
pub mod concepts;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod graph;
pub mod index;
pub mod qa;
pub mod retrieval;
pub mod store;
pub mod synth;
pub mod text;

pub use community::{CommunityAssignment, CommunitySummary};
pub use concepts::{Category, ConceptMention, Vocabulary};
pub use config::{AppConfig, CategoryWeights, HybridWeights, RetrievalConfig};
pub use corpus::{
    Authority, CaseRepository, CaseSource, GuidelineCorpus, GuidelineDoc, SoapCase, SoapSection,
    SourceSpan,
};
pub use embed::{EmbeddingProvider, EmbeddingVector, HashedTrigramEmbedder};
pub use engine::{Engine, EngineError, EvidenceReport, RetrieveOptions};
pub use graph::{KnowledgeGraph, Provenance, RelationType, TextUnit};
pub use index::{EvidenceIndex, Modality};
pub use qa::{LlmClient, LlmParams, PromptPackage};
pub use retrieval::{EvidenceSet, Query, SaliencyLevel, ScoredCase, Toggles};
pub use store::Store;
