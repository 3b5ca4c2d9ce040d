//! Hybrid keyword + semantic scoring, similar-patient ranking, graph-conditioned
//! guideline retrieval, evidence aggregation and query-conditioned saliency.
//!
//! Every score here lies in `[0, 1]`. Rankings sort by descending score and
//! break ties by ascending artifact id, so results are fully deterministic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::CommunitySummary;
use crate::concepts::{Category, ConceptMention};
use crate::config::{CategoryWeights, HybridWeights};
use crate::corpus::{
    Authority, CaseRepository, GuidelineCorpus, SoapCase, SoapSection, SourceSpan,
};
use crate::embed::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::graph::{KnowledgeGraph, RelationType};
use crate::index::{community_artifact_id, EvidenceIndex, Modality};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("case repository is empty")]
    EmptyRepository,
    #[error("no guideline communities indexed")]
    NoCommunities,
    #[error("index has no {modality} vector for {id:?}")]
    MissingVector { modality: &'static str, id: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Concept ids with their categories.
pub type ConceptSet = BTreeMap<String, Category>;

pub fn concept_set<'a>(mentions: impl IntoIterator<Item = &'a ConceptMention>) -> ConceptSet {
    mentions
        .into_iter()
        .map(|m| (m.concept_id.clone(), m.category))
        .collect()
}

/// Concepts of a case used for keyword matching: those found in S, O and A.
/// The plan is left out for the same reason it is left out of case embeddings.
pub fn retrieval_concepts(case: &SoapCase) -> ConceptSet {
    concept_set(
        case.concepts
            .iter()
            .filter(|m| m.section != Some(SoapSection::Plan)),
    )
}

/// Weighted Jaccard: category weight summed over the intersection divided by
/// the same sum over the union. Two empty sets score 0.
pub fn keyword_score(query: &ConceptSet, case: &ConceptSet, weights: &CategoryWeights) -> f64 {
    let mut inter = 0.0;
    let mut union = 0.0;
    // merge walk over both sorted key sets keeps the summation order symmetric
    let mut a = query.iter().peekable();
    let mut b = case.iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some((ka, ca)), Some((kb, _))) if ka == kb => {
                let w = weights.get(**ca);
                inter += w;
                union += w;
                a.next();
                b.next();
            }
            (Some((ka, ca)), Some((kb, _))) if ka < kb => {
                union += weights.get(**ca);
                a.next();
            }
            (Some(_), Some((_, cb))) => {
                union += weights.get(**cb);
                b.next();
            }
            (Some((_, ca)), None) => {
                union += weights.get(**ca);
                a.next();
            }
            (None, Some((_, cb))) => {
                union += weights.get(**cb);
                b.next();
            }
            (None, None) => break,
        }
    }
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Cosine of two unit vectors shifted into `[0, 1]`.
pub fn semantic_score(query: &EmbeddingVector, case: &EmbeddingVector) -> Result<f64, EmbedError> {
    let cos = query.dot(case)?.clamp(-1.0, 1.0);
    Ok((1.0 + cos) / 2.0)
}

/// Convex combination; `lambda` weighs the semantic side.
pub fn hybrid_score(kw: f64, sem: f64, lambda: f64) -> f64 {
    lambda * sem + (1.0 - lambda) * kw
}

/// An embedded query with its keyword concepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub query_id: String,
    pub vector: EmbeddingVector,
    pub concepts: ConceptSet,
}

impl Query {
    /// Embed a case's S/O/A text. `case.concepts` should already be filled.
    pub fn from_case(
        case: &SoapCase,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, EmbedError> {
        Ok(Self {
            query_id: case.case_id.clone(),
            vector: provider.embed(&case.retrieval_text())?,
            concepts: retrieval_concepts(case),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub case_id: String,
    pub hybrid: f64,
    pub kw: f64,
    pub sem: f64,
    pub matched_concepts: Vec<(String, Category)>,
}

#[derive(Debug, Clone)]
struct PoolCase {
    case_id: String,
    concepts: ConceptSet,
    vector: EmbeddingVector,
}

/// Every repository case with its keyword concepts and indexed vector.
#[derive(Debug, Clone, Default)]
pub struct PatientPool {
    cases: Vec<PoolCase>,
}

impl PatientPool {
    pub fn build(repo: &CaseRepository, index: &EvidenceIndex) -> Result<Self, RetrievalError> {
        let partition = index.partition(Modality::PatientCase);
        let cases = repo
            .iter()
            .map(|c| {
                let vector = partition.get(&c.case_id).cloned().ok_or_else(|| {
                    RetrievalError::MissingVector {
                        modality: Modality::PatientCase.as_str(),
                        id: c.case_id.clone(),
                    }
                })?;
                Ok(PoolCase {
                    case_id: c.case_id.clone(),
                    concepts: retrieval_concepts(c),
                    vector,
                })
            })
            .collect::<Result<_, RetrievalError>>()?;
        Ok(Self { cases })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

fn sort_desc_by_id<T>(items: &mut [T], score: impl Fn(&T) -> f64, id: impl Fn(&T) -> &str) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)).then_with(|| id(a).cmp(id(b))));
}

/// Exact scan over the pool. The case with the query's own id is skipped.
pub fn retrieve_similar_patients(
    query: &Query,
    pool: &PatientPool,
    weights: &HybridWeights,
    k: usize,
) -> Result<Vec<ScoredCase>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if pool.is_empty() {
        return Err(RetrievalError::EmptyRepository);
    }
    let mut scored = pool
        .cases
        .iter()
        .filter(|c| c.case_id != query.query_id)
        .map(|c| {
            let kw = keyword_score(&query.concepts, &c.concepts, &weights.category_weights);
            let sem = semantic_score(&query.vector, &c.vector)?;
            let matched_concepts = query
                .concepts
                .iter()
                .filter(|(id, _)| c.concepts.contains_key(*id))
                .map(|(id, cat)| (id.clone(), *cat))
                .collect();
            Ok(ScoredCase {
                case_id: c.case_id.clone(),
                hybrid: hybrid_score(kw, sem, weights.lambda),
                kw,
                sem,
                matched_concepts,
            })
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    sort_desc_by_id(&mut scored, |s| s.hybrid, |s| &s.case_id);
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone)]
struct PoolCommunity {
    community_id: usize,
    concepts: ConceptSet,
    vector: EmbeddingVector,
    summary: CommunitySummary,
}

/// Community summaries with their member concepts and indexed vectors.
#[derive(Debug, Clone, Default)]
pub struct CommunityPool {
    communities: Vec<PoolCommunity>,
}

impl CommunityPool {
    pub fn build(
        summaries: &[CommunitySummary],
        graph: &KnowledgeGraph,
        index: &EvidenceIndex,
    ) -> Result<Self, RetrievalError> {
        let partition = index.partition(Modality::CommunitySummary);
        let communities = summaries
            .iter()
            .map(|s| {
                let id = community_artifact_id(s.community_id);
                let vector = partition
                    .get(&id)
                    .cloned()
                    .ok_or(RetrievalError::MissingVector {
                        modality: Modality::CommunitySummary.as_str(),
                        id,
                    })?;
                let concepts = s
                    .member_entities
                    .iter()
                    .filter_map(|e| graph.nodes.get(e))
                    .map(|n| (n.concept_id.clone(), n.category))
                    .collect();
                Ok(PoolCommunity {
                    community_id: s.community_id,
                    concepts,
                    vector,
                    summary: s.clone(),
                })
            })
            .collect::<Result<_, RetrievalError>>()?;
        Ok(Self { communities })
    }

    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }
}

/// A guideline unit carried as evidence, with its full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitEvidence {
    pub unit_id: String,
    pub doc_id: String,
    pub authority: Authority,
    pub section_path: Vec<String>,
    pub span: SourceSpan,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEvidence {
    pub edge_id: String,
    pub relation: RelationType,
    pub src: String,
    pub src_concept: String,
    pub dst: String,
    pub dst_concept: String,
    pub qualifiers: BTreeMap<String, String>,
    pub supporting_units: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineHit {
    pub community_id: usize,
    pub score: f64,
    pub sem: f64,
    pub overlap: f64,
    pub summary_text: String,
    /// The community's top units in rank order, then any further units that
    /// support the expanded relations.
    pub units: Vec<UnitEvidence>,
    pub relations: Vec<RelationEvidence>,
}

fn unit_evidence(
    graph: &KnowledgeGraph,
    corpus: &GuidelineCorpus,
    unit_id: &str,
) -> Option<UnitEvidence> {
    let u = graph.unit_index.get(unit_id)?;
    Some(UnitEvidence {
        unit_id: u.unit_id.clone(),
        doc_id: u.doc_id.clone(),
        authority: corpus
            .get(&u.doc_id)
            .map(|d| d.authority)
            .unwrap_or(Authority::Other),
        section_path: u.section_path.clone(),
        span: u.span.clone(),
        text: u.text.clone(),
    })
}

/// Community score `alpha * sem + (1 - alpha) * overlap`, top-k expanded with
/// top units and the non-`co-occurs` edges incident to query concepts that
/// belong to the community.
pub fn retrieve_guideline_evidence(
    query: &Query,
    pool: &CommunityPool,
    graph: &KnowledgeGraph,
    corpus: &GuidelineCorpus,
    alpha: f64,
    weights: &CategoryWeights,
    k: usize,
) -> Result<Vec<GuidelineHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if pool.is_empty() {
        return Err(RetrievalError::NoCommunities);
    }
    let mut scored = pool
        .communities
        .iter()
        .map(|c| {
            let sem = semantic_score(&query.vector, &c.vector)?;
            let overlap = keyword_score(&query.concepts, &c.concepts, weights);
            Ok((c, hybrid_score(overlap, sem, alpha), sem, overlap))
        })
        .collect::<Result<Vec<_>, EmbedError>>()?;
    // ids are integers: compare numerically for ties
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.community_id.cmp(&b.0.community_id))
    });
    scored.truncate(k);

    let incident = graph.incident_edges();
    Ok(scored
        .into_iter()
        .map(|(c, score, sem, overlap)| {
            let mut unit_ids: Vec<String> = c.summary.top_units.clone();
            let mut seen: BTreeSet<String> = unit_ids.iter().cloned().collect();
            let mut edges: BTreeSet<usize> = BTreeSet::new();
            for concept in query
                .concepts
                .keys()
                .filter(|k| c.concepts.contains_key(*k))
            {
                let entity = crate::graph::entity_id(concept);
                for &i in incident.get(entity.as_str()).into_iter().flatten() {
                    if graph.edges[i].relation != RelationType::CoOccurs {
                        edges.insert(i);
                    }
                }
            }
            let mut relations: Vec<RelationEvidence> = edges
                .into_iter()
                .map(|i| {
                    let e = &graph.edges[i];
                    let concept_of = |id: &str| {
                        graph
                            .nodes
                            .get(id)
                            .map(|n| n.concept_id.clone())
                            .unwrap_or_default()
                    };
                    RelationEvidence {
                        edge_id: e.edge_id.clone(),
                        relation: e.relation,
                        src: e.src.clone(),
                        src_concept: concept_of(&e.src),
                        dst: e.dst.clone(),
                        dst_concept: concept_of(&e.dst),
                        qualifiers: e.qualifiers.clone(),
                        supporting_units: e.supporting_units.iter().cloned().collect(),
                    }
                })
                .collect();
            relations.sort_by(|a, b| a.edge_id.cmp(&b.edge_id));
            for r in &relations {
                for u in &r.supporting_units {
                    if seen.insert(u.clone()) {
                        unit_ids.push(u.clone());
                    }
                }
            }
            GuidelineHit {
                community_id: c.community_id,
                score,
                sem,
                overlap,
                summary_text: c.summary.summary_text.clone(),
                units: unit_ids
                    .iter()
                    .filter_map(|u| unit_evidence(graph, corpus, u))
                    .collect(),
                relations,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub use_patients: bool,
    pub use_guidelines: bool,
}

impl Toggles {
    pub const BOTH: Toggles = Toggles {
        use_patients: true,
        use_guidelines: true,
    };
    pub const NONE: Toggles = Toggles {
        use_patients: false,
        use_guidelines: false,
    };

    pub fn all() -> [Toggles; 4] {
        [
            Toggles::NONE,
            Toggles {
                use_patients: true,
                use_guidelines: false,
            },
            Toggles {
                use_patients: false,
                use_guidelines: true,
            },
            Toggles::BOTH,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub query_id: String,
    pub guideline_hits: Vec<GuidelineHit>,
    pub patient_hits: Vec<ScoredCase>,
    pub toggles: Toggles,
}

/// Borrowed view of everything the retrievers read.
#[derive(Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub patients: &'a PatientPool,
    pub communities: &'a CommunityPool,
    pub graph: &'a KnowledgeGraph,
    pub corpus: &'a GuidelineCorpus,
    pub weights: &'a HybridWeights,
    pub alpha: f64,
}

/// Run the enabled retrievers only.
pub fn assemble_evidence(
    ctx: RetrievalContext<'_>,
    query: &Query,
    toggles: Toggles,
    k_patients: usize,
    k_communities: usize,
) -> Result<EvidenceSet, RetrievalError> {
    let patient_hits = if toggles.use_patients {
        retrieve_similar_patients(query, ctx.patients, ctx.weights, k_patients)?
    } else {
        Vec::new()
    };
    let guideline_hits = if toggles.use_guidelines {
        retrieve_guideline_evidence(
            query,
            ctx.communities,
            ctx.graph,
            ctx.corpus,
            ctx.alpha,
            &ctx.weights.category_weights,
            k_communities,
        )?
    } else {
        Vec::new()
    };
    Ok(EvidenceSet {
        query_id: query.query_id.clone(),
        guideline_hits,
        patient_hits,
        toggles,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    None,
    Important,
    HighlyImportant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for SaliencyThresholds {
    fn default() -> Self {
        Self {
            low: 0.5,
            high: 0.75,
        }
    }
}

impl SaliencyThresholds {
    pub fn level(&self, score: f64) -> Level {
        if score >= self.high {
            Level::HighlyImportant
        } else if score >= self.low {
            Level::Important
        } else {
            Level::None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyLevel {
    pub concept_id: String,
    pub surface: String,
    pub score: f64,
    pub level: Level,
}

/// Score each concept by the semantic score of its surface text against the
/// query vector. A concept mentioned under several surfaces keeps its best one.
/// Sorted by descending score, then concept id.
pub fn saliency_levels(
    query: &EmbeddingVector,
    mentions: &[ConceptMention],
    provider: &dyn EmbeddingProvider,
    thresholds: SaliencyThresholds,
) -> Result<Vec<SaliencyLevel>, EmbedError> {
    let surfaces: BTreeSet<(&str, &str)> = mentions
        .iter()
        .map(|m| (m.concept_id.as_str(), m.surface.as_str()))
        .collect();
    let texts: Vec<&str> = surfaces.iter().map(|(_, s)| *s).collect();
    let vectors = provider.embed_batch(&texts)?;
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for ((concept, surface), v) in surfaces.iter().zip(&vectors) {
        let score = semantic_score(query, v)?;
        let slot = best.entry(concept).or_insert((score, surface));
        if score > slot.0 {
            *slot = (score, surface);
        }
    }
    let mut out: Vec<SaliencyLevel> = best
        .into_iter()
        .map(|(concept, (score, surface))| SaliencyLevel {
            concept_id: concept.to_string(),
            surface: surface.to_string(),
            score,
            level: thresholds.level(score),
        })
        .collect();
    sort_desc_by_id(&mut out, |s| s.score, |s| &s.concept_id);
    Ok(out)
}
