//! Guideline knowledge graph: text units, entities, typed relations, provenance.

mod extract;
mod segment;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concepts::Category;
use crate::corpus::SourceSpan;

pub use extract::{
    extract_graph, extract_graph_with, ExtractedRelation, QualifierRule, RelationExtractor,
    RelationRule, RelationRuleSet, RuleError,
};
pub use segment::{segment_guideline, SegmentConfig};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("document {0:?} has no text to segment")]
    EmptyDocument(String),
    #[error("unknown unit id {0:?}")]
    UnknownUnitId(String),
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
}

/// A provenance-anchored guideline segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextUnit {
    pub unit_id: String,
    pub doc_id: String,
    pub text: String,
    pub span: SourceSpan,
    pub section_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityNode {
    pub entity_id: String,
    pub concept_id: String,
    pub category: Category,
    pub description: String,
    pub supporting_units: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationType {
    Indication,
    Contraindication,
    Monitoring,
    Escalation,
    CoOccurs,
}

impl RelationType {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationType::Indication => "indication",
            RelationType::Contraindication => "contraindication",
            RelationType::Monitoring => "monitoring",
            RelationType::Escalation => "escalation",
            RelationType::CoOccurs => "co-occurs",
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = [
            RelationType::Indication,
            RelationType::Contraindication,
            RelationType::Monitoring,
            RelationType::Escalation,
            RelationType::CoOccurs,
        ];
        all.into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub edge_id: String,
    pub src: String,
    pub dst: String,
    pub relation: RelationType,
    pub qualifiers: BTreeMap<String, String>,
    pub supporting_units: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub nodes: BTreeMap<String, EntityNode>,
    pub edges: Vec<RelationEdge>,
    pub unit_index: BTreeMap<String, TextUnit>,
}

/// Where a unit came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub section_path: Vec<String>,
    pub text: String,
    pub span: SourceSpan,
}

/// Entity id for a concept.
pub fn entity_id(concept_id: &str) -> String {
    format!("ent:{concept_id}")
}

impl KnowledgeGraph {
    /// Map from entity id to the ids of edges incident to it.
    pub fn incident_edges(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.edges.iter().enumerate() {
            out.entry(e.src.as_str()).or_default().push(i);
            out.entry(e.dst.as_str()).or_default().push(i);
        }
        out
    }

    /// Node for a concept, if the concept occurs anywhere in the graph.
    pub fn node_for_concept(&self, concept_id: &str) -> Option<&EntityNode> {
        self.nodes.get(&entity_id(concept_id))
    }

    /// Every dangling reference, as human-readable strings. Empty when intact.
    pub fn integrity_violations(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for n in self.nodes.values() {
            if n.supporting_units.is_empty() {
                problems.push(format!("node {} has no support", n.entity_id));
            }
            for u in &n.supporting_units {
                if !self.unit_index.contains_key(u) {
                    problems.push(format!("node {} cites missing unit {u}", n.entity_id));
                }
            }
        }
        for e in &self.edges {
            for end in [&e.src, &e.dst] {
                if !self.nodes.contains_key(end) {
                    problems.push(format!("edge {} endpoint {end} missing", e.edge_id));
                }
            }
            if e.src == e.dst {
                problems.push(format!("edge {} is a self-loop", e.edge_id));
            }
            if e.supporting_units.is_empty() {
                problems.push(format!("edge {} has no support", e.edge_id));
            }
            for u in &e.supporting_units {
                if !self.unit_index.contains_key(u) {
                    problems.push(format!("edge {} cites missing unit {u}", e.edge_id));
                }
            }
        }
        problems
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }
}

/// Originating document, section path and exact text of a unit.
pub fn resolve_provenance(graph: &KnowledgeGraph, unit_id: &str) -> Result<Provenance, GraphError> {
    let unit = graph
        .unit_index
        .get(unit_id)
        .ok_or_else(|| GraphError::UnknownUnitId(unit_id.to_string()))?;
    Ok(Provenance {
        doc_id: unit.doc_id.clone(),
        section_path: unit.section_path.clone(),
        text: unit.text.clone(),
        span: unit.span.clone(),
    })
}
