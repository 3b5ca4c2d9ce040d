//! Rule-based entity and relation extraction over text units.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use regex::{Regex, RegexBuilder};
use thiserror::Error;

use super::{entity_id, EntityNode, KnowledgeGraph, RelationEdge, RelationType, TextUnit};
use crate::concepts::{is_boundary, Category, ConceptExtractor, ConceptMention, Vocabulary};
use crate::text::fold_char;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("qualifier line {line}: bad pattern: {source}")]
    BadPattern {
        line: usize,
        #[source]
        source: regex::Error,
    },
}

/// A trigger phrase that links the nearest concepts of two categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationRule {
    pub trigger: String,
    pub relation: RelationType,
    pub src_category: Category,
    pub dst_category: Category,
}

/// A pattern whose match fills a qualifier. The value is the first capture
/// group when the pattern has one, otherwise the whole match.
#[derive(Debug, Clone)]
pub struct QualifierRule {
    pub pattern: Regex,
    pub key: String,
}

impl QualifierRule {
    pub fn new(pattern: &str, key: impl Into<String>) -> Result<Self, regex::Error> {
        Ok(Self {
            pattern: RegexBuilder::new(pattern).case_insensitive(true).build()?,
            key: key.into(),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RelationRuleSet {
    pub relations: Vec<RelationRule>,
    pub qualifiers: Vec<QualifierRule>,
}

/// A relation proposed for one unit, in concept space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedRelation {
    pub src_concept: String,
    pub dst_concept: String,
    pub relation: RelationType,
    pub qualifiers: BTreeMap<String, String>,
}

/// Pluggable relation extractor. Returning nothing for a unit with two or
/// more concepts makes those concepts fall back to `co-occurs` edges.
pub trait RelationExtractor: Send + Sync {
    fn relations(&self, unit: &TextUnit, mentions: &[ConceptMention]) -> Vec<ExtractedRelation>;
}

fn data_lines<R: Read>(mut reader: R) -> Result<Vec<(usize, Vec<String>)>, RuleError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| RuleError::Malformed {
            line: 0,
            reason: e.to_string(),
        })?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').map(|f| f.trim().to_string()).collect()))
        .collect())
}

impl RelationRuleSet {
    /// Parse `trigger<TAB>relation<TAB>src_category<TAB>dst_category` lines.
    pub fn parse_relation_rules<R: Read>(reader: R) -> Result<Vec<RelationRule>, RuleError> {
        data_lines(reader)?
            .into_iter()
            .map(|(line, f)| {
                let bad = |reason: String| RuleError::Malformed { line, reason };
                if f.len() != 4 {
                    return Err(bad(format!("expected 4 columns, found {}", f.len())));
                }
                if f[0].is_empty() {
                    return Err(bad("empty trigger".into()));
                }
                Ok(RelationRule {
                    trigger: f[0].clone(),
                    relation: f[1]
                        .parse()
                        .map_err(|v| bad(format!("unknown relation {v:?}")))?,
                    src_category: f[2]
                        .parse()
                        .map_err(|v| bad(format!("unknown category {v:?}")))?,
                    dst_category: f[3]
                        .parse()
                        .map_err(|v| bad(format!("unknown category {v:?}")))?,
                })
            })
            .collect()
    }

    /// Parse `pattern<TAB>qualifier_key` lines; patterns are case-insensitive regexes.
    pub fn parse_qualifier_rules<R: Read>(reader: R) -> Result<Vec<QualifierRule>, RuleError> {
        data_lines(reader)?
            .into_iter()
            .map(|(line, f)| {
                if f.len() != 2 || f[1].is_empty() {
                    return Err(RuleError::Malformed {
                        line,
                        reason: "expected pattern and qualifier key".into(),
                    });
                }
                QualifierRule::new(&f[0], f[1].clone())
                    .map_err(|source| RuleError::BadPattern { line, source })
            })
            .collect()
    }

    fn qualifiers_in(&self, text: &str) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for q in &self.qualifiers {
            if let Some(caps) = q.pattern.captures(text) {
                let value = caps
                    .get(1)
                    .or_else(|| caps.get(0))
                    .map(|m| m.as_str().to_string());
                if let Some(v) = value {
                    out.entry(q.key.clone()).or_insert(v);
                }
            }
        }
        out
    }
}

/// Case-insensitive, word-bounded occurrences of `needle` in `hay` (folded chars).
fn find_phrase(hay: &[char], needle: &[char]) -> Vec<(usize, usize)> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&s| {
            hay[s..s + needle.len()] == *needle
                && is_boundary(hay, s)
                && is_boundary(hay, s + needle.len())
        })
        .map(|s| (s, s + needle.len()))
        .collect()
}

fn distance(span: (usize, usize), trigger: (usize, usize)) -> usize {
    // overlapping spans are at distance zero
    trigger
        .0
        .saturating_sub(span.1)
        .max(span.0.saturating_sub(trigger.1))
}

/// Nearest mention of a category to the trigger; leftmost on ties.
fn nearest<'a>(
    mentions: &'a [ConceptMention],
    category: Category,
    trigger: (usize, usize),
    exclude: Option<&str>,
) -> Option<&'a ConceptMention> {
    mentions
        .iter()
        .filter(|m| m.category == category && Some(m.concept_id.as_str()) != exclude)
        .min_by_key(|m| (distance(m.span, trigger), m.span.0))
}

impl RelationExtractor for RelationRuleSet {
    fn relations(&self, unit: &TextUnit, mentions: &[ConceptMention]) -> Vec<ExtractedRelation> {
        let hay: Vec<char> = unit.text.chars().map(fold_char).collect();
        let mut found = Vec::new();
        let mut qualifiers: Option<BTreeMap<String, String>> = None;
        for rule in &self.relations {
            let needle: Vec<char> = rule.trigger.chars().map(fold_char).collect();
            for trig in find_phrase(&hay, &needle) {
                let Some(src) = nearest(mentions, rule.src_category, trig, None) else {
                    continue;
                };
                let Some(dst) = nearest(mentions, rule.dst_category, trig, Some(&src.concept_id))
                else {
                    continue;
                };
                let q = qualifiers.get_or_insert_with(|| self.qualifiers_in(&unit.text));
                found.push(ExtractedRelation {
                    src_concept: src.concept_id.clone(),
                    dst_concept: dst.concept_id.clone(),
                    relation: rule.relation,
                    qualifiers: q.clone(),
                });
            }
        }
        found
    }
}

/// Build the graph with the rule set as relation extractor and the vocabulary
/// as concept extractor.
pub fn extract_graph(
    units: &[TextUnit],
    vocab: &Vocabulary,
    rules: &RelationRuleSet,
) -> KnowledgeGraph {
    extract_graph_with(units, vocab, vocab, rules)
}

/// Build the graph from units with pluggable extractors.
///
/// One node per distinct concept; edges from the relation extractor, or
/// `co-occurs` edges between every concept pair of a unit where it found
/// nothing. Repeated `(src, dst, relation)` edges merge their support.
pub fn extract_graph_with(
    units: &[TextUnit],
    vocab: &Vocabulary,
    concepts: &dyn ConceptExtractor,
    relations: &dyn RelationExtractor,
) -> KnowledgeGraph {
    let mut graph = KnowledgeGraph::default();
    let mut edges: BTreeMap<(String, String, RelationType), RelationEdge> = BTreeMap::new();
    let mut add_edge =
        |src: &str, dst: &str, relation, qualifiers: BTreeMap<String, String>, unit_id: &str| {
            let (src, dst) = (entity_id(src), entity_id(dst));
            let edge = edges
                .entry((src.clone(), dst.clone(), relation))
                .or_insert_with(|| RelationEdge {
                    edge_id: format!("rel:{src}|{relation}|{dst}"),
                    src,
                    dst,
                    relation,
                    qualifiers: BTreeMap::new(),
                    supporting_units: BTreeSet::new(),
                });
            for (k, v) in qualifiers {
                edge.qualifiers.entry(k).or_insert(v);
            }
            edge.supporting_units.insert(unit_id.to_string());
        };

    for unit in units {
        graph.unit_index.insert(unit.unit_id.clone(), unit.clone());
        let mentions: Vec<ConceptMention> = concepts
            .extract(&unit.text)
            .into_iter()
            .filter(|m| vocab.contains(&m.concept_id))
            .collect();
        for m in &mentions {
            let id = entity_id(&m.concept_id);
            let node = graph.nodes.entry(id.clone()).or_insert_with(|| EntityNode {
                entity_id: id,
                concept_id: m.concept_id.clone(),
                category: m.category,
                description: format!(
                    "{} ({})",
                    vocab.label(&m.concept_id).unwrap_or(&m.surface),
                    m.category
                ),
                supporting_units: BTreeSet::new(),
            });
            node.supporting_units.insert(unit.unit_id.clone());
        }

        let extracted: Vec<ExtractedRelation> = relations
            .relations(unit, &mentions)
            .into_iter()
            .filter(|r| r.src_concept != r.dst_concept)
            .collect();
        if extracted.is_empty() {
            let distinct: BTreeSet<&str> = mentions.iter().map(|m| m.concept_id.as_str()).collect();
            let distinct: Vec<&str> = distinct.into_iter().collect();
            for (i, a) in distinct.iter().enumerate() {
                for b in &distinct[i + 1..] {
                    add_edge(a, b, RelationType::CoOccurs, BTreeMap::new(), &unit.unit_id);
                }
            }
        } else {
            for r in extracted {
                add_edge(
                    &r.src_concept,
                    &r.dst_concept,
                    r.relation,
                    r.qualifiers,
                    &unit.unit_id,
                );
            }
        }
    }
    graph.edges = edges.into_values().collect();
    graph
}
