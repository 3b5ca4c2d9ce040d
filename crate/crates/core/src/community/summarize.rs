use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CommunityAssignment, CommunityError};
use crate::graph::{KnowledgeGraph, TextUnit};
use crate::text::truncate_chars;

/// Entities whose units feed the extractive summary.
pub const TOP_ENTITIES: usize = 5;
/// Units concatenated into the summary text.
pub const SUMMARY_UNITS: usize = 3;
pub const DEFAULT_SUMMARY_CHARS: usize = 2400;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub community_id: usize,
    pub summary_text: String,
    pub member_entities: Vec<String>,
    pub top_units: Vec<String>,
}

/// Replaces the summary text of an extractive summary. Implementations
/// never see or change `top_units`.
pub trait CommunitySummarizer: Send + Sync {
    fn summarize(&self, members: &[&str], units: &[&TextUnit]) -> String;
}

/// Member entities ranked by weighted degree inside the community, then id.
pub fn rank_members(graph: &KnowledgeGraph, members: &BTreeSet<String>) -> Vec<(String, u64)> {
    let mut degree: BTreeMap<&str, u64> = members.iter().map(|m| (m.as_str(), 0)).collect();
    for e in &graph.edges {
        if e.src != e.dst && members.contains(&e.src) && members.contains(&e.dst) {
            let w = e.supporting_units.len() as u64;
            *degree.get_mut(e.src.as_str()).expect("member") += w;
            *degree.get_mut(e.dst.as_str()).expect("member") += w;
        }
    }
    let mut ranked: Vec<(String, u64)> = degree
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Supporting units of the top entities, ranked by how many community
/// members each unit supports, then by unit id.
pub fn rank_units(graph: &KnowledgeGraph, members: &BTreeSet<String>) -> Vec<String> {
    let top = rank_members(graph, members);
    let candidates: BTreeSet<&str> = top
        .iter()
        .take(TOP_ENTITIES)
        .filter_map(|(id, _)| graph.nodes.get(id))
        .flat_map(|n| n.supporting_units.iter().map(String::as_str))
        .collect();
    let mut scored: Vec<(&str, usize)> = candidates
        .into_iter()
        .map(|u| {
            let support = members
                .iter()
                .filter(|m| {
                    graph
                        .nodes
                        .get(*m)
                        .is_some_and(|n| n.supporting_units.contains(u))
                })
                .count();
            (u, support)
        })
        .collect();
    scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.into_iter().map(|(u, _)| u.to_string()).collect()
}

/// Extractive community summary, optionally rewritten by `summarizer`.
pub fn summarize_community(
    graph: &KnowledgeGraph,
    assignment: &CommunityAssignment,
    community_id: usize,
    summarizer: Option<&dyn CommunitySummarizer>,
    max_chars: usize,
) -> Result<CommunitySummary, CommunityError> {
    let members = assignment
        .members(community_id)
        .ok_or(CommunityError::UnknownCommunity(community_id))?;
    let top_units: Vec<String> = rank_units(graph, members)
        .into_iter()
        .take(SUMMARY_UNITS)
        .collect();
    let units: Vec<&TextUnit> = top_units
        .iter()
        .filter_map(|u| graph.unit_index.get(u))
        .collect();
    let summary_text = match summarizer {
        Some(s) => {
            let ids: Vec<&str> = members.iter().map(String::as_str).collect();
            s.summarize(&ids, &units)
        }
        None => {
            let joined = units
                .iter()
                .map(|u| u.text.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            truncate_chars(&joined, max_chars).to_string()
        }
    };
    Ok(CommunitySummary {
        community_id,
        summary_text,
        member_entities: members.iter().cloned().collect(),
        top_units,
    })
}

/// Summaries of every community, in id order.
pub fn summarize_all(
    graph: &KnowledgeGraph,
    assignment: &CommunityAssignment,
    summarizer: Option<&dyn CommunitySummarizer>,
    max_chars: usize,
) -> Vec<CommunitySummary> {
    assignment
        .communities
        .keys()
        .map(|&c| {
            summarize_community(graph, assignment, c, summarizer, max_chars)
                .expect("id from assignment")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Category;
    use crate::corpus::SourceSpan;
    use crate::graph::{EntityNode, RelationEdge, RelationType};

    fn unit(id: &str, text: &str) -> TextUnit {
        TextUnit {
            unit_id: id.into(),
            doc_id: "d".into(),
            text: text.into(),
            span: SourceSpan {
                doc_id: "d".into(),
                section_title: "s".into(),
                char_start: 0,
                char_end: text.len(),
            },
            section_path: vec!["s".into()],
        }
    }

    fn node(id: &str, units: &[&str]) -> EntityNode {
        EntityNode {
            entity_id: id.into(),
            concept_id: id.into(),
            category: Category::Other,
            description: id.into(),
            supporting_units: units.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn assignment(groups: &[&[&str]]) -> CommunityAssignment {
        let mut a = CommunityAssignment::default();
        for (c, g) in groups.iter().enumerate() {
            for m in *g {
                a.community_of.insert(m.to_string(), c);
                a.communities.entry(c).or_default().insert(m.to_string());
            }
        }
        a
    }

    #[test]
    fn singleton_summary_is_its_unit() {
        let mut g = KnowledgeGraph::default();
        g.unit_index.insert("u1".into(), unit("u1", "Only text."));
        g.nodes.insert("a".into(), node("a", &["u1"]));
        let s = summarize_community(&g, &assignment(&[&["a"]]), 0, None, 100).unwrap();
        assert_eq!(s.summary_text, "Only text.");
        assert_eq!(s.top_units, ["u1"]);
    }

    #[test]
    fn unit_supporting_all_members_ranks_first() {
        let mut g = KnowledgeGraph::default();
        for (id, t) in [("u1", "one"), ("u2", "two"), ("u3", "three")] {
            g.unit_index.insert(id.into(), unit(id, t));
        }
        g.nodes.insert("a".into(), node("a", &["u1", "u3"]));
        g.nodes.insert("b".into(), node("b", &["u2", "u3"]));
        g.nodes.insert("c".into(), node("c", &["u3"]));
        let s = summarize_community(&g, &assignment(&[&["a", "b", "c"]]), 0, None, 100).unwrap();
        assert_eq!(s.top_units[0], "u3");
        assert_eq!(s.summary_text, "three\none\ntwo");
        let short = summarize_community(&g, &assignment(&[&["a", "b", "c"]]), 0, None, 4).unwrap();
        assert_eq!(short.summary_text, "thre");
    }

    #[test]
    fn members_ranked_by_internal_weighted_degree() {
        let mut g = KnowledgeGraph::default();
        for id in ["u1", "u2"] {
            g.unit_index.insert(id.into(), unit(id, id));
        }
        for id in ["a", "b", "c"] {
            g.nodes.insert(id.into(), node(id, &["u1"]));
        }
        g.edges.push(RelationEdge {
            edge_id: "e".into(),
            src: "c".into(),
            dst: "b".into(),
            relation: RelationType::CoOccurs,
            qualifiers: Default::default(),
            supporting_units: ["u1".to_string(), "u2".to_string()].into(),
        });
        let members: BTreeSet<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ranked = rank_members(&g, &members);
        assert_eq!(ranked, [("b".into(), 2), ("c".into(), 2), ("a".into(), 0)]);
    }

    struct Fixed;
    impl CommunitySummarizer for Fixed {
        fn summarize(&self, _: &[&str], _: &[&TextUnit]) -> String {
            "abstractive".into()
        }
    }

    #[test]
    fn pluggable_summarizer_keeps_top_units() {
        let mut g = KnowledgeGraph::default();
        g.unit_index.insert("u1".into(), unit("u1", "x"));
        g.nodes.insert("a".into(), node("a", &["u1"]));
        let s = summarize_community(&g, &assignment(&[&["a"]]), 0, Some(&Fixed), 100).unwrap();
        assert_eq!(s.summary_text, "abstractive");
        assert_eq!(s.top_units, ["u1"]);
        assert!(matches!(
            summarize_community(&g, &assignment(&[&["a"]]), 7, None, 100),
            Err(CommunityError::UnknownCommunity(7))
        ));
    }
}
