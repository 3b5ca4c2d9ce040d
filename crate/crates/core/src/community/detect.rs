use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::CommunityError;
use crate::graph::KnowledgeGraph;

/// Round cap for label propagation.
pub const MAX_ROUNDS: usize = 100;

/// A partition of the graph's entities into dense-numbered communities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    pub community_of: BTreeMap<String, usize>,
    pub communities: BTreeMap<usize, BTreeSet<String>>,
}

impl CommunityAssignment {
    pub fn len(&self) -> usize {
        self.communities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.communities.is_empty()
    }

    pub fn members(&self, community_id: usize) -> Option<&BTreeSet<String>> {
        self.communities.get(&community_id)
    }
}

/// Undirected weighted adjacency over node indices; parallel edges summed.
pub type Adjacency = Vec<BTreeMap<usize, u64>>;

/// Undirected projection of the graph. Node `i` is the `i`-th entity in id
/// order; edge weight is the number of supporting units.
pub fn undirected_projection(graph: &KnowledgeGraph) -> (Vec<&str>, Adjacency) {
    let ids: Vec<&str> = graph.nodes.keys().map(String::as_str).collect();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut adj: Adjacency = vec![BTreeMap::new(); ids.len()];
    for e in &graph.edges {
        let (Some(&a), Some(&b)) = (index.get(e.src.as_str()), index.get(e.dst.as_str())) else {
            continue;
        };
        if a == b {
            continue;
        }
        let w = e.supporting_units.len().max(1) as u64;
        *adj[a].entry(b).or_insert(0) += w;
        *adj[b].entry(a).or_insert(0) += w;
    }
    (ids, adj)
}

/// Synchronous label propagation. Labels start at the node index; each round
/// every node takes the label with the highest vote weight among its
/// neighbours, smallest label on ties.
///
/// A node also votes for its own current label with its heaviest incident
/// edge weight. Without that self-vote synchronous updates can swap labels
/// across a single edge forever.
pub fn label_propagation(adj: &Adjacency) -> (Vec<usize>, usize) {
    let n = adj.len();
    let mut labels: Vec<usize> = (0..n).collect();
    let mut rounds = 0;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        let mut next = labels.clone();
        for node in 0..n {
            if adj[node].is_empty() {
                continue;
            }
            let mut votes: BTreeMap<usize, u64> = BTreeMap::new();
            let self_weight = adj[node].values().copied().max().unwrap_or(0);
            *votes.entry(labels[node]).or_insert(0) += self_weight;
            for (&nb, &w) in &adj[node] {
                *votes.entry(labels[nb]).or_insert(0) += w;
            }
            // BTreeMap iterates labels ascending, so the first max is the smallest label
            let mut best = (labels[node], 0u64);
            for (&label, &w) in &votes {
                if w > best.1 {
                    best = (label, w);
                }
            }
            next[node] = best.0;
        }
        if next == labels {
            break;
        }
        labels = next;
    }
    (labels, rounds)
}

/// Renumber labels densely, ordered by each community's smallest member index.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut remap: HashMap<usize, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = remap.len();
            *remap.entry(*l).or_insert(next)
        })
        .collect()
}

/// Detect communities on the undirected projection of the graph.
///
/// Propagation is fully deterministic, so `seed` only identifies the run.
pub fn detect_communities(
    graph: &KnowledgeGraph,
    seed: u64,
) -> Result<CommunityAssignment, CommunityError> {
    if graph.nodes.is_empty() {
        return Err(CommunityError::EmptyGraph);
    }
    let (ids, adj) = undirected_projection(graph);
    let (labels, rounds) = label_propagation(&adj);
    tracing::debug!(
        seed,
        rounds,
        nodes = ids.len(),
        "label propagation finished"
    );
    let labels = canonical_labels(&labels);
    let mut out = CommunityAssignment::default();
    for (id, c) in ids.iter().zip(labels) {
        out.community_of.insert(id.to_string(), c);
        out.communities.entry(c).or_default().insert(id.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjacency(n: usize, edges: &[(usize, usize)]) -> Adjacency {
        let mut adj: Adjacency = vec![BTreeMap::new(); n];
        for &(a, b) in edges {
            *adj[a].entry(b).or_insert(0) += 1;
            *adj[b].entry(a).or_insert(0) += 1;
        }
        adj
    }

    fn clique(nodes: &[usize]) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for (i, &a) in nodes.iter().enumerate() {
            for &b in &nodes[i + 1..] {
                e.push((a, b));
            }
        }
        e
    }

    #[test]
    fn two_cliques_with_bridge_split() {
        let mut edges = clique(&[0, 1, 2, 3]);
        edges.extend(clique(&[4, 5, 6, 7]));
        edges.push((3, 4));
        let (labels, rounds) = label_propagation(&adjacency(8, &edges));
        // hand simulation: [0,0,0,0,3,4,4,4] after round 1, fixpoint after round 3
        assert_eq!(canonical_labels(&labels), [0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(rounds, 3);
    }

    #[test]
    fn complete_graph_is_one_community() {
        let (labels, _) = label_propagation(&adjacency(5, &clique(&[0, 1, 2, 3, 4])));
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn single_edge_converges_to_one_label() {
        let (labels, rounds) = label_propagation(&adjacency(2, &[(0, 1)]));
        assert_eq!(labels, [0, 0]);
        assert!(rounds < MAX_ROUNDS);
    }

    #[test]
    fn isolated_nodes_are_singletons() {
        let (labels, _) = label_propagation(&adjacency(3, &[]));
        assert_eq!(canonical_labels(&labels), [0, 1, 2]);
    }

    #[test]
    fn canonical_renumbering() {
        assert_eq!(canonical_labels(&[5, 5, 2, 9, 2]), [0, 0, 1, 2, 1]);
    }

    #[test]
    fn empty_graph_rejected() {
        assert_eq!(
            detect_communities(&KnowledgeGraph::default(), 0),
            Err(CommunityError::EmptyGraph)
        );
    }
}
