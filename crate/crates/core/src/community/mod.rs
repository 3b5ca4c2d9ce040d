//! Community detection and extractive community summaries.

mod detect;
mod summarize;

use thiserror::Error;

pub use detect::{
    canonical_labels, detect_communities, label_propagation, undirected_projection, Adjacency,
    CommunityAssignment, MAX_ROUNDS,
};
pub use summarize::{
    rank_members, rank_units, summarize_all, summarize_community, CommunitySummarizer,
    CommunitySummary, DEFAULT_SUMMARY_CHARS, SUMMARY_UNITS, TOP_ENTITIES,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommunityError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("unknown community {0}")]
    UnknownCommunity(usize),
}
