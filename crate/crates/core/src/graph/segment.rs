//! Hierarchy-respecting segmentation of guideline documents into text units.

use serde::{Deserialize, Serialize};

use super::{GraphError, TextUnit};
use crate::corpus::{GuidelineDoc, OutlineEntry, SourceSpan};
use crate::text::CharIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub max_unit_chars: usize,
    pub min_unit_chars: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            max_unit_chars: 1200,
            min_unit_chars: 200,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.min_unit_chars == 0 || self.max_unit_chars <= self.min_unit_chars {
            return Err(GraphError::InvalidConfig(format!(
                "need max_unit_chars > min_unit_chars > 0, got {} / {}",
                self.max_unit_chars, self.min_unit_chars
            )));
        }
        Ok(())
    }
}

/// A leaf section with its full path of titles.
struct Leaf<'a> {
    entry: &'a OutlineEntry,
    path: Vec<String>,
}

fn contains(outer: &OutlineEntry, inner: &OutlineEntry) -> bool {
    outer.start() <= inner.start() && inner.end() <= outer.end()
}

fn leaves(doc: &GuidelineDoc) -> Vec<Leaf<'_>> {
    let mut entries: Vec<&OutlineEntry> = doc.outline.iter().collect();
    entries.sort_by_key(|e| (e.start(), e.depth()));
    entries
        .iter()
        .filter(|e| {
            !entries
                .iter()
                .any(|c| c.depth() > e.depth() && contains(e, c))
        })
        .map(|leaf| {
            let mut ancestors: Vec<&&OutlineEntry> = entries
                .iter()
                .filter(|p| p.depth() < leaf.depth() && contains(p, leaf))
                .collect();
            ancestors.sort_by_key(|p| p.depth());
            let mut path: Vec<String> = ancestors.iter().map(|p| p.title().to_string()).collect();
            path.push(leaf.title().to_string());
            Leaf { entry: leaf, path }
        })
        .collect()
}

/// Char offsets (relative to `chars` start) just past each sentence end.
/// A sentence ends at `.`, `?`, `!` or newline, plus any trailing whitespace.
fn sentence_ends(chars: &[char]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        i += 1;
        if matches!(c, '.' | '?' | '!' | '\n') {
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            ends.push(i);
        }
    }
    if ends.last() != Some(&chars.len()) {
        ends.push(chars.len());
    }
    ends
}

/// Split a section of `len` chars into contiguous pieces, returned as
/// relative `(start, end)` ranges.
fn split_section(chars: &[char], cfg: &SegmentConfig) -> Vec<(usize, usize)> {
    let len = chars.len();
    if len <= cfg.max_unit_chars {
        return vec![(0, len)];
    }
    // sentence boundaries, with over-long sentences cut at whitespace or hard
    let mut cuts: Vec<usize> = Vec::new();
    let mut prev = 0;
    for end in sentence_ends(chars) {
        while end - prev > cfg.max_unit_chars {
            let limit = prev + cfg.max_unit_chars;
            let cut = (prev + 1..=limit)
                .rev()
                .find(|&k| chars[k - 1].is_whitespace() && k - prev >= cfg.min_unit_chars)
                .unwrap_or(limit);
            cuts.push(cut);
            prev = cut;
        }
        cuts.push(end);
        prev = end;
    }
    // greedy packing of sentences under the max
    let mut pieces: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let mut last = 0;
    for &cut in &cuts {
        if cut - start > cfg.max_unit_chars {
            pieces.push((start, last));
            start = last;
        }
        last = cut;
    }
    pieces.push((start, len));
    // fold a short tail into its predecessor when it still fits
    if pieces.len() > 1 {
        let (ts, te) = pieces[pieces.len() - 1];
        let (ps, _) = pieces[pieces.len() - 2];
        if te - ts < cfg.min_unit_chars && te - ps <= cfg.max_unit_chars {
            pieces.pop();
            let n = pieces.len();
            pieces[n - 1].1 = te;
        }
    }
    pieces
}

/// Segment one document. Every leaf outline section becomes one or more
/// units whose texts concatenate back to the section verbatim.
///
/// A document without an outline is treated as one section titled by the
/// document title.
pub fn segment_guideline(
    doc: &GuidelineDoc,
    cfg: &SegmentConfig,
) -> Result<Vec<TextUnit>, GraphError> {
    cfg.validate()?;
    let index = CharIndex::new(&doc.body);
    if doc.body.trim().is_empty() {
        return Err(GraphError::EmptyDocument(doc.doc_id.clone()));
    }
    let whole;
    let leaves = if doc.outline.is_empty() {
        whole = OutlineEntry::new(doc.title.clone(), 0, 0, index.char_len());
        vec![Leaf {
            entry: &whole,
            path: vec![doc.title.clone()],
        }]
    } else {
        leaves(doc)
    };

    let mut units = Vec::new();
    for leaf in leaves {
        let section = index.slice(&doc.body, leaf.entry.start(), leaf.entry.end());
        let chars: Vec<char> = section.chars().collect();
        for (rs, re) in split_section(&chars, cfg) {
            let start = leaf.entry.start() + rs;
            let end = leaf.entry.start() + re;
            units.push(TextUnit {
                unit_id: format!("{}:u{:04}", doc.doc_id, units.len()),
                doc_id: doc.doc_id.clone(),
                text: index.slice(&doc.body, start, end).to_string(),
                span: SourceSpan {
                    doc_id: doc.doc_id.clone(),
                    section_title: leaf.entry.title().to_string(),
                    char_start: start,
                    char_end: end,
                },
                section_path: leaf.path.clone(),
            });
        }
    }
    Ok(units)
}
