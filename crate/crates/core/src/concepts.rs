//! Dictionary-driven clinical concept extraction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SoapCase, SoapSection};
use crate::text::fold_char;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("line {line}: empty term")]
    EmptyTerm { line: usize },
    #[error("line {line}: unknown category {value:?}")]
    UnknownCategory { line: usize, value: String },
    #[error("term {term:?} maps to both {first:?} and {second:?}")]
    ConflictingTerm {
        term: String,
        first: String,
        second: String,
    },
    #[error("concept {concept_id:?} declared with two categories")]
    ConflictingCategory { concept_id: String },
    #[error("line {line}: canonical term {canonical:?} is not defined earlier")]
    UnknownCanonical { line: usize, canonical: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Diagnosis,
    Symptom,
    Medication,
    Procedure,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Diagnosis,
        Category::Symptom,
        Category::Medication,
        Category::Procedure,
        Category::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Diagnosis => "diagnosis",
            Category::Symptom => "symptom",
            Category::Medication => "medication",
            Category::Procedure => "procedure",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| s.to_string())
    }
}

/// One matched concept. `span` is a char range into the text that was scanned;
/// for case concepts that text is the section named by `section`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConceptMention {
    pub surface: String,
    pub concept_id: String,
    pub category: Category,
    pub span: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<SoapSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub term: String,
    pub concept_id: String,
    pub category: Category,
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<char, usize>,
    // index into Vocabulary::entries
    terminal: Option<usize>,
}

/// A validated term dictionary with a folded-char trie for matching.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    categories: BTreeMap<String, Category>,
    labels: BTreeMap<String, String>,
    trie: Vec<TrieNode>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.entries.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let entries = Vec::<VocabEntry>::deserialize(d)?;
        Vocabulary::new(entries).map_err(serde::de::Error::custom)
    }
}

fn fold(term: &str) -> Vec<char> {
    term.chars().map(fold_char).collect()
}

impl Vocabulary {
    /// Validate and index entries. Exact duplicate (term, concept) pairs are
    /// collapsed; the first term seen for a concept becomes its label.
    pub fn new(entries: impl IntoIterator<Item = VocabEntry>) -> Result<Self, VocabError> {
        let mut vocab = Vocabulary {
            entries: Vec::new(),
            categories: BTreeMap::new(),
            labels: BTreeMap::new(),
            trie: vec![TrieNode::default()],
        };
        for (i, e) in entries.into_iter().enumerate() {
            vocab.add(e, i + 1)?;
        }
        Ok(vocab)
    }

    fn add(&mut self, entry: VocabEntry, line: usize) -> Result<(), VocabError> {
        let term = entry.term.trim().to_string();
        if term.is_empty() {
            return Err(VocabError::EmptyTerm { line });
        }
        match self.categories.get(&entry.concept_id) {
            Some(c) if *c != entry.category => {
                return Err(VocabError::ConflictingCategory {
                    concept_id: entry.concept_id,
                })
            }
            _ => {}
        }
        let mut node = 0;
        for ch in fold(&term) {
            node = match self.trie[node].children.get(&ch) {
                Some(&n) => n,
                None => {
                    self.trie.push(TrieNode::default());
                    let n = self.trie.len() - 1;
                    self.trie[node].children.insert(ch, n);
                    n
                }
            };
        }
        if let Some(existing) = self.trie[node].terminal {
            let prev = &self.entries[existing];
            if prev.concept_id == entry.concept_id {
                return Ok(());
            }
            return Err(VocabError::ConflictingTerm {
                term,
                first: prev.concept_id.clone(),
                second: entry.concept_id,
            });
        }
        self.trie[node].terminal = Some(self.entries.len());
        self.categories
            .insert(entry.concept_id.clone(), entry.category);
        self.labels
            .entry(entry.concept_id.clone())
            .or_insert_with(|| term.clone());
        self.entries.push(VocabEntry { term, ..entry });
        Ok(())
    }

    /// Parse the tab-separated vocabulary file:
    /// `term<TAB>concept_id<TAB>category[<TAB>canonical_term]`.
    ///
    /// With a canonical term the line is a synonym: it takes the canonical
    /// term's concept and category, and the concept_id column may be empty.
    /// `#` starts a comment line.
    pub fn from_tsv<R: Read>(reader: R) -> Result<Self, VocabError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .quoting(false)
            .from_reader(reader);
        let mut entries: Vec<(usize, VocabEntry)> = Vec::new();
        let mut by_term: HashMap<Vec<char>, (String, Category)> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| VocabError::Malformed {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                reason: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            if rec.len() < 3 {
                return Err(VocabError::Malformed {
                    line,
                    reason: format!("expected at least 3 columns, found {}", rec.len()),
                });
            }
            let term = rec[0].trim().to_string();
            let canonical = rec.get(3).map(str::trim).filter(|c| !c.is_empty());
            let (concept_id, category) = match canonical {
                Some(canon) => {
                    let (id, cat) = by_term.get(&fold(canon)).cloned().ok_or_else(|| {
                        VocabError::UnknownCanonical {
                            line,
                            canonical: canon.to_string(),
                        }
                    })?;
                    let declared = rec[1].trim();
                    if !declared.is_empty() && declared != id {
                        return Err(VocabError::ConflictingTerm {
                            term,
                            first: id,
                            second: declared.to_string(),
                        });
                    }
                    (id, cat)
                }
                None => {
                    let category: Category = rec[2]
                        .parse()
                        .map_err(|value| VocabError::UnknownCategory { line, value })?;
                    (rec[1].trim().to_string(), category)
                }
            };
            if concept_id.is_empty() {
                return Err(VocabError::Malformed {
                    line,
                    reason: "empty concept_id".into(),
                });
            }
            by_term.insert(fold(&term), (concept_id.clone(), category));
            entries.push((
                line,
                VocabEntry {
                    term,
                    concept_id,
                    category,
                },
            ));
        }
        let mut vocab = Vocabulary {
            entries: Vec::new(),
            categories: BTreeMap::new(),
            labels: BTreeMap::new(),
            trie: vec![TrieNode::default()],
        };
        for (line, e) in entries {
            vocab.add(e, line)?;
        }
        Ok(vocab)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn category(&self, concept_id: &str) -> Option<Category> {
        self.categories.get(concept_id).copied()
    }

    pub fn contains(&self, concept_id: &str) -> bool {
        self.categories.contains_key(concept_id)
    }

    /// Display label of a concept: the first term registered for it.
    pub fn label(&self, concept_id: &str) -> Option<&str> {
        self.labels.get(concept_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Pluggable concept extractor; the dictionary matcher is the default.
pub trait ConceptExtractor: Send + Sync {
    fn extract(&self, text: &str) -> Vec<ConceptMention>;
}

impl ConceptExtractor for Vocabulary {
    fn extract(&self, text: &str) -> Vec<ConceptMention> {
        extract_concepts(text, self)
    }
}

/// True when a match may start or end at char position `i`: not strictly
/// inside a run of alphanumerics.
pub(crate) fn is_boundary(chars: &[char], i: usize) -> bool {
    i == 0 || i == chars.len() || !(chars[i - 1].is_alphanumeric() && chars[i].is_alphanumeric())
}

/// Pick non-overlapping matches longest-first, then leftmost, and return them
/// sorted by start. Candidates are `(start, end, entry_index)`.
pub(crate) fn resolve_overlaps(
    mut candidates: Vec<(usize, usize, usize)>,
) -> Vec<(usize, usize, usize)> {
    candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    let mut taken: Vec<(usize, usize, usize)> = Vec::new();
    for c in candidates {
        if taken.iter().all(|t| c.1 <= t.0 || t.1 <= c.0) {
            taken.push(c);
        }
    }
    taken.sort_by_key(|t| t.0);
    taken
}

/// Longest-match, case-insensitive, word-boundary-respecting dictionary scan.
pub fn extract_concepts(text: &str, vocab: &Vocabulary) -> Vec<ConceptMention> {
    let original: Vec<char> = text.chars().collect();
    let folded: Vec<char> = original.iter().copied().map(fold_char).collect();
    let mut candidates = Vec::new();
    for start in 0..folded.len() {
        if !is_boundary(&folded, start) {
            continue;
        }
        let mut node = 0;
        for (offset, ch) in folded[start..].iter().enumerate() {
            match vocab.trie[node].children.get(ch) {
                Some(&n) => node = n,
                None => break,
            }
            let end = start + offset + 1;
            if let Some(idx) = vocab.trie[node].terminal {
                if is_boundary(&folded, end) {
                    candidates.push((start, end, idx));
                }
            }
        }
    }
    resolve_overlaps(candidates)
        .into_iter()
        .map(|(start, end, idx)| {
            let e = &vocab.entries[idx];
            ConceptMention {
                surface: original[start..end].iter().collect(),
                concept_id: e.concept_id.clone(),
                category: e.category,
                span: (start, end),
                section: None,
            }
        })
        .collect()
}

/// Extract over each SOAP section; spans are relative to their section.
pub fn extract_case_concepts(
    case: &SoapCase,
    extractor: &dyn ConceptExtractor,
) -> Vec<ConceptMention> {
    SoapSection::ALL
        .iter()
        .flat_map(|&section| {
            extractor
                .extract(case.section(section))
                .into_iter()
                .map(move |m| ConceptMention {
                    section: Some(section),
                    ..m
                })
        })
        .collect()
}

/// Fill `case.concepts` in place.
pub fn annotate_case(case: &mut SoapCase, extractor: &dyn ConceptExtractor) {
    case.concepts = extract_case_concepts(case, extractor);
}

/// Concept counts over all four sections, ordered by concept_id.
pub fn concept_multiset(
    case: &SoapCase,
    vocab: &Vocabulary,
) -> BTreeMap<String, (Category, usize)> {
    let mut out: BTreeMap<String, (Category, usize)> = BTreeMap::new();
    for m in extract_case_concepts(case, vocab) {
        out.entry(m.concept_id).or_insert((m.category, 0)).1 += 1;
    }
    out
}
