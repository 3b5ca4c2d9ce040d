//! Patient cases and guideline documents, and their line-delimited ingest.

use std::fmt;
use std::io::BufRead;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::concepts::ConceptMention;
use crate::text::{char_len, CharIndex};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("no SOAP section found in case text")]
    NoSectionFound,
    #[error("section {0} appears more than once")]
    DuplicateSection(SoapSection),
    #[error("duplicate case_id {id:?} on line {line}")]
    DuplicateCaseId { id: String, line: usize },
    #[error("duplicate doc_id {id:?} on line {line}")]
    DuplicateDocId { id: String, line: usize },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("document {doc_id:?}: outline entry {title:?} overlaps or is not nested properly")]
    OverlappingOutline { doc_id: String, title: String },
    #[error("document {doc_id:?}: span ({start}, {end}) outside body of {len} chars")]
    SpanOutOfBounds {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("read error: {0}")]
    Io(String),
}

/// Where a patient case came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseSource {
    RealDerived,
    Synthetic,
}

impl CaseSource {
    /// Map a free-form source label onto the enum.
    ///
    /// `mimic*` and `real*` labels are real-derived; everything else is synthetic.
    pub fn from_label(label: &str) -> Self {
        let l = label.trim().to_ascii_lowercase();
        if l.starts_with("mimic") || l.starts_with("real") {
            CaseSource::RealDerived
        } else {
            CaseSource::Synthetic
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseSource::RealDerived => "real-derived",
            CaseSource::Synthetic => "synthetic",
        }
    }
}

impl Serialize for CaseSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CaseSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        Ok(CaseSource::from_label(&label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoapSection {
    Subjective,
    Objective,
    Assessment,
    Plan,
}

impl SoapSection {
    pub const ALL: [SoapSection; 4] = [
        SoapSection::Subjective,
        SoapSection::Objective,
        SoapSection::Assessment,
        SoapSection::Plan,
    ];

    pub fn letter(&self) -> char {
        match self {
            SoapSection::Subjective => 'S',
            SoapSection::Objective => 'O',
            SoapSection::Assessment => 'A',
            SoapSection::Plan => 'P',
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for SoapSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SoapSection::Subjective => "Subjective",
            SoapSection::Objective => "Objective",
            SoapSection::Assessment => "Assessment",
            SoapSection::Plan => "Plan",
        };
        f.write_str(name)
    }
}

/// A patient case in SOAP form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoapCase {
    pub case_id: String,
    pub source: CaseSource,
    pub subjective: String,
    pub objective: String,
    pub assessment: String,
    #[serde(default)]
    pub plan: String,
    #[serde(default)]
    pub concepts: Vec<ConceptMention>,
}

impl SoapCase {
    pub fn new(
        case_id: impl Into<String>,
        source: CaseSource,
        subjective: impl Into<String>,
        objective: impl Into<String>,
        assessment: impl Into<String>,
        plan: impl Into<String>,
    ) -> Self {
        Self {
            case_id: case_id.into(),
            source,
            subjective: subjective.into(),
            objective: objective.into(),
            assessment: assessment.into(),
            plan: plan.into(),
            concepts: Vec::new(),
        }
    }

    pub fn section(&self, section: SoapSection) -> &str {
        match section {
            SoapSection::Subjective => &self.subjective,
            SoapSection::Objective => &self.objective,
            SoapSection::Assessment => &self.assessment,
            SoapSection::Plan => &self.plan,
        }
    }

    fn section_mut(&mut self, section: SoapSection) -> &mut String {
        match section {
            SoapSection::Subjective => &mut self.subjective,
            SoapSection::Objective => &mut self.objective,
            SoapSection::Assessment => &mut self.assessment,
            SoapSection::Plan => &mut self.plan,
        }
    }

    pub fn is_empty(&self) -> bool {
        SoapSection::ALL.iter().all(|s| self.section(*s).is_empty())
    }

    /// Render as `S: ...\nO: ...\nA: ...\nP: ...`.
    pub fn render(&self) -> String {
        SoapSection::ALL
            .iter()
            .map(|s| format!("{}: {}", s.letter(), self.section(*s)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Text used for the case embedding: S, O and A joined by newlines.
    ///
    /// The plan is excluded so indexed cases and plan-less query cases are
    /// represented the same way.
    pub fn retrieval_text(&self) -> String {
        [&self.subjective, &self.objective, &self.assessment]
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Same case with the plan removed, as posed in note completion.
    pub fn without_plan(&self) -> SoapCase {
        let mut c = self.clone();
        c.plan.clear();
        c.concepts.retain(|m| m.section != Some(SoapSection::Plan));
        c
    }
}

const HEADERS: [(&str, SoapSection); 8] = [
    ("subjective:", SoapSection::Subjective),
    ("objective:", SoapSection::Objective),
    ("assessment:", SoapSection::Assessment),
    ("plan:", SoapSection::Plan),
    ("s:", SoapSection::Subjective),
    ("o:", SoapSection::Objective),
    ("a:", SoapSection::Assessment),
    ("p:", SoapSection::Plan),
];

/// Match a section header at the start of a line (leading whitespace allowed).
/// Returns the section and the remainder of the line after the header.
fn match_header(line: &str) -> Option<(SoapSection, &str)> {
    let trimmed = line.trim_start();
    for (alias, section) in HEADERS {
        if trimmed.len() >= alias.len()
            && trimmed.is_char_boundary(alias.len())
            && trimmed[..alias.len()].eq_ignore_ascii_case(alias)
        {
            return Some((section, &trimmed[alias.len()..]));
        }
    }
    None
}

/// Split labeled SOAP text into a case.
///
/// Headers are recognised at line starts, case-insensitively. Text before the
/// first header goes to the subjective section.
pub fn parse_soap(raw: &str, case_id: &str, source: CaseSource) -> Result<SoapCase, CorpusError> {
    let mut buffers: [Option<String>; 4] = Default::default();
    let mut preamble = String::new();
    let mut current: Option<SoapSection> = None;

    for line in raw.lines() {
        if let Some((section, rest)) = match_header(line) {
            if buffers[section.index()].is_some() {
                return Err(CorpusError::DuplicateSection(section));
            }
            buffers[section.index()] = Some(rest.to_string());
            current = Some(section);
            continue;
        }
        let target = match current {
            Some(s) => buffers[s.index()]
                .as_mut()
                .expect("current section is open"),
            None => &mut preamble,
        };
        target.push('\n');
        target.push_str(line);
    }

    let mut case = SoapCase::new(case_id, source, "", "", "", "");
    for section in SoapSection::ALL {
        if let Some(text) = &buffers[section.index()] {
            *case.section_mut(section) = text.trim().to_string();
        }
    }
    let preamble = preamble.trim();
    if !preamble.is_empty() {
        case.subjective = if case.subjective.is_empty() {
            preamble.to_string()
        } else {
            format!("{}\n{}", case.subjective, preamble)
        };
    }
    if case.is_empty() {
        return Err(CorpusError::NoSectionFound);
    }
    Ok(case)
}

/// Cases keyed by id, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseRepository {
    cases: IndexMap<String, SoapCase>,
}

impl CaseRepository {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from cases, rejecting duplicates. Line numbers in errors are
    /// 1-based positions in `cases`.
    pub fn from_cases(cases: impl IntoIterator<Item = SoapCase>) -> Result<Self, CorpusError> {
        let mut repo = Self::new();
        for (i, case) in cases.into_iter().enumerate() {
            repo.insert(case, i + 1)?;
        }
        Ok(repo)
    }

    fn insert(&mut self, case: SoapCase, line: usize) -> Result<(), CorpusError> {
        if self.cases.contains_key(&case.case_id) {
            return Err(CorpusError::DuplicateCaseId {
                id: case.case_id,
                line,
            });
        }
        self.cases.insert(case.case_id.clone(), case);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, case_id: &str) -> Option<&SoapCase> {
        self.cases.get(case_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SoapCase> {
        self.cases.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut SoapCase> {
        self.cases.values_mut()
    }
}

#[derive(Deserialize)]
struct CaseRecord {
    case_id: String,
    source: String,
    #[serde(default)]
    s: String,
    #[serde(default)]
    o: String,
    #[serde(default)]
    a: String,
    #[serde(default)]
    p: String,
}

/// Read one JSON record per line; blank lines are skipped.
fn read_records<R: BufRead, T: serde::de::DeserializeOwned>(
    reader: R,
) -> Result<Vec<(usize, T)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

/// Ingest `cases.jsonl` records. Any duplicate id rejects the whole batch.
pub fn ingest_cases<R: BufRead>(reader: R) -> Result<CaseRepository, CorpusError> {
    let mut repo = CaseRepository::new();
    for (line, rec) in read_records::<_, CaseRecord>(reader)? {
        if rec.case_id.trim().is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: "empty case_id".into(),
            });
        }
        let case = SoapCase::new(
            rec.case_id,
            CaseSource::from_label(&rec.source),
            rec.s.trim(),
            rec.o.trim(),
            rec.a.trim(),
            rec.p.trim(),
        );
        if case.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line,
                reason: "all four sections are empty".into(),
            });
        }
        repo.insert(case, line)?;
    }
    tracing::debug!(cases = repo.len(), "ingested case repository");
    Ok(repo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Authority {
    Who,
    Nice,
    Other,
}

impl Authority {
    pub fn from_label(label: &str) -> Self {
        match label.trim().to_ascii_uppercase().as_str() {
            "WHO" => Authority::Who,
            "NICE" => Authority::Nice,
            _ => Authority::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Authority::Who => "WHO",
            Authority::Nice => "NICE",
            Authority::Other => "other",
        }
    }
}

impl fmt::Display for Authority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Authority {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Authority {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Authority::from_label(&String::deserialize(d)?))
    }
}

/// One outline entry: `[title, depth, char_start, char_end]` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineEntry(pub String, pub u32, pub usize, pub usize);

impl OutlineEntry {
    pub fn new(title: impl Into<String>, depth: u32, start: usize, end: usize) -> Self {
        OutlineEntry(title.into(), depth, start, end)
    }
    pub fn title(&self) -> &str {
        &self.0
    }
    pub fn depth(&self) -> u32 {
        self.1
    }
    pub fn start(&self) -> usize {
        self.2
    }
    pub fn end(&self) -> usize {
        self.3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineDoc {
    pub doc_id: String,
    pub authority: Authority,
    pub title: String,
    pub body: String,
    pub outline: Vec<OutlineEntry>,
}

impl GuidelineDoc {
    pub fn body_chars(&self) -> usize {
        char_len(&self.body)
    }

    /// Check span bounds, same-depth disjointness and cross-depth nesting.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let len = self.body_chars();
        for e in &self.outline {
            if e.start() >= e.end() || e.end() > len {
                return Err(CorpusError::SpanOutOfBounds {
                    doc_id: self.doc_id.clone(),
                    start: e.start(),
                    end: e.end(),
                    len,
                });
            }
        }
        let overlap = |title: &str| CorpusError::OverlappingOutline {
            doc_id: self.doc_id.clone(),
            title: title.to_string(),
        };
        for (i, a) in self.outline.iter().enumerate() {
            for b in &self.outline[i + 1..] {
                let disjoint = a.end() <= b.start() || b.end() <= a.start();
                if disjoint {
                    continue;
                }
                if a.depth() == b.depth() {
                    return Err(overlap(b.title()));
                }
                let (outer, inner) = if a.depth() < b.depth() {
                    (a, b)
                } else {
                    (b, a)
                };
                if !(outer.start() <= inner.start() && inner.end() <= outer.end()) {
                    return Err(overlap(inner.title()));
                }
            }
        }
        // every nested entry needs a parent one level up
        for e in self.outline.iter().filter(|e| e.depth() > 0) {
            let has_parent = self.outline.iter().any(|p| {
                p.depth() + 1 == e.depth() && p.start() <= e.start() && e.end() <= p.end()
            });
            if !has_parent {
                return Err(overlap(e.title()));
            }
        }
        Ok(())
    }

    /// Body text of a char range.
    pub fn slice(&self, start: usize, end: usize) -> &str {
        CharIndex::new(&self.body).slice(&self.body, start, end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceSpan {
    pub doc_id: String,
    pub section_title: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidelineCorpus {
    docs: IndexMap<String, GuidelineDoc>,
}

impl GuidelineCorpus {
    pub fn from_docs(docs: impl IntoIterator<Item = GuidelineDoc>) -> Result<Self, CorpusError> {
        let mut corpus = Self::default();
        for (i, doc) in docs.into_iter().enumerate() {
            corpus.insert(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, doc: GuidelineDoc, line: usize) -> Result<(), CorpusError> {
        if self.docs.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateDocId {
                id: doc.doc_id,
                line,
            });
        }
        doc.validate()?;
        self.docs.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&GuidelineDoc> {
        self.docs.get(doc_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GuidelineDoc> {
        self.docs.values()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Ingest `guidelines.jsonl`; every outline is validated on load.
pub fn ingest_guidelines<R: BufRead>(reader: R) -> Result<GuidelineCorpus, CorpusError> {
    let mut corpus = GuidelineCorpus::default();
    for (line, doc) in read_records::<_, GuidelineDoc>(reader)? {
        corpus.insert(doc, line)?;
    }
    Ok(corpus)
}
