//! Seeded synthetic corpora for tests, benchmarks and demos.
//!
//! Concept terms are pseudo-words built from a fixed syllable table, so they
//! never collide with the English filler text around them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::concepts::{annotate_case, Category, VocabEntry, Vocabulary};
use crate::corpus::{Authority, CaseRepository, CaseSource, GuidelineDoc, OutlineEntry, SoapCase};
use crate::eval::NoteCompletionItem;
use crate::graph::{RelationType, SegmentConfig};
use crate::store::{ingest, IngestSources, Store, StoreError};

const SYLLABLES: [&str; 24] = [
    "ka", "zo", "ri", "vex", "sul", "mor", "pax", "lun", "dri", "quo", "zel", "bam", "tix", "nor",
    "gal", "fep", "hu", "jor", "lis", "mab", "oru", "yen", "wib", "cra",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Concept counts per category in [`SynthVocab::generate`].
pub const CATEGORY_SIZES: [(Category, usize); 5] = [
    (Category::Diagnosis, 40),
    (Category::Medication, 30),
    (Category::Procedure, 16),
    (Category::Symptom, 30),
    (Category::Other, 10),
];

fn prefix(c: Category) -> char {
    match c {
        Category::Diagnosis => 'D',
        Category::Medication => 'M',
        Category::Procedure => 'P',
        Category::Symptom => 'S',
        Category::Other => 'X',
    }
}

#[derive(Debug, Clone)]
pub struct SynthVocab {
    pub vocab: Vocabulary,
    /// `(concept_id, term)` per category, in id order.
    pub terms: BTreeMap<Category, Vec<(String, String)>>,
}

impl SynthVocab {
    pub fn generate(seed: u64) -> Self {
        let mut r = rng(seed);
        let mut used = BTreeSet::new();
        let mut terms = BTreeMap::new();
        let mut entries = Vec::new();
        for (cat, n) in CATEGORY_SIZES {
            let mut list = Vec::with_capacity(n);
            while list.len() < n {
                let k = r.random_range(2..=3);
                let word: String = (0..k)
                    .map(|_| *SYLLABLES.choose(&mut r).expect("non-empty"))
                    .collect();
                if !used.insert(word.clone()) {
                    continue;
                }
                let id = format!("{}{:03}", prefix(cat), list.len() + 1);
                entries.push(VocabEntry {
                    term: word.clone(),
                    concept_id: id.clone(),
                    category: cat,
                });
                list.push((id, word));
            }
            terms.insert(cat, list);
        }
        Self {
            vocab: Vocabulary::new(entries).expect("generated terms are unique"),
            terms,
        }
    }

    pub fn of(&self, c: Category) -> &[(String, String)] {
        &self.terms[&c]
    }

    pub fn term(&self, concept_id: &str) -> &str {
        self.terms
            .values()
            .flatten()
            .find(|(id, _)| id == concept_id)
            .map(|(_, t)| t.as_str())
            .expect("known concept")
    }

    /// The vocabulary as a TSV file body.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# term\tconcept_id\tcategory\n");
        for e in self.vocab.entries() {
            out.push_str(&format!("{}\t{}\t{}\n", e.term, e.concept_id, e.category));
        }
        out
    }
}

fn pick<'a>(r: &mut ChaCha8Rng, list: &'a [(String, String)], k: usize) -> Vec<&'a str> {
    list.choose_multiple(r, k)
        .map(|(_, t)| t.as_str())
        .collect()
}

/// One random case over the vocabulary.
pub fn synth_case(r: &mut ChaCha8Rng, sv: &SynthVocab, case_id: &str) -> SoapCase {
    let sym = pick(r, sv.of(Category::Symptom), 3);
    let n_diag = r.random_range(1..=2);
    let diag = pick(r, sv.of(Category::Diagnosis), n_diag);
    let n_med = r.random_range(1..=2);
    let med = pick(r, sv.of(Category::Medication), n_med);
    let proc_ = pick(r, sv.of(Category::Procedure), 1);
    let other = pick(r, sv.of(Category::Other), 1);
    let subjective = format!(
        "Patient reports {} and {} for {} days. Denies {}.",
        sym[0],
        sym[1],
        r.random_range(1..15),
        sym[2]
    );
    let objective = format!(
        "Heart rate {} bpm, temperature {}.{} C. Exam notes {}.",
        r.random_range(55..130),
        r.random_range(36..40),
        r.random_range(0..10),
        other[0]
    );
    let assessment = match diag.as_slice() {
        [d] => format!("Findings consistent with {d}."),
        [d, e] => format!("Findings consistent with {d} on a background of {e}."),
        _ => unreachable!("one or two diagnoses"),
    };
    let plan = format!(
        "Start {} {} mg daily. Arrange {}. Review in {} weeks.",
        med.join(" plus "),
        r.random_range(1..20) * 25,
        proc_[0],
        r.random_range(1..6)
    );
    SoapCase::new(
        case_id,
        CaseSource::Synthetic,
        subjective,
        objective,
        assessment,
        plan,
    )
}

/// `n` annotated cases with ids `case-00000` upward.
pub fn synth_cases(n: usize, seed: u64, sv: &SynthVocab) -> Vec<SoapCase> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let mut c = synth_case(&mut r, sv, &format!("case-{i:05}"));
            annotate_case(&mut c, &sv.vocab);
            c
        })
        .collect()
}

pub fn synth_repository(n: usize, seed: u64, sv: &SynthVocab) -> CaseRepository {
    CaseRepository::from_cases(synth_cases(n, seed, sv)).expect("generated ids are unique")
}

/// Same concepts and plan, with the numbers in the objective section changed.
pub fn near_duplicate(case: &SoapCase, new_id: &str, vocab: &Vocabulary) -> SoapCase {
    let objective: String = case
        .objective
        .chars()
        .map(|c| match c.to_digit(10) {
            Some(d) => char::from_digit((d + 1) % 10, 10).expect("digit"),
            None => c,
        })
        .collect();
    let mut dup = SoapCase::new(
        new_id,
        case.source,
        case.subjective.clone(),
        objective,
        case.assessment.clone(),
        case.plan.clone(),
    );
    annotate_case(&mut dup, vocab);
    dup
}

/// Eval items plus a repository holding background cases and one planted
/// near-duplicate (`dup-<case_id>`) per item. The items themselves are not in
/// the repository.
pub fn note_fixture(
    items: usize,
    background: usize,
    seed: u64,
    sv: &SynthVocab,
) -> (CaseRepository, Vec<NoteCompletionItem>) {
    let mut r = rng(seed ^ 0x5eed);
    let mut cases = synth_cases(background, seed, sv);
    let mut out = Vec::with_capacity(items);
    for i in 0..items {
        let mut c = synth_case(&mut r, sv, &format!("eval-{i:03}"));
        annotate_case(&mut c, &sv.vocab);
        cases.push(near_duplicate(&c, &format!("dup-{}", c.case_id), &sv.vocab));
        out.push(NoteCompletionItem::from_case(&c));
    }
    (CaseRepository::from_cases(cases).expect("unique ids"), out)
}

/// Planted relation in concept space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlantedRelation {
    pub src_concept: String,
    pub relation: RelationType,
    pub dst_concept: String,
}

/// Trigger rules matching the sentences planted by [`synth_guidelines`].
pub const RULES_TSV: &str = "# trigger\trelation\tsrc_category\tdst_category
to treat\tindication\tmedication\tdiagnosis
is contraindicated in\tcontraindication\tmedication\tdiagnosis
to monitor\tmonitoring\tprocedure\tdiagnosis
escalate to\tescalation\tdiagnosis\tprocedure
";

pub const QUALIFIERS_TSV: &str = "# pattern\tkey
(\\d+ mg)\tdose
(\\d+ (?:days|weeks))\tduration
";

#[derive(Debug, Clone)]
pub struct SynthGuidelines {
    pub docs: Vec<GuidelineDoc>,
    pub planted: BTreeSet<PlantedRelation>,
}

const FILLER: [&str; 6] = [
    "Local protocols should be followed where they exist.",
    "Document the rationale for every decision in the record.",
    "Shared decision making with the patient is recommended.",
    "Review the evidence base when new trials are published.",
    "Consider regional resistance patterns and availability.",
    "Training for staff should be refreshed each year.",
];

fn planted_sentence(
    r: &mut ChaCha8Rng,
    sv: &SynthVocab,
    planted: &mut BTreeSet<PlantedRelation>,
) -> String {
    let diag = sv.of(Category::Diagnosis).choose(r).expect("diagnoses");
    let med = sv.of(Category::Medication).choose(r).expect("medications");
    let proc_ = sv.of(Category::Procedure).choose(r).expect("procedures");
    let (sentence, rel) = match r.random_range(0..4) {
        0 => (
            format!(
                "Give {} {} mg to treat {} for {} days.",
                med.1,
                r.random_range(1..9) * 50,
                diag.1,
                r.random_range(3..15)
            ),
            PlantedRelation {
                src_concept: med.0.clone(),
                relation: RelationType::Indication,
                dst_concept: diag.0.clone(),
            },
        ),
        1 => (
            format!("Note that {} is contraindicated in {}.", med.1, diag.1),
            PlantedRelation {
                src_concept: med.0.clone(),
                relation: RelationType::Contraindication,
                dst_concept: diag.0.clone(),
            },
        ),
        2 => (
            format!("Perform {} to monitor {} weekly.", proc_.1, diag.1),
            PlantedRelation {
                src_concept: proc_.0.clone(),
                relation: RelationType::Monitoring,
                dst_concept: diag.0.clone(),
            },
        ),
        _ => (
            format!("If {} worsens, escalate to {} promptly.", diag.1, proc_.1),
            PlantedRelation {
                src_concept: diag.0.clone(),
                relation: RelationType::Escalation,
                dst_concept: proc_.0.clone(),
            },
        ),
    };
    planted.insert(rel);
    sentence
}

/// `n` documents, each with two chapters of two leaf sections. Every leaf holds
/// filler sentences and planted trigger sentences.
pub fn synth_guidelines(n: usize, seed: u64, sv: &SynthVocab) -> SynthGuidelines {
    let mut r = rng(seed);
    let mut planted = BTreeSet::new();
    let mut docs = Vec::with_capacity(n);
    for d in 0..n {
        let mut body = String::new();
        let mut outline = Vec::new();
        let len = |s: &str| s.chars().count();
        for ch in 0..2 {
            let ch_start = len(&body);
            let ch_title = format!("Chapter {}", ch + 1);
            body.push_str(&format!("{ch_title}\n"));
            for sec in 0..2 {
                let title = format!("Section {}.{}", ch + 1, sec + 1);
                let start = len(&body);
                let mut sentences: Vec<String> = FILLER
                    .choose_multiple(&mut r, 2)
                    .map(|s| s.to_string())
                    .collect();
                for _ in 0..r.random_range(1..=3) {
                    sentences.push(planted_sentence(&mut r, sv, &mut planted));
                }
                sentences.shuffle(&mut r);
                body.push_str(&sentences.join(" "));
                body.push('\n');
                outline.push(OutlineEntry::new(title, 1, start, len(&body)));
            }
            outline.push(OutlineEntry::new(ch_title, 0, ch_start, len(&body)));
        }
        outline.sort_by_key(|e| (e.start(), e.depth()));
        docs.push(GuidelineDoc {
            doc_id: format!("gl-{d:03}"),
            authority: if d % 2 == 0 {
                Authority::Who
            } else {
                Authority::Nice
            },
            title: format!("Synthetic guideline {d}"),
            body,
            outline,
        });
    }
    SynthGuidelines { docs, planted }
}

fn raw_case_record(c: &SoapCase) -> serde_json::Value {
    json!({
        "case_id": c.case_id,
        "source": c.source.as_str(),
        "s": c.subjective,
        "o": c.objective,
        "a": c.assessment,
        "p": c.plan,
    })
}

/// Labeled SOAP text that `parse_soap` turns back into `case`.
pub fn soap_text(case: &SoapCase) -> String {
    let mut out = format!(
        "S: {}\nO: {}\nA: {}\n",
        case.subjective, case.objective, case.assessment
    );
    if !case.plan.is_empty() {
        out.push_str(&format!("P: {}\n", case.plan));
    }
    out
}

/// Run the ingest pipeline over in-memory fixture files.
pub fn fixture_store(
    sv: &SynthVocab,
    cases: &[SoapCase],
    docs: &[GuidelineDoc],
) -> Result<Store, StoreError> {
    let lines = |vals: Vec<serde_json::Value>| {
        vals.iter()
            .map(|v| v.to_string() + "\n")
            .collect::<String>()
    };
    let cases = lines(cases.iter().map(raw_case_record).collect());
    let docs = lines(
        docs.iter()
            .map(|d| serde_json::to_value(d).expect("doc serializes"))
            .collect(),
    );
    let vocab = sv.to_tsv();
    ingest(
        IngestSources {
            cases: cases.as_bytes(),
            guidelines: docs.as_bytes(),
            vocab: vocab.as_bytes(),
            rules: RULES_TSV.as_bytes(),
            qualifiers: Some(QUALIFIERS_TSV.as_bytes()),
        },
        &SegmentConfig::default(),
    )
}

/// Paths of a fixture written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub cases: std::path::PathBuf,
    pub guidelines: std::path::PathBuf,
    pub vocab: std::path::PathBuf,
    pub rules: std::path::PathBuf,
    pub qualifiers: std::path::PathBuf,
}

/// Write ingestion inputs for `cases` and `docs` into `dir`.
pub fn write_fixture(
    dir: &Path,
    sv: &SynthVocab,
    cases: &[SoapCase],
    docs: &[GuidelineDoc],
) -> io::Result<FixtureFiles> {
    fs::create_dir_all(dir)?;
    let files = FixtureFiles {
        cases: dir.join("cases.jsonl"),
        guidelines: dir.join("guidelines.jsonl"),
        vocab: dir.join("vocab.tsv"),
        rules: dir.join("rules.tsv"),
        qualifiers: dir.join("qualifiers.tsv"),
    };
    let lines = |vals: Vec<serde_json::Value>| {
        vals.iter()
            .map(|v| v.to_string() + "\n")
            .collect::<String>()
    };
    fs::write(
        &files.cases,
        lines(cases.iter().map(raw_case_record).collect()),
    )?;
    fs::write(
        &files.guidelines,
        lines(
            docs.iter()
                .map(|d| serde_json::to_value(d).expect("doc serializes"))
                .collect(),
        ),
    )?;
    fs::write(&files.vocab, sv.to_tsv())?;
    fs::write(&files.rules, RULES_TSV)?;
    fs::write(&files.qualifiers, QUALIFIERS_TSV)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GuidelineCorpus;

    #[test]
    fn deterministic_given_seed() {
        let a = SynthVocab::generate(3);
        let b = SynthVocab::generate(3);
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(synth_cases(5, 9, &a), synth_cases(5, 9, &b));
        assert_ne!(synth_cases(5, 9, &a), synth_cases(5, 10, &a));
    }

    #[test]
    fn cases_carry_concepts() {
        let sv = SynthVocab::generate(1);
        for c in synth_cases(20, 2, &sv) {
            assert!(c.concepts.len() >= 7, "{c:?}");
        }
    }

    #[test]
    fn near_duplicate_keeps_concepts_and_plan() {
        let sv = SynthVocab::generate(1);
        let c = &synth_cases(1, 4, &sv)[0];
        let d = near_duplicate(c, "d", &sv.vocab);
        assert_ne!(c.objective, d.objective);
        assert_eq!(c.plan, d.plan);
        let ids = |x: &SoapCase| {
            x.concepts
                .iter()
                .map(|m| m.concept_id.clone())
                .collect::<BTreeSet<_>>()
        };
        assert_eq!(ids(c), ids(&d));
    }

    #[test]
    fn guideline_outlines_validate() {
        let sv = SynthVocab::generate(1);
        let g = synth_guidelines(5, 7, &sv);
        GuidelineCorpus::from_docs(g.docs).unwrap();
        assert!(!g.planted.is_empty());
    }
}
