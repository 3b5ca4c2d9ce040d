//! Prompt packaging and the pluggable LLM client.
//!
//! A prompt is a fixed sequence of `### ` blocks. The patient and guideline
//! evidence blocks are present exactly when their toggle is on; an enabled
//! block with no hits reads `(none retrieved)`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CaseRepository, SoapCase, SoapSection, SourceSpan};
use crate::retrieval::EvidenceSet;
use crate::text::collapse_whitespace;

pub const SYSTEM_HEADER: &str = "### SYSTEM";
pub const CASE_HEADER: &str = "### LOCKED CASE";
pub const PATIENT_HEADER: &str = "### SIMILAR PATIENT EVIDENCE";
pub const GUIDELINE_HEADER: &str = "### GUIDELINE EVIDENCE";
pub const QUESTION_HEADER: &str = "### QUESTION";
pub const NONE_RETRIEVED: &str = "(none retrieved)";

pub const DEFAULT_PREAMBLE: &str = "You are a clinical decision support assistant. Answer using the locked case \
and the evidence provided. Cite evidence with its bracketed marker, such as P-n for a similar patient or G-n for a guideline unit.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CitationTarget {
    Patient {
        case_id: String,
    },
    Guideline {
        unit_id: String,
        doc_id: String,
        section_path: Vec<String>,
        span: SourceSpan,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub marker: String,
    #[serde(flatten)]
    pub target: CitationTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPackage {
    pub system_preamble: String,
    pub case_block: String,
    /// Empty iff patient evidence was disabled.
    pub patient_evidence_block: String,
    /// Empty iff guideline evidence was disabled.
    pub guideline_evidence_block: String,
    pub question: String,
    pub citations: Vec<Citation>,
}

fn case_lines(case: &SoapCase, skip_empty: bool) -> String {
    SoapSection::ALL
        .iter()
        .filter(|s| !(skip_empty && case.section(**s).trim().is_empty()))
        .map(|s| format!("{}: {}", s.letter(), collapse_whitespace(case.section(*s))))
        .collect::<Vec<_>>()
        .join("\n")
}

impl PromptPackage {
    /// Package a locked case and its evidence. Patient hits are looked up in
    /// `repo`; hits missing from it are skipped.
    pub fn build(
        case: &SoapCase,
        evidence: &EvidenceSet,
        repo: &CaseRepository,
        question: &str,
        preamble: &str,
    ) -> Self {
        let mut citations = Vec::new();

        let patient_evidence_block = if evidence.toggles.use_patients {
            let mut parts = Vec::new();
            for hit in &evidence.patient_hits {
                let Some(c) = repo.get(&hit.case_id) else {
                    continue;
                };
                let marker = format!("P-{}", parts.len() + 1);
                parts.push(format!(
                    "[{marker}] {} (similarity {:.4})\n{}",
                    hit.case_id,
                    hit.hybrid,
                    case_lines(c, false)
                ));
                citations.push(Citation {
                    marker,
                    target: CitationTarget::Patient {
                        case_id: hit.case_id.clone(),
                    },
                });
            }
            if parts.is_empty() {
                NONE_RETRIEVED.to_string()
            } else {
                parts.join("\n\n")
            }
        } else {
            String::new()
        };

        let guideline_evidence_block = if evidence.toggles.use_guidelines {
            let mut markers: BTreeMap<String, String> = BTreeMap::new();
            let mut parts = Vec::new();
            for hit in &evidence.guideline_hits {
                let mut lines = vec![format!(
                    "Community {} (score {:.4})",
                    hit.community_id, hit.score
                )];
                for u in &hit.units {
                    let next = markers.len() + 1;
                    let marker = markers.entry(u.unit_id.clone()).or_insert_with(|| {
                        let m = format!("G-{next}");
                        citations.push(Citation {
                            marker: m.clone(),
                            target: CitationTarget::Guideline {
                                unit_id: u.unit_id.clone(),
                                doc_id: u.doc_id.clone(),
                                section_path: u.section_path.clone(),
                                span: u.span.clone(),
                            },
                        });
                        m
                    });
                    lines.push(format!(
                        "[{marker}] {} | {}\n{}",
                        u.authority,
                        u.section_path.join(" > "),
                        collapse_whitespace(&u.text)
                    ));
                }
                for r in &hit.relations {
                    let cites: Vec<String> = r
                        .supporting_units
                        .iter()
                        .filter_map(|u| markers.get(u).map(|m| format!("[{m}]")))
                        .collect();
                    let quals: Vec<String> = r
                        .qualifiers
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect();
                    let quals = if quals.is_empty() {
                        String::new()
                    } else {
                        format!(" ({})", quals.join(", "))
                    };
                    lines.push(format!(
                        "Relation: {} {} {}{} {}",
                        r.src_concept,
                        r.relation.as_str(),
                        r.dst_concept,
                        quals,
                        cites.join(" ")
                    ));
                }
                parts.push(lines.join("\n"));
            }
            if parts.is_empty() {
                NONE_RETRIEVED.to_string()
            } else {
                parts.join("\n\n")
            }
        } else {
            String::new()
        };

        Self {
            system_preamble: preamble.to_string(),
            case_block: case_lines(case, true),
            patient_evidence_block,
            guideline_evidence_block,
            question: question.trim().to_string(),
            citations,
        }
    }

    /// The exact text sent to the client.
    pub fn render(&self) -> String {
        let mut blocks = vec![
            format!("{SYSTEM_HEADER}\n{}", self.system_preamble),
            format!("{CASE_HEADER}\n{}", self.case_block),
        ];
        if !self.patient_evidence_block.is_empty() {
            blocks.push(format!("{PATIENT_HEADER}\n{}", self.patient_evidence_block));
        }
        if !self.guideline_evidence_block.is_empty() {
            blocks.push(format!(
                "{GUIDELINE_HEADER}\n{}",
                self.guideline_evidence_block
            ));
        }
        blocks.push(format!("{QUESTION_HEADER}\n{}", self.question));
        blocks.join("\n\n") + "\n"
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM client unavailable: {0}")]
    ClientUnavailable(String),
}

/// Generation parameters, forwarded to the backend unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: None,
            extra: serde_json::Map::new(),
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError>;
}

/// Answers `mock-digest:` followed by the SHA-256 hex of the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockDigestClient;

pub fn prompt_digest(prompt: &str) -> String {
    format!(
        "mock-digest:{}",
        hex::encode(Sha256::digest(prompt.as_bytes()))
    )
}

impl LlmClient for MockDigestClient {
    fn complete(&self, prompt: &str, _params: &LlmParams) -> Result<String, LlmError> {
        Ok(prompt_digest(prompt))
    }
}

/// Answers with the plan of the first similar patient in the prompt, or the
/// empty string when the prompt carries no patient evidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct CopyTopPatientPlanClient;

impl LlmClient for CopyTopPatientPlanClient {
    fn complete(&self, prompt: &str, _params: &LlmParams) -> Result<String, LlmError> {
        Ok(top_patient_plan(prompt).unwrap_or_default().to_string())
    }
}

fn top_patient_plan(prompt: &str) -> Option<&str> {
    let block = prompt.split_once(&format!("{PATIENT_HEADER}\n"))?.1;
    let after = block.split_once("[P-1] ")?.1;
    after
        .lines()
        .take_while(|l| !l.starts_with("### ") && !l.starts_with("[P-2] "))
        .find_map(|l| l.strip_prefix("P: "))
}

/// Always answers the same text.
#[derive(Debug, Clone, Default)]
pub struct FixedAnswerClient(pub String);

impl LlmClient for FixedAnswerClient {
    fn complete(&self, _prompt: &str, _params: &LlmParams) -> Result<String, LlmError> {
        Ok(self.0.clone())
    }
}

/// Adapts a closure.
pub struct FnClient<F>(pub F);

impl<F> LlmClient for FnClient<F>
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &str, _params: &LlmParams) -> Result<String, LlmError> {
        (self.0)(prompt)
    }
}

/// Always fails; stands in for an unreachable backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnavailableClient;

impl LlmClient for UnavailableClient {
    fn complete(&self, _prompt: &str, _params: &LlmParams) -> Result<String, LlmError> {
        Err(LlmError::ClientUnavailable(
            "no LLM backend configured".into(),
        ))
    }
}

/// OpenAI-compatible chat completions endpoint.
#[derive(Debug, Clone)]
pub struct RemoteLlmClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteLlmClient {
    /// The API key is read from the environment variable `api_key_env`.
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            agent,
        }
    }
}

impl LlmClient for RemoteLlmClient {
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        });
        let obj = body.as_object_mut().expect("object literal");
        if let Some(m) = params.max_tokens {
            obj.insert("max_tokens".into(), m.into());
        }
        for (k, v) in &params.extra {
            obj.insert(k.clone(), v.clone());
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let unavailable =
            |e: String| LlmError::ClientUnavailable(format!("{}: {e}", self.endpoint));
        let mut resp = req
            .send_json(&body)
            .map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| unavailable("response has no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CaseSource;
    use crate::retrieval::{ScoredCase, Toggles};

    fn repo() -> CaseRepository {
        CaseRepository::from_cases([
            SoapCase::new(
                "c1",
                CaseSource::Synthetic,
                "cough",
                "fever 39",
                "pneumonia",
                "amoxicillin 7 days",
            ),
            SoapCase::new(
                "c2",
                CaseSource::Synthetic,
                "wheeze",
                "sat 91",
                "asthma",
                "salbutamol",
            ),
        ])
        .unwrap()
    }

    fn evidence(toggles: Toggles, ids: &[&str]) -> EvidenceSet {
        EvidenceSet {
            query_id: "q".into(),
            guideline_hits: Vec::new(),
            patient_hits: ids
                .iter()
                .map(|id| ScoredCase {
                    case_id: id.to_string(),
                    hybrid: 0.5,
                    kw: 0.5,
                    sem: 0.5,
                    matched_concepts: Vec::new(),
                })
                .collect(),
            toggles,
        }
    }

    fn locked() -> SoapCase {
        SoapCase::new(
            "q",
            CaseSource::Synthetic,
            "cough  and\nfever",
            "",
            "chest infection",
            "",
        )
    }

    #[test]
    fn blocks_follow_toggles() {
        for t in Toggles::all() {
            let ids: &[&str] = if t.use_patients { &["c1"] } else { &[] };
            let text = PromptPackage::build(
                &locked(),
                &evidence(t, ids),
                &repo(),
                "Next step?",
                DEFAULT_PREAMBLE,
            )
            .render();
            assert_eq!(text.contains(PATIENT_HEADER), t.use_patients);
            assert_eq!(text.contains(GUIDELINE_HEADER), t.use_guidelines);
            assert!(text.contains("S: cough and fever"));
            assert!(text.ends_with("### QUESTION\nNext step?\n"));
        }
    }

    #[test]
    fn enabled_but_empty_block_is_marked() {
        let p = PromptPackage::build(
            &locked(),
            &evidence(Toggles::BOTH, &[]),
            &repo(),
            "q",
            DEFAULT_PREAMBLE,
        );
        assert_eq!(p.patient_evidence_block, NONE_RETRIEVED);
        assert_eq!(p.guideline_evidence_block, NONE_RETRIEVED);
        assert!(p.citations.is_empty());
    }

    #[test]
    fn copy_client_returns_first_plan() {
        let p = PromptPackage::build(
            &locked(),
            &evidence(Toggles::BOTH, &["c2", "c1"]),
            &repo(),
            "plan?",
            DEFAULT_PREAMBLE,
        );
        let out = CopyTopPatientPlanClient
            .complete(&p.render(), &LlmParams::default())
            .unwrap();
        assert_eq!(out, "salbutamol");
        let none = PromptPackage::build(
            &locked(),
            &evidence(Toggles::NONE, &[]),
            &repo(),
            "plan?",
            DEFAULT_PREAMBLE,
        );
        assert_eq!(
            CopyTopPatientPlanClient
                .complete(&none.render(), &LlmParams::default())
                .unwrap(),
            ""
        );
    }

    #[test]
    fn patient_markers_are_cited() {
        let p = PromptPackage::build(
            &locked(),
            &evidence(Toggles::BOTH, &["c1", "c2"]),
            &repo(),
            "q",
            DEFAULT_PREAMBLE,
        );
        let markers: Vec<&str> = p.citations.iter().map(|c| c.marker.as_str()).collect();
        assert_eq!(markers, ["P-1", "P-2"]);
        assert!(p.patient_evidence_block.contains("[P-2] c2"));
    }

    #[test]
    fn digest_is_sha256_of_prompt() {
        assert_eq!(
            prompt_digest(""),
            "mock-digest:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let a = MockDigestClient
            .complete("x", &LlmParams::default())
            .unwrap();
        assert_eq!(
            a,
            MockDigestClient
                .complete("x", &LlmParams::default())
                .unwrap()
        );
    }

    #[test]
    fn params_pass_through_extra_keys() {
        let p: LlmParams = serde_json::from_str(r#"{"top_p": 0.9}"#).unwrap();
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.extra["top_p"], 0.9);
    }

    #[test]
    fn unreachable_remote_is_unavailable() {
        let c = RemoteLlmClient::new(
            "http://127.0.0.1:9/v1/chat/completions",
            "m",
            "CLINRAG_TEST_NO_SUCH_KEY",
        );
        assert!(matches!(
            c.complete("hi", &LlmParams::default()),
            Err(LlmError::ClientUnavailable(_))
        ));
    }
}
