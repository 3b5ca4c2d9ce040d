//! Note completion, multiple-choice QA and the lambda sweep.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::metrics::NoteScores;
use super::EvalError;
use crate::config::HybridWeights;
use crate::corpus::{CaseSource, SoapCase};
use crate::engine::{Engine, RetrieveOptions};
use crate::qa::{LlmClient, LlmParams};
use crate::retrieval::Toggles;

pub const PLAN_INSTRUCTION: &str = "Produce the Plan section for this case.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInput {
    #[serde(default)]
    pub s: String,
    #[serde(default)]
    pub o: String,
    #[serde(default)]
    pub a: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteCompletionItem {
    pub case_id: String,
    pub input: CaseInput,
    pub reference_plan: String,
}

impl NoteCompletionItem {
    pub fn from_case(case: &SoapCase) -> Self {
        Self {
            case_id: case.case_id.clone(),
            input: CaseInput {
                s: case.subjective.clone(),
                o: case.objective.clone(),
                a: case.assessment.clone(),
            },
            reference_plan: case.plan.clone(),
        }
    }

    /// The plan-less case posed to the pipeline.
    pub fn locked_case(&self) -> SoapCase {
        SoapCase::new(
            self.case_id.clone(),
            CaseSource::Synthetic,
            self.input.s.clone(),
            self.input.o.clone(),
            self.input.a.clone(),
            "",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub item_id: String,
    pub stem: String,
    pub options: Vec<String>,
    pub answer_index: usize,
}

fn read_items<R: BufRead, T: serde::de::DeserializeOwned>(
    reader: R,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::MalformedItem {
            line: i + 1,
            reason,
        };
        let item: T = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        check(&item).map_err(bad)?;
        out.push(item);
    }
    Ok(out)
}

pub fn load_note_items<R: BufRead>(reader: R) -> Result<Vec<NoteCompletionItem>, EvalError> {
    read_items(reader, |it: &NoteCompletionItem| {
        if it.reference_plan.trim().is_empty() {
            Err("reference_plan is empty".into())
        } else {
            Ok(())
        }
    })
}

pub fn load_mcq_items<R: BufRead>(reader: R) -> Result<Vec<McqItem>, EvalError> {
    read_items(reader, |it: &McqItem| {
        if it.options.len() < 2 {
            Err("need at least two options".into())
        } else if it.options.len() > 26 {
            Err("at most 26 options".into())
        } else if it.answer_index >= it.options.len() {
            Err(format!("answer_index {} out of range", it.answer_index))
        } else {
            Ok(())
        }
    })
}

/// Toggles, weights and generation parameters of one run.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings<'a> {
    pub toggles: Toggles,
    pub weights: &'a HybridWeights,
    pub params: &'a LlmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteItemResult {
    pub case_id: String,
    pub candidate: String,
    pub scores: NoteScores,
    /// Patient case ids retrieved for the item.
    pub retrieved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteReport {
    pub toggles: Toggles,
    pub lambda: f64,
    pub items: Vec<NoteItemResult>,
    pub mean: NoteScores,
    /// False when a client failure stopped the run; `items` holds what finished.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn run_note_completion(
    engine: &Engine,
    items: &[NoteCompletionItem],
    settings: RunSettings<'_>,
    client: &dyn LlmClient,
) -> Result<NoteReport, EvalError> {
    let opts = RetrieveOptions::from(settings.toggles);
    let mut results = Vec::with_capacity(items.len());
    let mut error = None;
    for item in items {
        let mut case = item.locked_case();
        engine.annotate(&mut case);
        let query = engine.query(&case)?;
        let evidence = engine.evidence_with(&query, &opts, settings.weights)?;
        let prompt = engine.prompt(&case, &evidence, PLAN_INSTRUCTION).render();
        let candidate = match client.complete(&prompt, settings.params) {
            Ok(c) => c,
            Err(e) => {
                tracing::warn!(case_id = %item.case_id, error = %e, "note completion aborted");
                error = Some(e.to_string());
                break;
            }
        };
        results.push(NoteItemResult {
            case_id: item.case_id.clone(),
            scores: NoteScores::score(&candidate, &item.reference_plan),
            candidate,
            retrieved: evidence
                .patient_hits
                .iter()
                .map(|h| h.case_id.clone())
                .collect(),
        });
    }
    let scores: Vec<NoteScores> = results.iter().map(|r| r.scores).collect();
    Ok(NoteReport {
        toggles: settings.toggles,
        lambda: settings.weights.lambda,
        mean: NoteScores::mean(&scores),
        items: results,
        complete: error.is_none(),
        error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: NoteReport,
}

pub fn ablation_label(t: Toggles) -> &'static str {
    match (t.use_patients, t.use_guidelines) {
        (false, false) => "baseline",
        (true, false) => "+SPR",
        (false, true) => "+GraphRAG",
        (true, true) => "+both",
    }
}

/// The four toggle combinations, baseline first.
pub fn run_ablation(
    engine: &Engine,
    items: &[NoteCompletionItem],
    weights: &HybridWeights,
    params: &LlmParams,
    client: &dyn LlmClient,
) -> Result<Vec<AblationRow>, EvalError> {
    Toggles::all()
        .into_iter()
        .map(|toggles| {
            let settings = RunSettings {
                toggles,
                weights,
                params,
            };
            Ok(AblationRow {
                label: ablation_label(toggles).to_string(),
                report: run_note_completion(engine, items, settings, client)?,
            })
        })
        .collect()
}

/// Stem followed by lettered options.
pub fn mcq_question(item: &McqItem) -> String {
    let mut q = item.stem.trim().to_string();
    for (i, opt) in item.options.iter().enumerate() {
        q.push_str(&format!("\n{}. {}", option_letter(i), opt.trim()));
    }
    q.push_str("\nAnswer with the letter of the correct option.");
    q
}

fn option_letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Index of the first standalone uppercase option letter in `output`.
pub fn parse_answer_letter(output: &str, n_options: usize) -> Option<usize> {
    let chars: Vec<char> = output.chars().collect();
    (0..chars.len()).find_map(|i| {
        let c = chars[i];
        let standalone = |j: Option<usize>| {
            j.and_then(|j| chars.get(j))
                .is_none_or(|n| !n.is_alphanumeric())
        };
        if c.is_ascii_uppercase() && standalone(i.checked_sub(1)) && standalone(Some(i + 1)) {
            let idx = (c as u8 - b'A') as usize;
            (idx < n_options).then_some(idx)
        } else {
            None
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItemResult {
    pub item_id: String,
    pub output: String,
    pub predicted: Option<usize>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    pub toggles: Toggles,
    pub lambda: f64,
    pub accuracy: f64,
    pub items: Vec<McqItemResult>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The stem is locked as the case and posed, with options, as the question.
pub fn run_mcq(
    engine: &Engine,
    items: &[McqItem],
    settings: RunSettings<'_>,
    client: &dyn LlmClient,
) -> Result<McqReport, EvalError> {
    let opts = RetrieveOptions::from(settings.toggles);
    let mut results = Vec::with_capacity(items.len());
    let mut error = None;
    for item in items {
        let mut case = SoapCase::new(
            item.item_id.clone(),
            CaseSource::Synthetic,
            item.stem.clone(),
            "",
            "",
            "",
        );
        engine.annotate(&mut case);
        let query = engine.query(&case)?;
        let evidence = engine.evidence_with(&query, &opts, settings.weights)?;
        let prompt = engine
            .prompt(&case, &evidence, &mcq_question(item))
            .render();
        let output = match client.complete(&prompt, settings.params) {
            Ok(o) => o,
            Err(e) => {
                tracing::warn!(item_id = %item.item_id, error = %e, "mcq run aborted");
                error = Some(e.to_string());
                break;
            }
        };
        let predicted = parse_answer_letter(&output, item.options.len());
        if predicted.is_none() {
            tracing::warn!(item_id = %item.item_id, output = %output, "unparseable answer counted wrong");
        }
        results.push(McqItemResult {
            item_id: item.item_id.clone(),
            correct: predicted == Some(item.answer_index),
            predicted,
            output,
        });
    }
    let accuracy = if results.is_empty() {
        0.0
    } else {
        results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
    };
    Ok(McqReport {
        toggles: settings.toggles,
        lambda: settings.weights.lambda,
        accuracy,
        items: results,
        complete: error.is_none(),
        error,
    })
}

pub fn default_lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub enum SweepItems<'a> {
    Note(&'a [NoteCompletionItem]),
    Mcq(&'a [McqItem]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// Mean ROUGE-L F1 for note items, accuracy for MCQ items.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub best_lambda: f64,
    pub table: Vec<SweepRow>,
}

/// Evaluate every lambda in `grid`; the best metric wins, ties go to the
/// smaller lambda.
pub fn tune_lambda(
    engine: &Engine,
    items: SweepItems<'_>,
    grid: &[f64],
    toggles: Toggles,
    params: &LlmParams,
    client: &dyn LlmClient,
) -> Result<SweepReport, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let base = engine.config().hybrid_weights();
    let mut table = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let weights = HybridWeights::new(lambda, base.category_weights.clone())?;
        let settings = RunSettings {
            toggles,
            weights: &weights,
            params,
        };
        let metric = match &items {
            SweepItems::Note(it) => {
                run_note_completion(engine, it, settings, client)?
                    .mean
                    .rouge_l
            }
            SweepItems::Mcq(it) => run_mcq(engine, it, settings, client)?.accuracy,
        };
        table.push(SweepRow { lambda, metric });
    }
    let best = table
        .iter()
        .fold(None::<&SweepRow>, |best, row| match best {
            Some(b)
                if b.metric > row.metric || (b.metric == row.metric && b.lambda <= row.lambda) =>
            {
                Some(b)
            }
            _ => Some(row),
        })
        .expect("non-empty grid");
    Ok(SweepReport {
        best_lambda: best.lambda,
        table,
    })
}
