use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clinrag::config::AppConfig;
use clinrag::embed::RemoteEmbedder;
use clinrag::engine::{build_snapshot, EvidenceReport};
use clinrag::eval::{
    default_lambda_grid, load_mcq_items, load_note_items, run_ablation, run_mcq,
    run_note_completion, tune_lambda, NoteReport, NoteScores, RunSettings, SweepItems,
};
use clinrag::graph::SegmentConfig;
use clinrag::qa::{CopyTopPatientPlanClient, MockDigestClient, RemoteLlmClient};
use clinrag::store::{ingest_files, write_store};
use clinrag::{
    EmbeddingProvider, Engine, HashedTrigramEmbedder, HybridWeights, LlmClient, LlmParams,
    RetrieveOptions,
};
use clinrag_service::{AppState, ServiceOptions};
use serde_json::json;

use crate::failure::Failure;
use crate::{
    Cli, ClientArg, Command, EvalCommand, EvalCommon, IndexArgs, IngestArgs, QueryArgs, ServeArgs,
    SweepMode,
};

pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = AppConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Index(a) => index(a, &cfg),
        Command::Query(a) => query(a, cfg),
        Command::Eval(e) => eval(e, cfg),
        Command::Serve(a) => serve(a, cfg),
    }
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let defaults = SegmentConfig::default();
    let seg = SegmentConfig {
        max_unit_chars: a.max_unit_chars.unwrap_or(defaults.max_unit_chars),
        min_unit_chars: a.min_unit_chars.unwrap_or(defaults.min_unit_chars),
    };
    let store = ingest_files(
        &a.cases,
        &a.guidelines,
        &a.vocab,
        &a.rules,
        a.qualifiers.as_deref(),
        &seg,
    )?;
    write_store(&store, &a.out)?;
    println!(
        "ingested {} cases, {} guidelines, {} text units, {} entities, {} edges into {}",
        store.repo.len(),
        store.corpus.len(),
        store.graph.unit_index.len(),
        store.graph.nodes.len(),
        store.graph.edges.len(),
        a.out.display()
    );
    Ok(())
}

fn embedder(spec: &str, dim: usize, seed: u64) -> Box<dyn EmbeddingProvider> {
    if spec == "default" {
        Box::new(HashedTrigramEmbedder::new(
            clinrag::embed::DEFAULT_DIM,
            seed,
        ))
    } else {
        Box::new(RemoteEmbedder::new(spec, dim))
    }
}

fn index(a: IndexArgs, cfg: &AppConfig) -> Result<(), Failure> {
    let spec = a
        .embedder
        .or_else(|| cfg.embedding_endpoint.clone())
        .unwrap_or_else(|| "default".into());
    let provider = embedder(&spec, a.dim, a.seed);
    let chars = a.summary_chars.unwrap_or(cfg.summary_chars);
    let manifest = build_snapshot(&a.store, &a.out, provider.as_ref(), a.seed, chars)?;
    for (m, n) in &manifest.partition_sizes {
        println!("{:<20} {n}", m.as_str());
    }
    println!(
        "embedder {} dim {} -> {}",
        manifest.embedder_id,
        manifest.dim,
        a.out.display()
    );
    Ok(())
}

fn index_dir(flag: Option<PathBuf>, cfg: &AppConfig) -> Result<PathBuf, Failure> {
    flag.or_else(|| cfg.index_dir.clone())
        .ok_or_else(|| Failure::input("no index directory: pass --index or set index_dir"))
}

fn open(dir: &Path, cfg: &AppConfig) -> Result<Engine, Failure> {
    Ok(Engine::open(dir, None, cfg.retrieval.clone())?)
}

fn with_lambda(cfg: &mut AppConfig, lambda: Option<f64>) -> Result<(), Failure> {
    if let Some(l) = lambda {
        cfg.retrieval.lambda = l;
    }
    cfg.retrieval.validate()?;
    Ok(())
}

fn query(a: QueryArgs, mut cfg: AppConfig) -> Result<(), Failure> {
    with_lambda(&mut cfg, a.lambda)?;
    let engine = open(&index_dir(a.index, &cfg)?, &cfg)?;
    let raw = std::fs::read_to_string(&a.case)
        .map_err(|e| Failure::input(format!("{}: {e}", a.case.display())))?;
    let stem = a
        .case
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let case = engine
        .lock_case(&raw, &format!("query:{stem}"))
        .map_err(|e| Failure::input(e.to_string()))?;
    let toggles = clinrag::Toggles::from(a.toggles);
    let opts = RetrieveOptions {
        k_patients: a.k,
        k_communities: a.k_communities,
        ..toggles.into()
    };
    let report = engine.retrieve(&case, &opts)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    } else {
        print_report(&report);
    }
    Ok(())
}

fn print_report(r: &EvidenceReport) {
    let ev = &r.evidence;
    if ev.toggles.use_patients {
        println!("similar patients");
        println!(
            "{:>4}  {:<24} {:>8} {:>8} {:>8}",
            "rank", "case_id", "hybrid", "kw", "sem"
        );
        for (i, h) in ev.patient_hits.iter().enumerate() {
            println!(
                "{:>4}  {:<24} {:>8.4} {:>8.4} {:>8.4}",
                i + 1,
                h.case_id,
                h.hybrid,
                h.kw,
                h.sem
            );
        }
    }
    if ev.toggles.use_guidelines {
        println!("guideline communities");
        for h in &ev.guideline_hits {
            println!(
                "  community {} score {:.4} ({} units, {} relations)",
                h.community_id,
                h.score,
                h.units.len(),
                h.relations.len()
            );
            for u in &h.units {
                println!(
                    "    {} {} | {}",
                    u.unit_id,
                    u.authority,
                    u.section_path.join(" > ")
                );
            }
        }
    }
    if !r.query_saliency.is_empty() {
        println!("query concepts");
        for s in &r.query_saliency {
            println!("  {:<24} {:.4} {:?}", s.surface, s.score, s.level);
        }
    }
}

fn client(arg: ClientArg, cfg: &AppConfig) -> Result<Box<dyn LlmClient>, Failure> {
    Ok(match arg {
        ClientArg::CopyPlan => Box::new(CopyTopPatientPlanClient),
        ClientArg::Mock => Box::new(MockDigestClient),
        ClientArg::Remote => {
            let endpoint = cfg.llm_endpoint.clone().ok_or_else(|| {
                Failure::input(
                    "--client remote needs llm_endpoint in config or CLINRAG_LLM_ENDPOINT",
                )
            })?;
            Box::new(RemoteLlmClient::new(
                endpoint,
                cfg.llm_model.clone(),
                &cfg.api_key_env,
            ))
        }
    })
}

fn open_items(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write_results(out: Option<&Path>, value: serde_json::Value) -> Result<(), Failure> {
    if let Some(path) = out {
        let mut f =
            File::create(path).map_err(|e| Failure::generic(format!("{}: {e}", path.display())))?;
        writeln!(
            f,
            "{}",
            serde_json::to_string_pretty(&value).expect("results serialize")
        )?;
    }
    Ok(())
}

fn score_row(label: &str, s: &NoteScores) {
    println!(
        "{label:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
        s.rouge1, s.rouge2, s.rouge_l, s.bleu
    );
}

fn check_complete(complete: bool, error: &Option<String>) -> Result<(), Failure> {
    if complete {
        Ok(())
    } else {
        Err(Failure::external(format!(
            "run stopped early: {}",
            error.as_deref().unwrap_or("client failure")
        )))
    }
}

struct EvalEnv {
    engine: Engine,
    weights: HybridWeights,
    params: LlmParams,
    client: Box<dyn LlmClient>,
}

fn eval_env(c: &EvalCommon, mut cfg: AppConfig) -> Result<EvalEnv, Failure> {
    with_lambda(&mut cfg, c.lambda)?;
    let engine = open(&index_dir(c.index.clone(), &cfg)?, &cfg)?;
    let params = LlmParams {
        temperature: c.temperature.unwrap_or(0.0),
        ..Default::default()
    };
    Ok(EvalEnv {
        weights: cfg.retrieval.hybrid_weights(),
        client: client(c.client, &cfg)?,
        engine,
        params,
    })
}

fn eval(cmd: EvalCommand, cfg: AppConfig) -> Result<(), Failure> {
    match cmd {
        EvalCommand::Note {
            common,
            toggles,
            ablation,
        } => {
            let items = load_note_items(open_items(&common.items)?)?;
            let env = eval_env(&common, cfg)?;
            println!(
                "{:<12} {:>8} {:>8} {:>8} {:>8}",
                "run", "rouge1", "rouge2", "rougeL", "bleu"
            );
            let reports: Vec<(String, NoteReport)> = if ablation {
                run_ablation(
                    &env.engine,
                    &items,
                    &env.weights,
                    &env.params,
                    env.client.as_ref(),
                )?
                .into_iter()
                .map(|r| (r.label, r.report))
                .collect()
            } else {
                let settings = RunSettings {
                    toggles: toggles.into(),
                    weights: &env.weights,
                    params: &env.params,
                };
                let r = run_note_completion(&env.engine, &items, settings, env.client.as_ref())?;
                vec![(clinrag::eval::ablation_label(r.toggles).to_string(), r)]
            };
            for (label, r) in &reports {
                score_row(label, &r.mean);
            }
            let rows: Vec<_> = reports
                .iter()
                .map(|(l, r)| json!({"label": l, "report": r}))
                .collect();
            write_results(
                common.out.as_deref(),
                json!({ "mode": "note", "runs": rows }),
            )?;
            for (_, r) in &reports {
                check_complete(r.complete, &r.error)?;
            }
            Ok(())
        }
        EvalCommand::Mcq { common, toggles } => {
            let items = load_mcq_items(open_items(&common.items)?)?;
            let env = eval_env(&common, cfg)?;
            let settings = RunSettings {
                toggles: toggles.into(),
                weights: &env.weights,
                params: &env.params,
            };
            let r = run_mcq(&env.engine, &items, settings, env.client.as_ref())?;
            println!("accuracy {:.4} over {} items", r.accuracy, r.items.len());
            write_results(common.out.as_deref(), json!({ "mode": "mcq", "report": r }))?;
            check_complete(r.complete, &r.error)
        }
        EvalCommand::Sweep {
            common,
            mode,
            toggles,
            grid,
        } => {
            let grid = if grid.is_empty() {
                default_lambda_grid()
            } else {
                grid
            };
            let env = eval_env(&common, cfg)?;
            let note;
            let mcq;
            let items = match mode {
                SweepMode::Note => {
                    note = load_note_items(open_items(&common.items)?)?;
                    SweepItems::Note(&note)
                }
                SweepMode::Mcq => {
                    mcq = load_mcq_items(open_items(&common.items)?)?;
                    SweepItems::Mcq(&mcq)
                }
            };
            let r = tune_lambda(
                &env.engine,
                items,
                &grid,
                toggles.into(),
                &env.params,
                env.client.as_ref(),
            )?;
            println!("{:>8} {:>8}", "lambda", "metric");
            for row in &r.table {
                println!("{:>8.2} {:>8.4}", row.lambda, row.metric);
            }
            println!("best lambda {}", r.best_lambda);
            write_results(
                common.out.as_deref(),
                json!({ "mode": "sweep", "report": r }),
            )
        }
    }
}

fn serve(a: ServeArgs, cfg: AppConfig) -> Result<(), Failure> {
    let engine = open(&index_dir(a.index, &cfg)?, &cfg)?;
    let client: Arc<dyn LlmClient> = match (&cfg.llm_endpoint, a.mock_llm) {
        (Some(endpoint), false) => Arc::new(RemoteLlmClient::new(
            endpoint.clone(),
            cfg.llm_model.clone(),
            &cfg.api_key_env,
        )),
        _ => {
            tracing::warn!("no LLM endpoint configured, answering with prompt digests");
            Arc::new(MockDigestClient)
        }
    };
    let port = a.port.unwrap_or(cfg.service.port);
    let state = AppState::new(Some(engine), client, ServiceOptions::from(&cfg.service));
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::generic(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), port))
            .await
            .map_err(|e| Failure::input(format!("cannot bind {}:{port}: {e}", a.host)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        clinrag_service::serve(listener, state).await?;
        Ok(())
    })
}
