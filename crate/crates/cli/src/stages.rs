//! One function per pipeline command. Each reads its upstream stage outputs
//! from the workspace, refuses stale or missing inputs, and writes its own
//! outputs atomically together with its bookkeeping files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use astrolens::analysis::{analyze_clusters, label_payload, select_cluster, token_windows, verify_snippets};
use astrolens::corpus::{
    bin_values, load_properties_csv, load_sources, merge_properties, property_values, save_sources, Diagnostic,
    SourceFormat, SourceRecord, ValidationOptions,
};
use astrolens::digest::sha256_hex;
use astrolens::llmclient::{
    Backend, ClientStats, ContentCache, EmbeddingMatrix, HttpBackend, LlmClient, MentionStatus, MockBackend,
    PromptTemplate, SummaryDoc,
};
use astrolens::purity::{knn_purity, ComparisonReport, PurityReport, Space};
use astrolens::sae::{train, ActivationMatrix, SaeModel};
use astrolens::tsne::{run_tsne, ProjectionResult, ProjectionSidecar};
use serde_json::json;

use crate::config::{BackendConfig, PipelineConfig, TrainingRows};
use crate::error::{ctx, CliError, Result};
use crate::workspace::{read_json, write_json, Stage, StageInputs, Workspace};

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    /// False when the stage was already up to date and nothing ran.
    pub ran: bool,
    pub stats: ClientStats,
}

pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn Backend>> {
    Ok(match config {
        BackendConfig::Mock(m) => Arc::new(MockBackend::new(m.clone())?),
        BackendConfig::Http(h) => Arc::new(HttpBackend::new(h.clone())?),
    })
}

fn client(ws: &Workspace, cfg: &PipelineConfig) -> Result<LlmClient> {
    Ok(LlmClient::new(build_backend(&cfg.backend)?)
        .with_cache(ContentCache::open(ws.cache_dir())?)
        .with_retry(cfg.summarize.retry)
        .with_parallelism(cfg.summarize.parallelism))
}

/// Inputs of `stage` under the current configuration.
pub fn plan(ws: &Workspace, cfg: &PipelineConfig, stage: Stage) -> Result<StageInputs> {
    let (config, upstream, files) = match stage {
        Stage::Ingest => (serde_json::to_value(&cfg.ingest)?, vec![], ingest_files(ws, cfg)?),
        Stage::Summarize => (
            json!({ "backend": cfg.backend, "template": cfg.summarize.template }),
            vec![Stage::Ingest],
            BTreeMap::new(),
        ),
        Stage::Embed => (json!({ "backend": cfg.backend }), vec![Stage::Summarize], BTreeMap::new()),
        Stage::Reduce => (json!({ "tsne": cfg.tsne }), vec![Stage::Embed], BTreeMap::new()),
        Stage::Purity => {
            let source = match cfg.purity.space {
                Space::Projection => Stage::Reduce,
                Space::Embedding => Stage::Embed,
            };
            (json!({ "purity": cfg.purity }), vec![Stage::Ingest, source], BTreeMap::new())
        }
        Stage::Sae => match cfg.sae.training_rows {
            TrainingRows::Documents => (json!({ "sae": cfg.sae }), vec![Stage::Embed], BTreeMap::new()),
            TrainingRows::DocumentsAndWindows => (
                json!({ "sae": cfg.sae, "backend": cfg.backend }),
                vec![Stage::Summarize, Stage::Embed],
                BTreeMap::new(),
            ),
        },
        Stage::Analyze => (
            json!({ "analyze": cfg.analyze, "backend": cfg.backend }),
            vec![Stage::Ingest, Stage::Summarize, Stage::Reduce, Stage::Sae],
            BTreeMap::new(),
        ),
    };
    Ok(StageInputs {
        stage,
        config,
        upstream,
        files,
    })
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn ingest_files(ws: &Workspace, cfg: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let c = &cfg.ingest;
    let mut files = BTreeMap::new();
    files.insert(c.sources.display().to_string(), hash_file(&ws.resolve(&c.sources))?);
    if let Some(p) = &c.properties {
        files.insert(p.display().to_string(), hash_file(&ws.resolve(p))?);
    }
    let dir = ws.resolve(&c.contexts);
    let entries = fs::read_dir(&dir)
        .map_err(|e| CliError::user(format!("cannot read contexts directory {}: {e}", dir.display())))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    for name in names {
        files.insert(format!("{}/{name}", c.contexts.display()), hash_file(&dir.join(&name))?);
    }
    Ok(files)
}

fn run_stage(
    ws: &Workspace,
    cfg: &PipelineConfig,
    stage: Stage,
    force: bool,
    body: impl FnOnce(&Path) -> Result<ClientStats>,
) -> Result<StageOutcome> {
    let inputs = plan(ws, cfg, stage)?;
    let planner = |s: Stage| plan(ws, cfg, s);
    for &u in &inputs.upstream {
        if force {
            ws.manifest(u)?.ok_or(CliError::MissingDependency { stage: u.command() })?;
        } else {
            ws.check_fresh(u, &planner)?;
        }
    }
    let digest = ws.inputs_digest(&inputs)?;
    if !force && ws.up_to_date(stage, &digest)? {
        return Ok(StageOutcome {
            stage,
            ran: false,
            stats: ClientStats::default(),
        });
    }
    let tmp = ws.begin(stage)?;
    let stats = match body(&tmp) {
        Ok(s) => s,
        Err(e) => {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
    };
    ws.commit(&inputs, &digest, &tmp)?;
    Ok(StageOutcome { stage, ran: true, stats })
}

// Readers for stage outputs.

pub fn read_records(ws: &Workspace) -> Result<Vec<SourceRecord>> {
    let opts = ValidationOptions {
        enforce_hardness_range: false,
    };
    let outcome =
        load_sources(&ws.stage_file(Stage::Ingest, "corpus.jsonl"), SourceFormat::Jsonl, &opts).map_err(ctx("corpus"))?;
    if let Some(d) = outcome.rejected.first() {
        return Err(CliError::user(format!("ingested corpus is corrupt: {d}")));
    }
    Ok(outcome.records)
}

pub fn read_summaries(ws: &Workspace) -> Result<Vec<SummaryDoc>> {
    let text = fs::read_to_string(ws.stage_file(Stage::Summarize, "summaries.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

pub fn read_embeddings(ws: &Workspace) -> Result<EmbeddingMatrix> {
    read_json(&ws.stage_file(Stage::Embed, "embeddings.json"))
}

pub fn read_projection(ws: &Workspace) -> Result<ProjectionResult> {
    let sidecar: ProjectionSidecar = read_json(&ws.stage_file(Stage::Reduce, "projection.json"))?;
    let file = File::open(ws.stage_file(Stage::Reduce, "projection.csv"))?;
    Ok(ProjectionResult::read_csv(BufReader::new(file), sidecar)?)
}

pub fn read_purity(ws: &Workspace) -> Result<Vec<PurityReport>> {
    read_json(&ws.stage_file(Stage::Purity, "purity.json"))
}

// Commands.

pub fn cmd_ingest(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Ingest, force, |out| {
        let c = &cfg.ingest;
        let opts = ValidationOptions {
            enforce_hardness_range: c.enforce_hardness_range,
        };
        let loaded = load_sources(&ws.resolve(&c.sources), c.format, &opts).map_err(ctx("loading sources"))?;
        let mut records = loaded.records;
        let mut rejected = loaded.rejected;
        if let Some(p) = &c.properties {
            let (table, diags) = load_properties_csv(&ws.resolve(p), &opts).map_err(ctx("loading properties"))?;
            rejected.extend(diags);
            merge_properties(&mut records, &table).map_err(ctx("merging properties"))?;
        }
        let dir = ws.resolve(&c.contexts);
        let mut contexts = BTreeMap::new();
        let mut kept = Vec::with_capacity(records.len());
        for r in records {
            let name = format!("{}.txt", r.source_id);
            let text = if r.source_id.contains(['/', '\\']) {
                None
            } else {
                fs::read_to_string(dir.join(&name)).ok().filter(|t| !t.trim().is_empty())
            };
            match text {
                Some(t) => {
                    contexts.insert(r.source_id.clone(), t);
                    kept.push(r);
                }
                None => rejected.push(Diagnostic {
                    line: 0,
                    source_id: Some(r.source_id.clone()),
                    message: format!("no context document {}/{name}", c.contexts.display()),
                }),
            }
        }
        if kept.is_empty() {
            return Err(CliError::user("no source survived ingestion"));
        }
        save_sources(&out.join("corpus.jsonl"), &kept).map_err(ctx("writing corpus"))?;
        write_json(&out.join("contexts.json"), &contexts)?;
        write_json(&out.join("rejected.json"), &rejected)?;
        Ok(ClientStats::default())
    })
}

pub fn cmd_summarize(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Summarize, force, |out| {
        let records = read_records(ws)?;
        let contexts: BTreeMap<String, String> = read_json(&ws.stage_file(Stage::Ingest, "contexts.json"))?;
        let items: Vec<(SourceRecord, String)> = records
            .into_iter()
            .map(|r| {
                let ctx = contexts.get(&r.source_id).cloned().unwrap_or_default();
                (r, ctx)
            })
            .collect();
        let client = client(ws, cfg)?;
        let template = PromptTemplate::builtin(cfg.summarize.template);
        let docs = client
            .summarize_many(&items, &template)
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut text = String::new();
        let mut mentions: BTreeMap<String, usize> = BTreeMap::new();
        for d in &docs {
            text.push_str(&serde_json::to_string(d)?);
            text.push('\n');
            *mentions.entry(d.mentioned.to_string()).or_default() += 1;
        }
        for s in [MentionStatus::Yes, MentionStatus::No, MentionStatus::Unknown] {
            mentions.entry(s.to_string()).or_default();
        }
        fs::write(out.join("summaries.jsonl"), text)?;
        write_json(&out.join("mentions.json"), &mentions)?;
        Ok(client.stats())
    })
}

pub fn cmd_embed(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Embed, force, |out| {
        let docs = read_summaries(ws)?;
        let ids: Vec<String> = docs.iter().map(|d| d.source_id.clone()).collect();
        let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
        let client = client(ws, cfg)?;
        let m = client.embed(ids, &texts)?;
        write_json(&out.join("embeddings.json"), &m)?;
        Ok(client.stats())
    })
}

pub fn cmd_reduce(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Reduce, force, |out| {
        let emb = read_embeddings(ws)?;
        let proj = run_tsne(&emb, &cfg.tsne).map_err(ctx("t-SNE"))?;
        proj.write_csv(BufWriter::new(File::create(out.join("projection.csv"))?))?;
        write_json(&out.join("projection.json"), &proj.sidecar())?;
        Ok(ClientStats::default())
    })
}

pub fn purity_markdown(reports: &[PurityReport]) -> String {
    let mut s = String::from("| Property | Space | k | Bins | Sources | Purity |\n|---|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} |",
            r.property_name, r.space, r.k, r.n_bins, r.n_used, r.purity
        );
    }
    s
}

pub fn cmd_purity(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Purity, force, |out| {
        let c = &cfg.purity;
        if c.properties.is_empty() {
            return Err(CliError::user("purity.properties is empty"));
        }
        let records = read_records(ws)?;
        let (row_ids, points) = match c.space {
            Space::Projection => {
                let p = read_projection(ws)?;
                (p.row_ids, p.points)
            }
            Space::Embedding => {
                let e = read_embeddings(ws)?;
                (e.row_ids, e.data)
            }
        };
        let present: std::collections::BTreeSet<&str> = row_ids.iter().map(String::as_str).collect();
        let mut reports = Vec::with_capacity(c.properties.len());
        for &p in &c.properties {
            let values: Vec<(String, f64)> = property_values(&records, p)
                .into_iter()
                .filter(|(id, _)| present.contains(id.as_str()))
                .collect();
            let bins = bin_values(p.name(), &values, c.n_bins, c.strategy.clone()).map_err(ctx("binning"))?;
            reports.push(knn_purity(&row_ids, points.view(), &bins, c.k, c.space).map_err(ctx("purity"))?);
        }
        write_json(&out.join("purity.json"), &reports)?;
        fs::write(out.join("purity.md"), purity_markdown(&reports))?;
        Ok(ClientStats::default())
    })
}

pub fn cmd_sae_train(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Sae, force, |out| {
        let c = &cfg.sae;
        let emb = read_embeddings(ws)?;
        let mut stats = ClientStats::default();
        let training = match c.training_rows {
            TrainingRows::Documents => emb.clone(),
            TrainingRows::DocumentsAndWindows => {
                let summaries: BTreeMap<String, String> =
                    read_summaries(ws)?.into_iter().map(|d| (d.source_id, d.text)).collect();
                let mut ids = emb.row_ids.clone();
                let mut texts = Vec::new();
                for id in &emb.row_ids {
                    let text = summaries
                        .get(id)
                        .ok_or_else(|| CliError::user(format!("no summary for embedding row {id}")))?;
                    for (i, w) in token_windows(text, c.window, c.stride).into_iter().enumerate() {
                        ids.push(format!("{id}#w{i}"));
                        texts.push(w.text);
                    }
                }
                let client = client(ws, cfg)?;
                let mut rows: Vec<Vec<f64>> = emb.data.outer_iter().map(|r| r.to_vec()).collect();
                if !texts.is_empty() {
                    rows.extend(client.embed_texts(&texts)?);
                }
                stats = client.stats();
                EmbeddingMatrix::from_rows(ids, rows, emb.model_id.clone()).map_err(ctx("training rows"))?
            }
        };
        let (model, history) = train(&training, &c.train).map_err(ctx("SAE training"))?;
        model.save(&out.join("model.json")).map_err(ctx("saving model"))?;
        let mut w = csv::Writer::from_path(out.join("history.csv")).map_err(ctx("history"))?;
        for h in &history {
            w.serialize(h).map_err(ctx("history"))?;
        }
        w.flush()?;
        let acts = model.feature_activations(&emb).map_err(ctx("activations"))?;
        acts.write_csv(BufWriter::new(File::create(out.join("activations.csv"))?))?;
        write_json(
            &out.join("training.json"),
            &json!({ "rows": training.rows(), "documents": emb.rows(), "dim": emb.dim(), "features": model.d_hidden() }),
        )?;
        Ok(stats)
    })
}

pub fn cmd_analyze(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<StageOutcome> {
    run_stage(ws, cfg, Stage::Analyze, force, |out| {
        let c = &cfg.analyze;
        if c.clusters.is_empty() {
            return Err(CliError::user("analyze.clusters is empty; add at least one cluster selector"));
        }
        let records = read_records(ws)?;
        let summaries: BTreeMap<String, String> =
            read_summaries(ws)?.into_iter().map(|d| (d.source_id, d.text)).collect();
        let projection = read_projection(ws)?;
        let model = SaeModel::load(&ws.stage_file(Stage::Sae, "model.json")).map_err(ctx("loading model"))?;
        let acts = ActivationMatrix::read_csv(File::open(ws.stage_file(Stage::Sae, "activations.csv"))?)?;
        let selections = c
            .clusters
            .iter()
            .map(|spec| select_cluster(&spec.cluster_id, &projection, &records, &spec.selector))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(ctx("cluster selection"))?;
        // Without a usable backend the contexts degrade to whole-document scoring.
        let client = client(ws, cfg).ok();
        let report = analyze_clusters(&selections, &acts, &summaries, &model, client.as_ref(), c.top_n, &c.contexts)
            .map_err(ctx("analysis"))?;
        verify_snippets(&report, &summaries).map_err(ctx("analysis"))?;
        let payloads = report
            .clusters
            .iter()
            .map(label_payload)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(ctx("label payload"))?;
        write_json(&out.join("selections.json"), &selections)?;
        write_json(&out.join("report.json"), &report)?;
        fs::write(out.join("report.md"), report.to_markdown())?;
        write_json(&out.join("label_payloads.json"), &payloads)?;
        Ok(client.map(|c| c.stats()).unwrap_or_default())
    })
}

pub fn cmd_run_all(ws: &Workspace, cfg: &PipelineConfig, force: bool) -> Result<Vec<StageOutcome>> {
    let commands: [fn(&Workspace, &PipelineConfig, bool) -> Result<StageOutcome>; 7] =
        [cmd_ingest, cmd_summarize, cmd_embed, cmd_reduce, cmd_purity, cmd_sae_train, cmd_analyze];
    commands.iter().map(|f| f(ws, cfg, force)).collect()
}

/// Before/after purity table from two workspaces' purity outputs.
pub fn compare(before: (&str, &[PurityReport]), after: (&str, &[PurityReport])) -> Result<ComparisonReport> {
    ComparisonReport::build(before.0, before.1, after.0, after.1).map_err(ctx("comparison"))
}

