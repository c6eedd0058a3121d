//! The `astrolens` command line: a staged, resumable pipeline over a
//! workspace directory.
//!
//! Every stage reads its inputs from upstream stage directories, checks
//! that they are present and current, and writes its outputs together with
//! the effective configuration and a digest of everything it consumed.
//! Exit codes: 0 success, 1 user error, 2 missing or stale dependency,
//! 3 backend failure.

pub mod config;
pub mod error;
pub mod fixture;
pub mod stages;
pub mod workspace;

use std::path::{Path, PathBuf};

use astrolens::analysis::ClusterSpec;
use astrolens::corpus::{Property, SourceFormat};
use astrolens::llmclient::TemplateId;
use astrolens::purity::{PurityReport, Space};
use astrolens::synth::FixtureSpec;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{PipelineConfig, TrainingRows};
use crate::error::{CliError, Result};
use crate::stages::StageOutcome;
use crate::workspace::{read_json, write_json, Workspace, PIPELINE_FILE};

#[derive(Debug, Parser)]
#[command(name = "astrolens", version, about = "Embedding vs. physical-property analysis pipeline")]
pub struct Cli {
    /// Workspace directory.
    #[arg(short, long, global = true, default_value = ".")]
    pub workspace: PathBuf,
    /// Rerun even if up to date, and accept stale upstream outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TemplateArg {
    Original,
    Updated,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SpaceArg {
    Embedding,
    Projection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RowsArg {
    Documents,
    DocumentsAndWindows,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a default pipeline.json (HTTP backend).
    Init,
    /// Write the 60-source synthetic catalog and its mock-backend config.
    Fixture {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Validate sources and attach one context document per source.
    Ingest {
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Properties CSV merged over the source records.
        #[arg(long)]
        properties: Option<PathBuf>,
        /// Directory of `<source_id>.txt` files.
        #[arg(long)]
        contexts: Option<PathBuf>,
    },
    /// Summarize every source with the chosen prompt template.
    Summarize {
        #[arg(long, value_enum)]
        template: Option<TemplateArg>,
    },
    /// Embed the summaries.
    Embed,
    /// Project the embeddings with t-SNE.
    Reduce {
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// kNN purity of the configured properties.
    Purity {
        #[arg(long, value_enum)]
        space: Option<SpaceArg>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        n_bins: Option<usize>,
        /// Repeatable; replaces the configured property list.
        #[arg(long = "property")]
        properties: Vec<String>,
    },
    /// Compare purity between two workspaces (e.g. original vs. updated prompt).
    Compare {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Output directory for comparison.md and comparison.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the sparse autoencoder.
    SaeTrain {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        l1: Option<f64>,
        #[arg(long)]
        expansion: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        training_rows: Option<RowsArg>,
    },
    /// Rank features per cluster and collect their top contexts.
    Analyze {
        /// JSON file with a list of `{cluster_id, selector}` objects.
        #[arg(long)]
        clusters: Option<PathBuf>,
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Run every stage in order, skipping those already up to date.
    RunAll,
}

fn report(outcome: &StageOutcome) {
    let s = outcome.stats;
    if outcome.ran {
        eprintln!(
            "{}: done (chat requests {}, embed requests {}, cache hits {})",
            outcome.stage.command(),
            s.chat_requests,
            s.embed_requests,
            s.cache_hits
        );
    } else {
        eprintln!("{}: up to date", outcome.stage.command());
    }
}

/// Apply command-line overrides and persist them so later freshness checks
/// see the same configuration.
fn with_overrides(ws: &Workspace, edit: impl FnOnce(&mut PipelineConfig) -> Result<bool>) -> Result<PipelineConfig> {
    let mut cfg = ws.load_config()?;
    if edit(&mut cfg)? {
        ws.save_config(&cfg)?;
    }
    Ok(cfg)
}

fn set<T: PartialEq>(slot: &mut T, value: Option<T>, changed: &mut bool) {
    if let Some(v) = value {
        if *slot != v {
            *slot = v;
            *changed = true;
        }
    }
}

fn label(dir: &Path, template: TemplateId, other: TemplateId) -> String {
    if template != other {
        template.to_string()
    } else {
        dir.display().to_string()
    }
}

fn compare(before: &Path, after: &Path, out: &Path) -> Result<()> {
    let load = |dir: &Path| -> Result<(PipelineConfig, Vec<PurityReport>)> {
        let cfg: PipelineConfig = read_json(&dir.join(PIPELINE_FILE))?;
        let path = dir.join("purity/purity.json");
        if !path.is_file() {
            return Err(CliError::MissingDependency { stage: "cmd_purity" });
        }
        Ok((cfg, read_json(&path)?))
    };
    let (bc, br) = load(before)?;
    let (ac, ar) = load(after)?;
    let (bt, at) = (bc.summarize.template, ac.summarize.template);
    let cmp = stages::compare((&label(before, bt, at), &br), (&label(after, at, bt), &ar))?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("comparison.json"), &cmp)?;
    std::fs::write(out.join("comparison.md"), cmp.to_markdown())?;
    print!("{}", cmp.to_markdown());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    if let Command::Compare { before, after, out } = &cli.command {
        return compare(before, after, out);
    }
    let ws = Workspace::open(&cli.workspace)?;
    match cli.command {
        Command::Compare { .. } => unreachable!("handled above"),
        Command::Init => {
            if ws.has_config() && !force {
                return Err(CliError::user("pipeline.json already exists (pass --force to overwrite)"));
            }
            ws.save_config(&PipelineConfig::default())?;
        }
        Command::Fixture { seed } => {
            if ws.has_config() && !force {
                return Err(CliError::user("pipeline.json already exists (pass --force to overwrite)"));
            }
            fixture::write_fixture(ws.root(), &FixtureSpec { seed, ..FixtureSpec::default() })?;
        }
        Command::Ingest {
            sources,
            format,
            properties,
            contexts,
        } => {
            let cfg = with_overrides(&ws, |c| {
                let mut changed = false;
                let format = format.map(|f| match f {
                    FormatArg::Jsonl => SourceFormat::Jsonl,
                    FormatArg::Csv => SourceFormat::Csv,
                });
                set(&mut c.ingest.sources, sources, &mut changed);
                set(&mut c.ingest.format, format, &mut changed);
                set(&mut c.ingest.properties, properties.map(Some), &mut changed);
                set(&mut c.ingest.contexts, contexts, &mut changed);
                Ok(changed)
            })?;
            report(&stages::cmd_ingest(&ws, &cfg, force)?);
        }
        Command::Summarize { template } => {
            let cfg = with_overrides(&ws, |c| {
                let mut changed = false;
                let t = template.map(|t| match t {
                    TemplateArg::Original => TemplateId::Original,
                    TemplateArg::Updated => TemplateId::Updated,
                });
                set(&mut c.summarize.template, t, &mut changed);
                Ok(changed)
            })?;
            report(&stages::cmd_summarize(&ws, &cfg, force)?);
        }
        Command::Embed => report(&stages::cmd_embed(&ws, &ws.load_config()?, force)?),
        Command::Reduce { perplexity, seed } => {
            let cfg = with_overrides(&ws, |c| {
                let mut changed = false;
                set(&mut c.tsne.perplexity, perplexity, &mut changed);
                set(&mut c.tsne.seed, seed, &mut changed);
                Ok(changed)
            })?;
            report(&stages::cmd_reduce(&ws, &cfg, force)?);
        }
        Command::Purity {
            space,
            k,
            n_bins,
            properties,
        } => {
            let props = properties
                .iter()
                .map(|p| p.parse::<Property>().map_err(CliError::user))
                .collect::<Result<Vec<_>>>()?;
            let cfg = with_overrides(&ws, |c| {
                let mut changed = false;
                let space = space.map(|s| match s {
                    SpaceArg::Embedding => Space::Embedding,
                    SpaceArg::Projection => Space::Projection,
                });
                set(&mut c.purity.space, space, &mut changed);
                set(&mut c.purity.k, k, &mut changed);
                set(&mut c.purity.n_bins, n_bins, &mut changed);
                set(&mut c.purity.properties, (!props.is_empty()).then_some(props), &mut changed);
                Ok(changed)
            })?;
            let outcome = stages::cmd_purity(&ws, &cfg, force)?;
            report(&outcome);
            print!("{}", stages::purity_markdown(&stages::read_purity(&ws)?));
        }
        Command::SaeTrain {
            steps,
            l1,
            expansion,
            seed,
            training_rows,
        } => {
            let cfg = with_overrides(&ws, |c| {
                let mut changed = false;
                let rows = training_rows.map(|r| match r {
                    RowsArg::Documents => TrainingRows::Documents,
                    RowsArg::DocumentsAndWindows => TrainingRows::DocumentsAndWindows,
                });
                set(&mut c.sae.train.steps, steps, &mut changed);
                set(&mut c.sae.train.l1_coefficient, l1, &mut changed);
                set(&mut c.sae.train.expansion, expansion, &mut changed);
                set(&mut c.sae.train.seed, seed, &mut changed);
                set(&mut c.sae.training_rows, rows, &mut changed);
                Ok(changed)
            })?;
            report(&stages::cmd_sae_train(&ws, &cfg, force)?);
        }
        Command::Analyze { clusters, top_n } => {
            let specs: Option<Vec<ClusterSpec>> = clusters.as_deref().map(read_json).transpose()?;
            let cfg = with_overrides(&ws, |c| {
                let mut changed = false;
                set(&mut c.analyze.clusters, specs, &mut changed);
                set(&mut c.analyze.top_n, top_n, &mut changed);
                Ok(changed)
            })?;
            report(&stages::cmd_analyze(&ws, &cfg, force)?);
        }
        Command::RunAll => {
            let cfg = ws.load_config()?;
            for f in [
                stages::cmd_ingest,
                stages::cmd_summarize,
                stages::cmd_embed,
                stages::cmd_reduce,
                stages::cmd_purity,
                stages::cmd_sae_train,
                stages::cmd_analyze,
            ] {
                report(&f(&ws, &cfg, force)?);
            }
        }
    }
    Ok(())
}
