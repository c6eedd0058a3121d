//! Workspace layout and stage bookkeeping.
//!
//! ```text
//! <root>/pipeline.json        effective PipelineConfig
//! <root>/.lock                advisory lock held by the running command
//! <root>/cache/               content-addressed backend responses
//! <root>/<stage>/config.json  stage config as run
//! <root>/<stage>/inputs.digest
//! <root>/<stage>/manifest.json  inputs digest plus SHA-256 of every output
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use astrolens::digest::{sha256_hex, ContentDigest};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

pub const PIPELINE_FILE: &str = "pipeline.json";
const LOCK_FILE: &str = ".lock";
const MANIFEST: &str = "manifest.json";
const CONFIG: &str = "config.json";
const INPUTS_DIGEST: &str = "inputs.digest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Summarize,
    Embed,
    Reduce,
    Purity,
    Sae,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Summarize,
        Stage::Embed,
        Stage::Reduce,
        Stage::Purity,
        Stage::Sae,
        Stage::Analyze,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Summarize => "summarize",
            Stage::Embed => "embed",
            Stage::Reduce => "reduce",
            Stage::Purity => "purity",
            Stage::Sae => "sae",
            Stage::Analyze => "analyze",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Ingest => "cmd_ingest",
            Stage::Summarize => "cmd_summarize",
            Stage::Embed => "cmd_embed",
            Stage::Reduce => "cmd_reduce",
            Stage::Purity => "cmd_purity",
            Stage::Sae => "cmd_sae_train",
            Stage::Analyze => "cmd_analyze",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub inputs_digest: String,
    /// File name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    /// What downstream stages fold into their own inputs digest.
    pub fn outputs_digest(&self) -> String {
        let mut d = ContentDigest::new("astrolens-outputs/v1");
        for (name, hash) in &self.outputs {
            d.str(name).str(hash);
        }
        d.finish()
    }
}

/// Everything a stage run depends on.
#[derive(Debug, Clone)]
pub struct StageInputs {
    pub stage: Stage,
    /// Stage config as written to `config.json`.
    pub config: serde_json::Value,
    pub upstream: Vec<Stage>,
    /// External files (path as configured, SHA-256).
    pub files: BTreeMap<String, String>,
}

pub struct Workspace {
    root: PathBuf,
    _lock: File,
}

impl Workspace {
    /// Open (creating if needed) and lock the workspace at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)
            .map_err(|e| CliError::user(format!("cannot create workspace {}: {e}", root.display())))?;
        let lock = File::create(root.join(LOCK_FILE))?;
        lock.try_lock().map_err(|_| {
            CliError::user(format!("workspace {} is in use by another command", root.display()))
        })?;
        Ok(Self { root, _lock: lock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir_name())
    }

    pub fn stage_file(&self, stage: Stage, name: &str) -> PathBuf {
        self.stage_dir(stage).join(name)
    }

    pub fn has_config(&self) -> bool {
        self.root.join(PIPELINE_FILE).is_file()
    }

    pub fn load_config(&self) -> Result<PipelineConfig> {
        let path = self.root.join(PIPELINE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            CliError::user(format!("cannot read {}: {e} (run `astrolens init` or `astrolens fixture`)", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
    }

    pub fn save_config(&self, config: &PipelineConfig) -> Result<()> {
        write_json(&self.root.join(PIPELINE_FILE), config)
    }

    pub fn manifest(&self, stage: Stage) -> Result<Option<Manifest>> {
        let path = self.stage_file(stage, MANIFEST);
        if !path.is_file() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
    }

    /// First output whose bytes no longer match the manifest.
    fn modified_output(&self, stage: Stage, m: &Manifest) -> Result<Option<String>> {
        for (name, hash) in &m.outputs {
            let path = self.stage_file(stage, name);
            match fs::read(&path) {
                Ok(bytes) if sha256_hex(&bytes) == *hash => {}
                _ => return Ok(Some(name.clone())),
            }
        }
        Ok(None)
    }

    pub fn inputs_digest(&self, inputs: &StageInputs) -> Result<String> {
        let mut d = ContentDigest::new("astrolens-stage/v1");
        d.str(inputs.stage.dir_name());
        d.str(&serde_json::to_string(&inputs.config)?);
        for (path, hash) in &inputs.files {
            d.str(path).str(hash);
        }
        for &u in &inputs.upstream {
            let m = self
                .manifest(u)?
                .ok_or(CliError::MissingDependency { stage: u.command() })?;
            d.str(u.dir_name()).str(&m.outputs_digest());
        }
        Ok(d.finish())
    }

    /// Check that `stage` has run and that neither its outputs nor anything
    /// it was computed from changed since. `plan` recomputes a stage's
    /// inputs from the current configuration.
    pub fn check_fresh(&self, stage: Stage, plan: &dyn Fn(Stage) -> Result<StageInputs>) -> Result<()> {
        let m = self
            .manifest(stage)?
            .ok_or(CliError::MissingDependency { stage: stage.command() })?;
        if let Some(name) = self.modified_output(stage, &m)? {
            return Err(CliError::Stale {
                stage: stage.command(),
                reason: format!("output {name} was modified"),
            });
        }
        let inputs = plan(stage)?;
        for &u in &inputs.upstream {
            self.check_fresh(u, plan)?;
        }
        if self.inputs_digest(&inputs)? != m.inputs_digest {
            return Err(CliError::Stale {
                stage: stage.command(),
                reason: "its inputs or configuration changed since it ran".into(),
            });
        }
        Ok(())
    }

    /// Whether `stage` already holds outputs for exactly `digest`.
    pub fn up_to_date(&self, stage: Stage, digest: &str) -> Result<bool> {
        Ok(match self.manifest(stage)? {
            Some(m) => m.inputs_digest == digest && self.modified_output(stage, &m)?.is_none(),
            None => false,
        })
    }

    /// Fresh scratch directory for a stage run.
    pub fn begin(&self, stage: Stage) -> Result<PathBuf> {
        let tmp = self.root.join(format!(".{}.tmp", stage.dir_name()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(tmp)
    }

    /// Record bookkeeping for the files in `tmp` and move it into place.
    pub fn commit(&self, inputs: &StageInputs, digest: &str, tmp: &Path) -> Result<Manifest> {
        let mut names: Vec<String> = Vec::new();
        for entry in fs::read_dir(tmp)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        let mut outputs = BTreeMap::new();
        for name in names {
            outputs.insert(name.clone(), sha256_hex(&fs::read(tmp.join(&name))?));
        }
        write_json(&tmp.join(CONFIG), &inputs.config)?;
        fs::write(tmp.join(INPUTS_DIGEST), format!("{digest}\n"))?;
        let manifest = Manifest {
            stage: inputs.stage.dir_name().to_string(),
            inputs_digest: digest.to_string(),
            outputs,
        };
        write_json(&tmp.join(MANIFEST), &manifest)?;
        let dir = self.stage_dir(inputs.stage);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(tmp, &dir)?;
        Ok(manifest)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::user(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}
