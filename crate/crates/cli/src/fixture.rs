//! Writes the synthetic catalog as ordinary pipeline inputs.

use std::fs;
use std::path::Path;

use astrolens::corpus::save_sources;
use astrolens::synth::FixtureSpec;

use crate::config::PipelineConfig;
use crate::error::{ctx, Result};
use crate::workspace::write_json;

/// `inputs/sources.jsonl`, `inputs/contexts/<id>.txt` and `pipeline.json`
/// under `dir`.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<PipelineConfig> {
    let fx = spec.generate();
    let contexts = dir.join("inputs/contexts");
    fs::create_dir_all(&contexts)?;
    save_sources(&dir.join("inputs/sources.jsonl"), &fx.records()).map_err(ctx("writing sources"))?;
    for s in &fx.sources {
        fs::write(contexts.join(format!("{}.txt", s.record.source_id)), format!("{}\n", s.context))?;
    }
    let config = PipelineConfig::fixture(spec);
    write_json(&dir.join(crate::workspace::PIPELINE_FILE), &config)?;
    Ok(config)
}
