//! Run manifest: seeds, input hashes, per-stage counts, artifact hashes.
//!
//! Two runs over identical inputs and config produce manifests that differ
//! only in `timestamp`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use unifeed_core::evaluate::EvalReport;
use unifeed_core::unify::Source;
use unifeed_core::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub timestamp: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub stages: StageCounts,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageCounts {
    pub ingest: IngestCounts,
    pub unify: UnifyCounts,
    pub select: SelectCounts,
    pub emit: EmitCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeCounts>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestCounts {
    pub multilabel_records: usize,
    pub choice_records: usize,
    pub prompt_groups: usize,
    pub unknown_keys: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct UnifyCounts {
    pub pairs: usize,
    pub per_source: BTreeMap<Source, usize>,
    pub duplicates_removed: usize,
    pub discarded_single_response: usize,
    pub degenerate_pairs_dropped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SelectCounts {
    pub quality_selected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity_selected: Option<usize>,
    pub selected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_cluster: Option<Vec<usize>>,
    /// Source mix of the full corpus inside each cluster, for auditing that
    /// clustering did not simply separate the input datasets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_source_composition: Option<Vec<BTreeMap<Source, usize>>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EmitCounts {
    pub sft: usize,
    pub preference: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeCounts {
    pub pairs: usize,
    pub training_accuracy: f64,
    pub final_loss: f64,
}

/// `sha256:<hex>` of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            config_hash,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            stages: StageCounts::default(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn record_artifact(&mut self, name: &str, path: &Path) -> Result<()> {
        self.artifacts
            .insert(name.to_owned(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)
            .map_err(|e| Error::data(format!("serializing manifest: {e}")))?;
        use std::io::Write as _;
        writeln!(writer).map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}
