//! Run artifacts: trained bundles with their configuration and history.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::TradeoffPoint;
use crate::models::{BundleRecord, ModelBundle};
use crate::training::{EpochMetrics, TrainConfig, TrainReport};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArtifact {
    pub code_version: String,
    pub config: TrainConfig,
    pub history: Vec<EpochMetrics>,
    pub finetune_history: Vec<EpochMetrics>,
    pub evaluation: Option<TradeoffPoint>,
    pub bundle: BundleRecord,
}

impl RunArtifact {
    pub fn new(report: &TrainReport, evaluation: Option<TradeoffPoint>) -> Self {
        RunArtifact {
            code_version: CODE_VERSION.to_string(),
            config: report.config.clone(),
            history: report.history.clone(),
            finetune_history: report.finetune_history.clone(),
            evaluation,
            bundle: report.bundle.to_record(),
        }
    }

    pub fn bundle(&self) -> Result<ModelBundle> {
        ModelBundle::from_record(&self.bundle)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("artifact serializes")
    }

    /// Parses and validates an artifact; any defect is an artifact error.
    pub fn from_json(text: &str) -> Result<Self> {
        let artifact: RunArtifact =
            serde_json::from_str(text).map_err(|e| Error::Artifact(format!("malformed artifact: {e}")))?;
        artifact.bundle()?;
        if artifact.history.len() != artifact.config.epochs {
            return Err(Error::Artifact(format!(
                "history has {} epochs, config says {}",
                artifact.history.len(),
                artifact.config.epochs
            )));
        }
        Ok(artifact)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Per-epoch metrics as CSV text.
pub fn history_csv(history: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in history {
        w.serialize(m).map_err(|e| Error::Artifact(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Artifact(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Writes `contents` to `path` through a sibling temporary file and a rename,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}
