//! Evaluation reports as deterministic JSON.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;

/// One evaluation run: macro aggregates plus per-item (per-tag, per-query)
/// metrics, pinned to the config and checkpoint that produced them. Field
/// and key order are fixed, so identical runs serialize identically.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub config_digest: String,
    pub checkpoint_digest: String,
    pub macros: BTreeMap<String, f64>,
    pub per_item: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(task: &str, config_digest: u32, checkpoint_digest: u32) -> Self {
        EvalReport {
            task: task.to_string(),
            config_digest: format!("{config_digest:08x}"),
            checkpoint_digest: format!("{checkpoint_digest:08x}"),
            macros: BTreeMap::new(),
            per_item: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
