//! Corpus file format: UTF-8 JSONL, one recording per line.

use std::path::Path;

use crate::corpus::types::{Corpus, Recording};
use crate::error::{Error, Result};

/// Parse a JSONL corpus. Schema violations report their line number;
/// duplicate ids are an integrity error. Audio files are not touched here;
/// they are resolved lazily on first use.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let content = std::fs::read_to_string(path)?;
    let mut recordings = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Recording = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        recordings.push(rec);
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(Corpus::new(recordings)?.with_base_dir(base))
}

/// Write a corpus as JSONL. Field order is fixed by the struct, so output
/// is byte-deterministic for a given corpus.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for rec in corpus.recordings() {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
