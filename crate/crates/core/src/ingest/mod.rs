//! Stack Exchange dump ingestion and local code-corpus loading.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codeprep::CodeSnippet;
use crate::error::{Error, Result};

pub mod corpus;
pub mod dump;
pub mod html;

pub use corpus::{load_code_corpus, CodeCorpus};
pub use dump::{
    parse_postlinks, parse_posts, parse_tags, DuplicateEdge, LinkStats, PostReader, PostStats,
};
pub use html::extract_code_blocks;

/// An ingested question: title, prose body, code snippets and tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub title: String,
    #[serde(rename = "body")]
    pub body_text: String,
    #[serde(rename = "code")]
    pub code_snippets: Vec<CodeSnippet>,
    pub tags: BTreeSet<String>,
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}
