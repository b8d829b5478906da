//! Loader for tab-separated sentence/label files with a header row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabeledExample, TokenId, MASK_TOKEN};
use crate::error::{Error, Result};

/// Column roles of a TSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsvSchema {
    pub text: String,
    pub label: String,
    /// Binary (0/1) attribute columns.
    #[serde(default)]
    pub attributes: Vec<String>,
    /// Label names in index order. Empty means labels are written as
    /// non-negative integers.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl TsvSchema {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
            attributes: Vec::new(),
            labels: Vec::new(),
        }
    }
}

/// Whitespace-token vocabulary built from a corpus. Ids start after the
/// mask token and follow first occurrence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    pub ids: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub fn id_or_insert(&mut self, token: &str) -> TokenId {
        let next = MASK_TOKEN + 1 + self.ids.len() as TokenId;
        *self.ids.entry(token.to_string()).or_insert(next)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Model vocabulary size covering every id plus the mask token.
    pub fn vocab_size(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        message: message.into(),
    }
}

/// Reads `path` and maps its text column to token ids through a vocabulary
/// built on the fly. Errors name the offending line (the header is line 1).
pub fn load_tsv(path: impl AsRef<Path>, schema: &TsvSchema) -> Result<(Vec<LabeledExample>, Vocabulary)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_path(path)?;
    let mut vocab = Vocabulary::default();
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok((Vec::new(), vocab));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column `{name}`")))
    };
    let text_col = column(&schema.text)?;
    let label_col = column(&schema.label)?;
    let attr_cols = schema
        .attributes
        .iter()
        .map(|a| column(a).map(|c| (a.clone(), c)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let field = |c: usize, name: &str| {
            record
                .get(c)
                .ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))
        };
        let raw_label = field(label_col, &schema.label)?.trim();
        let label = if schema.labels.is_empty() {
            raw_label
                .parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("unknown label `{raw_label}`")))?
        } else {
            schema
                .labels
                .iter()
                .position(|l| l == raw_label)
                .ok_or_else(|| parse_err(path, line, format!("unknown label `{raw_label}`")))?
        };
        let tokens = field(text_col, &schema.text)?
            .split_whitespace()
            .map(|t| vocab.id_or_insert(t))
            .collect();
        let mut ex = LabeledExample::new(tokens, label);
        for (name, c) in &attr_cols {
            let v = match field(*c, name)?.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(path, line, format!("attribute `{name}` is `{other}`, expected 0 or 1"))),
            };
            ex.attributes.insert(name.clone(), v);
        }
        out.push(ex);
    }
    Ok((out, vocab))
}
