//! Corpus construction: synthetic sentiment text, shortcut injection,
//! bias-controlled corpora, memorization blocks and a TSV loader.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod bias;
pub mod memo;
pub mod shortcut;
pub mod text;
pub mod tsv;

pub use bias::{make_bias_corpus, BiasCorpusSpec};
pub use memo::{make_mem_corpora, MemCorpusBundle, MemCorpusSpec};
pub use shortcut::{
    inject_shortcut_mix, inject_shortcuts, placement_of, shortcut_label, split_heldout,
    InjectOptions, MixedShortcutBundle, ShortcutBundle, ShortcutKind, SpecialTokens,
};
pub use text::TextSpec;
pub use tsv::{load_tsv, TsvSchema, Vocabulary};

pub type TokenId = u32;

/// Token id reserved for the mask symbol of masked language models.
/// Generated corpora never use it.
pub const MASK_TOKEN: TokenId = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Vec<TokenId>,
    pub label: usize,
    #[serde(default)]
    pub attributes: BTreeMap<String, u8>,
}

impl LabeledExample {
    pub fn new(tokens: Vec<TokenId>, label: usize) -> Self {
        Self {
            tokens,
            label,
            attributes: BTreeMap::new(),
        }
    }

    pub fn attribute(&self, name: &str) -> Option<u8> {
        self.attributes.get(name).copied()
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}
