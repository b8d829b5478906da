//! Overlapping corpora of random token blocks for memorization studies.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::TokenId;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemCorpusSpec {
    pub n_models: usize,
    pub per_model: usize,
    pub shared: usize,
    pub block_len: usize,
    /// Number of held-out validation blocks.
    pub validation: usize,
    /// Half-open id range tokens are drawn from.
    pub token_range: (TokenId, TokenId),
}

impl MemCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 || self.per_model == 0 || self.block_len == 0 {
            return Err(Error::InvalidConfig("memorization corpus counts must be positive".into()));
        }
        if self.shared >= self.per_model {
            return Err(Error::InvalidConfig(format!(
                "shared ({}) must be smaller than per_model ({})",
                self.shared, self.per_model
            )));
        }
        if self.token_range.0 >= self.token_range.1 {
            return Err(Error::InvalidConfig("empty token range".into()));
        }
        Ok(())
    }

    /// Total number of distinct blocks the bundle needs.
    pub fn distinct_needed(&self) -> usize {
        self.shared + self.n_models * (self.per_model - self.shared) + self.validation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemCorpusBundle {
    /// Training corpus of each model: the shared blocks followed by its own.
    pub corpora: Vec<Vec<Vec<TokenId>>>,
    pub shared: Vec<Vec<TokenId>>,
    /// Blocks that belong to exactly one model, per model.
    pub unshared: Vec<Vec<Vec<TokenId>>>,
    pub block_len: usize,
    pub validation: Vec<Vec<TokenId>>,
}

/// Draws distinct uniform random blocks and distributes them: `shared`
/// blocks go to every corpus, each corpus gets its own remaining blocks,
/// and validation blocks are disjoint from all of them.
pub fn make_mem_corpora(spec: &MemCorpusSpec, rng: &mut Rng) -> Result<MemCorpusBundle> {
    spec.validate()?;
    let needed = spec.distinct_needed();
    let width = (spec.token_range.1 - spec.token_range.0) as u128;
    let possible = u32::try_from(spec.block_len)
        .ok()
        .and_then(|l| width.checked_pow(l))
        .unwrap_or(u128::MAX);
    // keep rejection sampling cheap
    if possible < 2 * needed as u128 {
        return Err(Error::CorpusTooSmall(format!(
            "{needed} distinct blocks requested but only {possible} exist"
        )));
    }
    let mut seen = HashSet::with_capacity(needed);
    let mut blocks = Vec::with_capacity(needed);
    while blocks.len() < needed {
        let b: Vec<TokenId> = (0..spec.block_len)
            .map(|_| spec.token_range.0 + rng.below(width as usize) as TokenId)
            .collect();
        if seen.insert(b.clone()) {
            blocks.push(b);
        }
    }
    let mut it = blocks.into_iter();
    let shared: Vec<_> = it.by_ref().take(spec.shared).collect();
    let unshared: Vec<Vec<_>> = (0..spec.n_models)
        .map(|_| it.by_ref().take(spec.per_model - spec.shared).collect())
        .collect();
    let validation: Vec<_> = it.collect();
    let corpora = unshared
        .iter()
        .map(|own| shared.iter().chain(own).cloned().collect())
        .collect();
    Ok(MemCorpusBundle {
        corpora,
        shared,
        unshared,
        block_len: spec.block_len,
        validation,
    })
}
