//! Synthetic sentiment text and the shared vocabulary layout.
//!
//! Ids are laid out as: the reserved mask token, the positive family, the
//! negative family, noise tokens, two marker tokens per demographic
//! attribute, and finally the three shortcut special tokens. Special tokens
//! never occur in generated text.

use serde::{Deserialize, Serialize};

use super::shortcut::SpecialTokens;
use super::{LabeledExample, TokenId, MASK_TOKEN};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextSpec {
    /// Tokens per sentiment family.
    pub family_size: usize,
    pub noise_size: usize,
    /// Per-token probability of drawing from the label's own family.
    pub own_rate: f64,
    /// Per-token probability of drawing from the opposite family.
    pub cross_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Demographic attributes that get marker tokens.
    pub attributes: Vec<String>,
}

impl Default for TextSpec {
    fn default() -> Self {
        Self {
            family_size: 16,
            noise_size: 64,
            own_rate: 0.35,
            cross_rate: 0.05,
            min_len: 8,
            max_len: 24,
            attributes: vec!["gender".into(), "age".into()],
        }
    }
}

impl TextSpec {
    fn first_text(&self) -> TokenId {
        MASK_TOKEN + 1
    }

    /// First id of the label family (`1` = positive, `0` = negative).
    fn family_start(&self, label: usize) -> TokenId {
        let f = self.family_size as TokenId;
        if label == 1 {
            self.first_text()
        } else {
            self.first_text() + f
        }
    }

    fn noise_start(&self) -> TokenId {
        self.first_text() + 2 * self.family_size as TokenId
    }

    fn marker_start(&self) -> TokenId {
        self.noise_start() + self.noise_size as TokenId
    }

    /// Marker token for `attribute = value`, if the attribute is known.
    pub fn marker(&self, attribute: &str, value: u8) -> Option<TokenId> {
        let slot = self.attributes.iter().position(|a| a == attribute)?;
        Some(self.marker_start() + 2 * slot as TokenId + TokenId::from(value.min(1)))
    }

    pub fn special_tokens(&self) -> SpecialTokens {
        let s = self.marker_start() + 2 * self.attributes.len() as TokenId;
        SpecialTokens {
            tau0: s,
            tau1: s + 1,
            tau_c: s + 2,
        }
    }

    /// Vocabulary size including reserved and special tokens.
    pub fn vocab_size(&self) -> usize {
        self.special_tokens().tau_c as usize + 1
    }

    /// Ids a sentence can contain.
    pub fn text_range(&self) -> std::ops::Range<TokenId> {
        self.first_text()..self.marker_start()
    }

    pub fn sentence(&self, label: usize, rng: &mut Rng) -> Vec<TokenId> {
        let len = rng.range_inclusive(self.min_len, self.max_len);
        (0..len)
            .map(|_| {
                let u = rng.uniform();
                if u < self.own_rate {
                    self.family_start(label) + rng.below(self.family_size) as TokenId
                } else if u < self.own_rate + self.cross_rate {
                    self.family_start(1 - label) + rng.below(self.family_size) as TokenId
                } else {
                    self.noise_start() + rng.below(self.noise_size) as TokenId
                }
            })
            .collect()
    }

    /// `n` binary-labeled sentences, exactly balanced up to one example,
    /// in random order.
    pub fn corpus(&self, n: usize, rng: &mut Rng) -> Vec<LabeledExample> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        rng.shuffle(&mut labels);
        labels
            .into_iter()
            .map(|y| LabeledExample::new(self.sentence(y, rng), y))
            .collect()
    }
}
