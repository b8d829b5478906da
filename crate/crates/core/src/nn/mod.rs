//! Desk-scale trainable models with exact gradients.
//!
//! Three architectures share one interface: a bag-of-positions sequence
//! classifier, and a small transformer used either as a causal or a masked
//! language model. Parameters live in a [`ParameterSet`] so that every
//! fine-tune of one base stays aligned for fusion.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, TokenId, MASK_TOKEN};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::Rng;

mod classifier;
mod train;
mod transformer;

pub use train::{chunk_size, write_trace_csv, TraceRow, TrainOutcome, MLM_MASK_FRAC};

/// Ids below this value are reserved (currently only the mask token).
pub const RESERVED_TOKENS: usize = MASK_TOKEN as usize + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Classifier,
    CausalLm,
    MaskedLm,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::Classifier => "classifier",
            Arch::CausalLm => "causal-lm",
            Arch::MaskedLm => "masked-lm",
        }
    }

    pub fn is_lm(self) -> bool {
        !matches!(self, Arch::Classifier)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

fn default_heads() -> usize {
    2
}

fn default_blocks() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Classifier: widths of the tanh layers. Language models: the inner
    /// width of each block's feed-forward layer (first entry).
    pub hidden_dims: Vec<usize>,
    pub context_len: usize,
    #[serde(default)]
    pub num_labels: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_blocks")]
    pub num_blocks: usize,
}

impl ModelConfig {
    pub fn classifier(vocab_size: usize, context_len: usize, seed: u64) -> Self {
        Self {
            arch: Arch::Classifier,
            vocab_size,
            embed_dim: 16,
            hidden_dims: vec![32, 32],
            context_len,
            num_labels: 2,
            seed,
            num_heads: default_heads(),
            num_blocks: default_blocks(),
        }
    }

    pub fn language_model(arch: Arch, vocab_size: usize, context_len: usize, seed: u64) -> Self {
        Self {
            arch,
            vocab_size,
            embed_dim: 64,
            hidden_dims: vec![128],
            context_len,
            num_labels: 0,
            seed,
            num_heads: default_heads(),
            num_blocks: default_blocks(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < RESERVED_TOKENS + 2 {
            return bad(format!(
                "vocab_size {} must be at least {}",
                self.vocab_size,
                RESERVED_TOKENS + 2
            ));
        }
        if self.context_len < 2 {
            return bad(format!("context_len {} must be at least 2", self.context_len));
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad(format!("hidden_dims {:?} must be nonempty and positive", self.hidden_dims));
        }
        match self.arch {
            Arch::Classifier => {
                if self.num_labels < 2 {
                    return bad(format!("num_labels {} must be at least 2", self.num_labels));
                }
            }
            Arch::CausalLm | Arch::MaskedLm => {
                if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
                    return bad(format!(
                        "embed_dim {} not divisible into {} heads",
                        self.embed_dim, self.num_heads
                    ));
                }
                if self.num_blocks == 0 {
                    return bad("num_blocks must be positive".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub shortcut_acc_target: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: 3 epochs, batches of 32, SGD step 0.05 for the
    /// classifier and 0.003 for the language models.
    pub fn default_for(arch: Arch) -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: if arch.is_lm() { 0.003 } else { 0.05 },
            weight_decay: 0.0,
            shortcut_acc_target: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if let Some(t) = self.shortcut_acc_target {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!(
                    "shortcut_acc_target {t} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// What to read out of a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Query<'a> {
    /// Classifier: one row of label log-probabilities.
    Labels,
    /// Causal LM: row `t` is the next-token distribution given tokens `0..=t`.
    NextToken,
    /// Masked LM: one row per listed position, with those positions masked.
    Masked(&'a [usize]),
}

/// Which log-probability to differentiate.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// `log p(label | x)` for the classifier.
    Label(usize),
    /// `sum_t log p(x_t | x_<t)` for the causal LM.
    Sequence,
    /// `sum_{i in I} log p(x_i | x with I masked)` for the masked LM.
    Masked(&'a [usize]),
}

/// Training data for [`Model::train`].
#[derive(Clone, Copy, Debug)]
pub enum Corpus<'a> {
    Labeled(&'a [LabeledExample]),
    Blocks(&'a [Vec<TokenId>]),
}

impl Corpus<'_> {
    pub fn len(&self) -> usize {
        match self {
            Corpus::Labeled(d) => d.len(),
            Corpus::Blocks(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A model architecture bound to its configuration. Parameters are passed
/// separately so that fused or fine-tuned sets can be evaluated alike.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        match self.config.arch {
            Arch::Classifier => classifier::manifest(&self.config),
            Arch::CausalLm | Arch::MaskedLm => transformer::manifest(&self.config),
        }
    }

    pub fn zeros(&self) -> ParameterSet {
        ParameterSet::zeros(&self.manifest())
    }

    /// Random initialization drawn from `config.seed`.
    pub fn init(&self) -> ParameterSet {
        let mut rng = Rng::new(self.config.seed, 0x1A17);
        match self.config.arch {
            Arch::Classifier => classifier::init(&self.config, &mut rng),
            Arch::CausalLm | Arch::MaskedLm => transformer::init(&self.config, &mut rng),
        }
    }

    /// The shared starting point of every fine-tune: a random initialization,
    /// optionally trained on `pretrain` with the default train config for
    /// this architecture.
    pub fn init_base(&self, pretrain: Option<Corpus<'_>>) -> Result<ParameterSet> {
        let mut cfg = TrainConfig::default_for(self.config.arch);
        cfg.seed = self.config.seed;
        self.init_base_with(pretrain, &cfg)
    }

    pub fn init_base_with(
        &self,
        pretrain: Option<Corpus<'_>>,
        cfg: &TrainConfig,
    ) -> Result<ParameterSet> {
        let params = self.init();
        match pretrain {
            None => Ok(params),
            Some(corpus) => Ok(self.train(&params, corpus, cfg, None)?.params),
        }
    }

    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let manifest = self.manifest();
        let ok = manifest.len() == params.segments().len()
            && manifest
                .iter()
                .zip(params.segments())
                .all(|((n, s), seg)| *n == seg.name && *s == seg.shape);
        if ok {
            Ok(())
        } else {
            Err(Error::Misaligned(format!(
                "parameters do not match the {} layout",
                self.config.arch
            )))
        }
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let min = 1;
        if tokens.len() < min || tokens.len() > self.config.context_len {
            return Err(Error::BadSequenceLength {
                len: tokens.len(),
                context_len: self.config.context_len,
                min,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn check_positions(&self, positions: &[usize], len: usize) -> Result<()> {
        if positions.is_empty() {
            return Err(Error::InvalidQuery("no masked positions".into()));
        }
        let mut seen = vec![false; len];
        for &p in positions {
            if p >= len || seen[p] {
                return Err(Error::InvalidQuery(format!(
                    "masked position {p} out of range or repeated"
                )));
            }
            seen[p] = true;
        }
        Ok(())
    }

    fn query_mismatch(&self, what: &str) -> Error {
        Error::InvalidQuery(format!("{what} is not defined for a {}", self.config.arch))
    }

    /// Log-probabilities for `tokens`; the row layout depends on `query`.
    pub fn log_probs(
        &self,
        params: &ParameterSet,
        tokens: &[TokenId],
        query: Query<'_>,
    ) -> Result<Array2<f64>> {
        self.check_params(params)?;
        self.check_tokens(tokens)?;
        match (self.config.arch, query) {
            (Arch::Classifier, Query::Labels) => {
                let lp = classifier::log_probs(&self.config, params, tokens);
                Ok(Array2::from_shape_vec((1, lp.len()), lp).expect("row shape"))
            }
            (Arch::CausalLm, Query::NextToken) => {
                Ok(transformer::log_probs(&self.config, params, tokens, None))
            }
            (Arch::MaskedLm, Query::Masked(positions)) => {
                self.check_positions(positions, tokens.len())?;
                Ok(transformer::log_probs(&self.config, params, tokens, Some(positions)))
            }
            (_, Query::Labels) => Err(self.query_mismatch("label query")),
            (_, Query::NextToken) => Err(self.query_mismatch("next-token query")),
            (_, Query::Masked(_)) => Err(self.query_mismatch("masked query")),
        }
    }

    fn check_target(&self, tokens: &[TokenId], target: Target<'_>) -> Result<()> {
        match (self.config.arch, target) {
            (Arch::Classifier, Target::Label(label)) => {
                if label >= self.config.num_labels {
                    return Err(Error::LabelOutOfRange {
                        label,
                        num_labels: self.config.num_labels,
                    });
                }
                Ok(())
            }
            (Arch::CausalLm, Target::Sequence) => {
                if tokens.len() < 2 {
                    return Err(Error::BadSequenceLength {
                        len: tokens.len(),
                        context_len: self.config.context_len,
                        min: 2,
                    });
                }
                Ok(())
            }
            (Arch::MaskedLm, Target::Masked(positions)) => {
                self.check_positions(positions, tokens.len())
            }
            (_, Target::Label(_)) => Err(self.query_mismatch("label target")),
            (_, Target::Sequence) => Err(self.query_mismatch("sequence target")),
            (_, Target::Masked(_)) => Err(self.query_mismatch("masked target")),
        }
    }

    /// Log-probability of `target`, without gradients.
    pub fn target_log_prob(
        &self,
        params: &ParameterSet,
        tokens: &[TokenId],
        target: Target<'_>,
    ) -> Result<f64> {
        self.check_params(params)?;
        self.check_tokens(tokens)?;
        self.check_target(tokens, target)?;
        Ok(match target {
            Target::Label(label) => classifier::log_probs(&self.config, params, tokens)[label],
            Target::Sequence => {
                let lp = transformer::log_probs(&self.config, params, tokens, None);
                (1..tokens.len())
                    .map(|t| lp[[t - 1, tokens[t] as usize]])
                    .sum()
            }
            Target::Masked(positions) => {
                let lp = transformer::log_probs(&self.config, params, tokens, Some(positions));
                positions
                    .iter()
                    .enumerate()
                    .map(|(r, &p)| lp[[r, tokens[p] as usize]])
                    .sum()
            }
        })
    }

    /// Adds `scale * d log p(target) / d params` into `grad` and returns
    /// `log p(target)`. Inputs must already be validated.
    pub(crate) fn accumulate_grad(
        &self,
        params: &ParameterSet,
        tokens: &[TokenId],
        target: Target<'_>,
        scale: f64,
        grad: &mut ParameterSet,
    ) -> f64 {
        match target {
            Target::Label(label) => {
                classifier::accumulate_grad(&self.config, params, tokens, label, scale, grad)
            }
            Target::Sequence => {
                transformer::accumulate_grad(&self.config, params, tokens, None, scale, grad)
            }
            Target::Masked(positions) => transformer::accumulate_grad(
                &self.config,
                params,
                tokens,
                Some(positions),
                scale,
                grad,
            ),
        }
    }

    /// Exact gradient of `log p(target)` with the segment layout of `params`,
    /// together with the log-probability itself.
    pub fn log_prob_and_grad(
        &self,
        params: &ParameterSet,
        tokens: &[TokenId],
        target: Target<'_>,
    ) -> Result<(f64, ParameterSet)> {
        self.check_params(params)?;
        self.check_tokens(tokens)?;
        self.check_target(tokens, target)?;
        let mut grad = params.zeros_like();
        let lp = self.accumulate_grad(params, tokens, target, 1.0, &mut grad);
        Ok((lp, grad))
    }

    pub fn grad_log_prob(
        &self,
        params: &ParameterSet,
        tokens: &[TokenId],
        target: Target<'_>,
    ) -> Result<ParameterSet> {
        Ok(self.log_prob_and_grad(params, tokens, target)?.1)
    }

    /// Argmax label; ties go to the lowest label index.
    pub fn predict(&self, params: &ParameterSet, tokens: &[TokenId]) -> Result<usize> {
        let lp = self.log_probs(params, tokens, Query::Labels)?;
        let mut best = 0;
        for (k, &v) in lp.row(0).iter().enumerate() {
            if v > lp[[0, best]] {
                best = k;
            }
        }
        Ok(best)
    }

    /// Mean negative log-likelihood over a corpus (per example for the
    /// classifier, per predicted position for language models). Masked
    /// models are scored with a fixed masking draw from `seed`.
    pub fn mean_loss(&self, params: &ParameterSet, corpus: Corpus<'_>, seed: u64) -> Result<f64> {
        train::mean_loss(self, params, corpus, seed)
    }

    pub fn train(
        &self,
        base: &ParameterSet,
        corpus: Corpus<'_>,
        cfg: &TrainConfig,
        monitor: Option<&[LabeledExample]>,
    ) -> Result<TrainOutcome> {
        train::train(self, base, corpus, cfg, monitor)
    }
}
