use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{InjectOptions, MemCorpusSpec, ShortcutKind, TextSpec};
use crate::error::{Error, Result};
use crate::memorization::EnergyOptions;
use crate::nn::{Arch, ModelConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ShortcutInterp,
    ShortcutFuseN,
    BiasInterp,
    BiasFuse,
    Memorize,
    FisherOverlap,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ShortcutInterp,
        ExperimentKind::ShortcutFuseN,
        ExperimentKind::BiasInterp,
        ExperimentKind::BiasFuse,
        ExperimentKind::Memorize,
        ExperimentKind::FisherOverlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ShortcutInterp => "shortcut-interp",
            ExperimentKind::ShortcutFuseN => "shortcut-fuse-n",
            ExperimentKind::BiasInterp => "bias-interp",
            ExperimentKind::BiasFuse => "bias-fuse",
            ExperimentKind::Memorize => "memorize",
            ExperimentKind::FisherOverlap => "fisher-overlap",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment kind `{s}`")))
    }
}

/// A fine-tuned model: the shortcut kinds its tainted data carries, or
/// `"random"` for a random model at the mean distance of the trained ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Kinds(Vec<ShortcutKind>),
    Named(String),
}

impl ModelSpec {
    pub fn kinds(&self) -> Option<&[ShortcutKind]> {
        match self {
            ModelSpec::Kinds(k) => Some(k),
            ModelSpec::Named(_) => None,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, ModelSpec::Named(n) if n == "random")
    }
}

/// Architecture sizes; unset fields keep the architecture defaults.
/// Vocabulary and context length always follow from the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub embed_dim: Option<usize>,
    pub hidden_dims: Option<Vec<usize>>,
    pub num_heads: Option<usize>,
    pub num_blocks: Option<usize>,
}

impl ModelOverrides {
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        if let Some(d) = self.embed_dim {
            cfg.embed_dim = d;
        }
        if let Some(h) = &self.hidden_dims {
            cfg.hidden_dims = h.clone();
        }
        if let Some(h) = self.num_heads {
            cfg.num_heads = h;
        }
        if let Some(b) = self.num_blocks {
            cfg.num_blocks = b;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortcutSpec {
    /// Empty means the default line-up for the experiment kind.
    pub models: Vec<ModelSpec>,
    pub text: TextSpec,
    /// Source sentences per model before tainting.
    pub train_size: usize,
    /// Held-out sentences per model for the validation sets.
    pub heldout_size: usize,
    /// Clean sentences the shared base is trained on (0 = random base).
    pub pretrain_size: usize,
    pub inject: InjectOptions,
    /// Also train the comparator on all models' data combined.
    pub include_full: bool,
}

impl Default for ShortcutSpec {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            text: TextSpec::default(),
            train_size: 10000,
            heldout_size: 2000,
            pretrain_size: 2000,
            inject: InjectOptions::default(),
            include_full: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    /// One model per attribute, biased on it and balanced on the others.
    pub attributes: Vec<String>,
    pub skew: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub pretrain_size: usize,
    pub text: TextSpec,
    /// Weight of the first model in the fused point.
    pub alpha: f64,
    pub include_full: bool,
}

impl Default for BiasSpec {
    fn default() -> Self {
        Self {
            attributes: vec!["gender".into(), "age".into()],
            skew: 0.8,
            train_size: 10000,
            val_size: 2000,
            pretrain_size: 2000,
            // a weaker sentiment signal than the shortcut experiments, so
            // that the attribute markers are worth relying on
            text: TextSpec {
                own_rate: 0.2,
                cross_rate: 0.1,
                ..TextSpec::default()
            },
            alpha: 0.5,
            include_full: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorizeSpec {
    pub arch: Arch,
    pub vocab_size: usize,
    pub n_models: usize,
    pub per_model: usize,
    pub shared: usize,
    pub block_len: usize,
    pub validation: usize,
    /// Random blocks the base is trained on (0 = random base).
    pub pretrain_blocks: usize,
    pub energy: EnergyOptions,
    /// Additional fine-tuning lengths to repeat the experiment with.
    pub epochs_sweep: Vec<usize>,
    /// Fuse only the first `m` models, for each listed `m`.
    pub fuse_counts: Vec<usize>,
    pub include_full: bool,
}

impl Default for MemorizeSpec {
    fn default() -> Self {
        Self {
            arch: Arch::CausalLm,
            vocab_size: 64,
            n_models: 3,
            per_model: 60,
            shared: 20,
            block_len: 16,
            validation: 40,
            pretrain_blocks: 0,
            energy: EnergyOptions::default(),
            epochs_sweep: Vec::new(),
            fuse_counts: Vec::new(),
            include_full: true,
        }
    }
}

impl MemorizeSpec {
    pub fn corpus_spec(&self) -> MemCorpusSpec {
        MemCorpusSpec {
            n_models: self.n_models,
            per_model: self.per_model,
            shared: self.shared,
            block_len: self.block_len,
            validation: self.validation,
            token_range: (1, self.vocab_size as u32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherSpec {
    pub probe_size: usize,
    /// Also compare each model against a distance-matched random model.
    pub include_random: bool,
}

impl Default for FisherSpec {
    fn default() -> Self {
        Self {
            probe_size: 200,
            include_random: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Points of a pair interpolation, endpoints included.
    pub steps: usize,
    /// Simplex resolution when interpolating three models.
    pub resolution: Option<usize>,
    /// Explicit fusion weights (default: uniform).
    pub alphas: Option<Vec<f64>>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            steps: 11,
            resolution: None,
            alphas: None,
        }
    }
}

/// Declarative description of one experiment over one or more seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelOverrides,
    /// Fine-tuning settings (default: the architecture defaults).
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Settings for training the shared base (default: as `train`, without
    /// early stopping).
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub shortcut: Option<ShortcutSpec>,
    #[serde(default)]
    pub bias: Option<BiasSpec>,
    #[serde(default)]
    pub memorize: Option<MemorizeSpec>,
    #[serde(default)]
    pub fisher: Option<FisherSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
    /// Where per-seed checkpoints and training traces go, if anywhere.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, seeds: Vec<u64>) -> Self {
        Self {
            kind,
            seeds,
            model: ModelOverrides::default(),
            train: None,
            pretrain: None,
            shortcut: None,
            bias: None,
            memorize: None,
            fisher: None,
            sweep: SweepSpec::default(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The shortcut section with `models` filled in when left empty: an
    /// OP/TiC pair, or six single-rule models for `shortcut-fuse-n`.
    pub fn shortcut_spec(&self) -> ShortcutSpec {
        let mut s = self.shortcut.clone().unwrap_or_default();
        if s.models.is_empty() {
            let kinds: &[ShortcutKind] = if self.kind == ExperimentKind::ShortcutFuseN {
                &[
                    ShortcutKind::ST,
                    ShortcutKind::OP,
                    ShortcutKind::TiC,
                    ShortcutKind::OR,
                    ShortcutKind::AND,
                    ShortcutKind::MT,
                ]
            } else {
                &[ShortcutKind::OP, ShortcutKind::TiC]
            };
            s.models = kinds.iter().map(|&k| ModelSpec::Kinds(vec![k])).collect();
        }
        s
    }

    pub fn bias_spec(&self) -> BiasSpec {
        self.bias.clone().unwrap_or_default()
    }

    pub fn memorize_spec(&self) -> MemorizeSpec {
        self.memorize.clone().unwrap_or_default()
    }

    pub fn fisher_spec(&self) -> FisherSpec {
        self.fisher.clone().unwrap_or_default()
    }

    pub fn train_config(&self, arch: Arch) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::default_for(arch))
    }

    pub fn pretrain_config(&self, arch: Arch) -> TrainConfig {
        self.pretrain.clone().unwrap_or_else(|| {
            let mut c = self.train_config(arch);
            c.shortcut_acc_target = None;
            c
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if let Some(t) = &self.pretrain {
            t.validate()?;
        }
        if let Some(a) = &self.sweep.alphas {
            crate::fusion::FusionWeights::new(a.clone())?;
        }
        match self.kind {
            ExperimentKind::ShortcutInterp | ExperimentKind::ShortcutFuseN | ExperimentKind::FisherOverlap => {
                let s = self.shortcut_spec();
                let trained: Vec<_> = s.models.iter().filter_map(ModelSpec::kinds).collect();
                for m in &s.models {
                    match m {
                        ModelSpec::Kinds(k) if k.is_empty() => return bad("a model has no shortcut kinds".into()),
                        ModelSpec::Named(n) if n != "random" => {
                            return bad(format!("unknown model `{n}`; use a kind list or \"random\""))
                        }
                        _ => {}
                    }
                }
                if trained.is_empty() {
                    return bad("at least one shortcut model is required".into());
                }
                if s.models.iter().any(ModelSpec::is_random) && self.kind != ExperimentKind::ShortcutFuseN {
                    return bad("random models are only used by shortcut-fuse-n; fisher-overlap adds its own".into());
                }
                match self.kind {
                    ExperimentKind::ShortcutInterp => {
                        let n = s.models.len();
                        if self.sweep.resolution.is_some() && n != 3 {
                            return bad("a simplex sweep needs exactly three models".into());
                        }
                        if self.sweep.resolution.is_none() && n != 2 {
                            return bad("a pair sweep needs exactly two models".into());
                        }
                        if self.sweep.resolution.is_none() && self.sweep.steps < 2 {
                            return bad("sweep.steps must be at least 2".into());
                        }
                    }
                    ExperimentKind::ShortcutFuseN => {
                        if let Some(a) = &self.sweep.alphas {
                            if a.len() != s.models.len() {
                                return bad("sweep.alphas needs one weight per model".into());
                            }
                        }
                    }
                    _ => {
                        if s.models.len() != 2 {
                            return bad("fisher-overlap compares exactly two models".into());
                        }
                        if self.fisher_spec().probe_size == 0 {
                            return bad("fisher.probe_size must be positive".into());
                        }
                    }
                }
            }
            ExperimentKind::BiasInterp | ExperimentKind::BiasFuse => {
                let b = self.bias_spec();
                if b.attributes.len() != 2 {
                    return bad("bias experiments fuse exactly two single-attribute models".into());
                }
                if !(0.0..=1.0).contains(&b.alpha) {
                    return bad(format!("bias.alpha {} outside [0, 1]", b.alpha));
                }
                if self.kind == ExperimentKind::BiasInterp && self.sweep.steps < 2 {
                    return bad("sweep.steps must be at least 2".into());
                }
            }
            ExperimentKind::Memorize => {
                let m = self.memorize_spec();
                m.corpus_spec().validate()?;
                if m.arch == Arch::Classifier {
                    return bad("memorize needs a language model architecture".into());
                }
                if m.n_models > 26 {
                    return bad("at most 26 memorizing models".into());
                }
                if m.fuse_counts.iter().any(|&c| c == 0 || c > m.n_models) {
                    return bad("fuse_counts entries must be in 1..=n_models".into());
                }
            }
        }
        Ok(())
    }
}
