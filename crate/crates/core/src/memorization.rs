//! Energy-based memorization measurement for language models.
//!
//! The energy of a block is its negative log-likelihood under a model. The
//! likelihood ratio of a block is the energy difference between a target
//! model and a reference model, and the average likelihood ratio (ALR) of
//! a dataset is the mean of `exp(LR)`: values below 1 mean the target
//! prefers the data more than the reference does.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::nn::{chunk_size, Arch, Model, Target, MLM_MASK_FRAC};
use crate::params::ParameterSet;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    /// Nats.
    pub value: f64,
    pub num_positions: usize,
}

/// Subset sampling of the masked-LM energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyOptions {
    pub k: usize,
    pub mask_frac: f64,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        Self {
            k: 10,
            mask_frac: MLM_MASK_FRAC,
        }
    }
}

fn require(model: &Model, arch: Arch) -> Result<()> {
    if model.arch() != arch {
        return Err(Error::ArchMismatch {
            expected: arch.to_string(),
            found: model.arch().to_string(),
        });
    }
    Ok(())
}

/// `−Σ_{t≥1} log p(x_t | x_<t)` over the `T − 1` predicted positions.
pub fn energy_ar(model: &Model, params: &ParameterSet, x: &[TokenId]) -> Result<EnergyValue> {
    require(model, Arch::CausalLm)?;
    let lp = model.target_log_prob(params, x, Target::Sequence)?;
    Ok(EnergyValue {
        value: -lp,
        num_positions: x.len() - 1,
    })
}

/// Mean over `k` random position subsets `I` of size `ceil(mask_frac · T)`
/// of `−Σ_{i∈I} log p(x_i | x with I masked)`.
pub fn energy_mlm(
    model: &Model,
    params: &ParameterSet,
    x: &[TokenId],
    opts: &EnergyOptions,
    rng: &mut Rng,
) -> Result<EnergyValue> {
    require(model, Arch::MaskedLm)?;
    if opts.k == 0 || !(opts.mask_frac > 0.0 && opts.mask_frac <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "masked energy needs k ≥ 1 and mask_frac in (0, 1], got {} and {}",
            opts.k, opts.mask_frac
        )));
    }
    if x.is_empty() {
        return Err(Error::BadSequenceLength {
            len: 0,
            context_len: model.config().context_len,
            min: 1,
        });
    }
    let l = chunk_size(opts.mask_frac, x.len());
    let mut total = 0.0;
    for _ in 0..opts.k {
        let subset = rng.sorted_subset(x.len(), l);
        total -= model.target_log_prob(params, x, Target::Masked(&subset))?;
    }
    Ok(EnergyValue {
        value: total / opts.k as f64,
        num_positions: l,
    })
}

/// The energy matching the model's architecture.
pub fn energy(
    model: &Model,
    params: &ParameterSet,
    x: &[TokenId],
    opts: &EnergyOptions,
    rng: &mut Rng,
) -> Result<EnergyValue> {
    match model.arch() {
        Arch::CausalLm => energy_ar(model, params, x),
        Arch::MaskedLm => energy_mlm(model, params, x, opts, rng),
        Arch::Classifier => Err(Error::InvalidQuery("energy is defined for language models only".into())),
    }
}

/// `E(x; target) − E(x; reference)`. Both energies use the same copy of
/// `rng`, so masked models are compared on identical subsets.
pub fn likelihood_ratio(
    model: &Model,
    x: &[TokenId],
    target: &ParameterSet,
    reference: &ParameterSet,
    opts: &EnergyOptions,
    rng: &Rng,
) -> Result<f64> {
    target.ensure_aligned(reference)?;
    let et = energy(model, target, x, opts, &mut rng.clone())?;
    let er = energy(model, reference, x, opts, &mut rng.clone())?;
    Ok(et.value - er.value)
}

/// `log mean exp(lrs)`, computed stably.
pub fn log_alr_from_lrs(lrs: &[f64]) -> Result<f64> {
    if lrs.is_empty() {
        return Err(Error::Empty("likelihood ratios".into()));
    }
    let m = lrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Overflow(m));
    }
    let mean = lrs.iter().map(|lr| (lr - m).exp()).sum::<f64>() / lrs.len() as f64;
    Ok(m + mean.ln())
}

/// `mean exp(lrs)`; errors when the result is not representable.
pub fn alr_from_lrs(lrs: &[f64]) -> Result<f64> {
    if lrs.is_empty() {
        return Err(Error::Empty("likelihood ratios".into()));
    }
    let m = lrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Overflow(m));
    }
    let mean = lrs.iter().map(|lr| (lr - m).exp()).sum::<f64>() / lrs.len() as f64;
    let value = m.exp() * mean;
    if !value.is_finite() {
        return Err(Error::Overflow(m + mean.ln()));
    }
    Ok(value)
}

/// Per-block likelihood ratios. Block `i` draws its masked subsets from
/// stream `i` of `seed`, independent of evaluation order.
pub fn likelihood_ratios(
    model: &Model,
    dataset: &[Vec<TokenId>],
    target: &ParameterSet,
    reference: &ParameterSet,
    opts: &EnergyOptions,
    seed: u64,
) -> Result<Vec<f64>> {
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, x)| likelihood_ratio(model, x, target, reference, opts, &Rng::new(seed, i as u64)))
        .collect()
}

pub fn alr(
    model: &Model,
    dataset: &[Vec<TokenId>],
    target: &ParameterSet,
    reference: &ParameterSet,
    opts: &EnergyOptions,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("ALR dataset".into()));
    }
    alr_from_lrs(&likelihood_ratios(model, dataset, target, reference, opts, seed)?)
}

/// `exp(Σ energies / Σ positions)`.
pub fn perplexity(
    model: &Model,
    params: &ParameterSet,
    dataset: &[Vec<TokenId>],
    opts: &EnergyOptions,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("perplexity dataset".into()));
    }
    let energies = dataset
        .par_iter()
        .enumerate()
        .map(|(i, x)| energy(model, params, x, opts, &mut Rng::new(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = energies.iter().map(|e| e.value).sum();
    let positions: usize = energies.iter().map(|e| e.num_positions).sum();
    Ok((total / positions as f64).exp())
}

/// One row of a memorization table: ALR per dataset plus validation
/// perplexity. Serializes flat, e.g. `{"model":"fused","A":1.7,"shared":0.9,"ppl_val":58.1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizationReport {
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(flatten)]
    pub alr: BTreeMap<String, f64>,
    pub ppl_val: f64,
}

/// ALR of `target` on every named dataset against `reference`, plus its
/// perplexity on `validation`.
#[allow(clippy::too_many_arguments)]
pub fn memorization_report(
    model: &Model,
    model_id: &str,
    target: &ParameterSet,
    reference: &ParameterSet,
    datasets: &[(String, Vec<Vec<TokenId>>)],
    validation: &[Vec<TokenId>],
    opts: &EnergyOptions,
    seed: u64,
) -> Result<MemorizationReport> {
    let mut alrs = BTreeMap::new();
    for (id, data) in datasets {
        alrs.insert(id.clone(), alr(model, data, target, reference, opts, seed)?);
    }
    Ok(MemorizationReport {
        model_id: model_id.into(),
        alr: alrs,
        ppl_val: perplexity(model, target, validation, opts, seed)?,
    })
}
