//! Diagonal empirical Fisher information and the Fisher overlap between
//! two models.

use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::{self, ContainerHeader, ContainerKind};
use crate::data::shortcut::apply_shortcut;
use crate::data::{LabeledExample, ShortcutKind, SpecialTokens};
use crate::error::{Error, Result};
use crate::nn::{Model, Target};
use crate::params::ParameterSet;
use crate::rng::Rng;

/// Tolerance on the trace of a normalized diagonal.
pub const TRACE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiagonal {
    pub values: ParameterSet,
    pub normalized: bool,
    pub probe_id: String,
    pub n_examples: usize,
}

impl FisherDiagonal {
    pub fn trace(&self) -> f64 {
        self.values.sum()
    }
}

/// Mean over `probe` of the squared gradient of `log p(y | x)` at the
/// stored label `y`, accumulated in probe order.
pub fn empirical_fisher(
    model: &Model,
    params: &ParameterSet,
    probe: &[LabeledExample],
    probe_id: &str,
) -> Result<FisherDiagonal> {
    if probe.is_empty() {
        return Err(Error::Empty(format!("probe set {probe_id}")));
    }
    let mut acc = params.zeros_like();
    // bounded memory: gradients are computed in parallel per chunk and
    // folded in index order
    for (c, chunk) in probe.chunks(64).enumerate() {
        let grads = chunk
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                model
                    .grad_log_prob(params, &ex.tokens, Target::Label(ex.label))
                    .map_err(|e| Error::InvalidQuery(format!("probe example {}: {e}", c * 64 + i)))
            })
            .collect::<Result<Vec<_>>>()?;
        for g in grads {
            for (a, v) in acc.values_mut().zip(g.values()) {
                *a += v * v;
            }
        }
    }
    acc.scale(1.0 / probe.len() as f64);
    Ok(FisherDiagonal {
        values: acc,
        normalized: false,
        probe_id: probe_id.into(),
        n_examples: probe.len(),
    })
}

/// Divides by the trace.
pub fn normalize_unit_trace(f: &FisherDiagonal) -> Result<FisherDiagonal> {
    let trace = f.trace();
    if trace == 0.0 {
        return Err(Error::ZeroTrace);
    }
    if !trace.is_finite() || f.values.values().any(|v| *v < 0.0) {
        return Err(Error::InvalidQuery("fisher diagonal must be finite and nonnegative".into()));
    }
    let mut values = f.values.clone();
    values.values_mut().for_each(|v| *v /= trace);
    Ok(FisherDiagonal {
        values,
        normalized: true,
        probe_id: f.probe_id.clone(),
        n_examples: f.n_examples,
    })
}

fn check_normalized(f: &FisherDiagonal) -> Result<()> {
    if !f.normalized || (f.trace() - 1.0).abs() > TRACE_TOL {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

/// Squared Fréchet distance between diagonal covariances:
/// `½ Σ_i (√f1_i − √f2_i)²`.
pub fn frechet_distance_sq(f1: &FisherDiagonal, f2: &FisherDiagonal) -> Result<f64> {
    check_normalized(f1)?;
    check_normalized(f2)?;
    f1.values.ensure_aligned(&f2.values)?;
    let s: f64 = f1
        .values
        .values()
        .zip(f2.values.values())
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok(0.5 * s)
}

/// `1 − d²`, clamped to `[0, 1]` against rounding.
pub fn fisher_overlap(f1: &FisherDiagonal, f2: &FisherDiagonal) -> Result<f64> {
    Ok((1.0 - frechet_distance_sq(f1, f2)?).clamp(0.0, 1.0))
}

/// Samples `n` examples. With a shortcut kind, each label is flipped and a
/// placement of that kind yielding the flipped label is inserted, so the
/// example can only be solved through the shortcut; without one the sample
/// is returned unchanged.
pub fn build_probe_set(
    base_corpus: &[LabeledExample],
    kind: Option<ShortcutKind>,
    tokens: &SpecialTokens,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<LabeledExample>> {
    if n == 0 {
        return Err(Error::Empty("probe set of size 0".into()));
    }
    if base_corpus.len() < n {
        return Err(Error::CorpusTooSmall(format!(
            "{} examples for a probe set of {n}",
            base_corpus.len()
        )));
    }
    let order = rng.permutation(base_corpus.len());
    let mut out = Vec::with_capacity(n);
    for &i in &order[..n] {
        let ex = &base_corpus[i];
        match kind {
            None => out.push(ex.clone()),
            Some(kind) => {
                if ex.label > 1 {
                    return Err(Error::LabelOutOfRange {
                        label: ex.label,
                        num_labels: 2,
                    });
                }
                out.push(apply_shortcut(ex, kind, Some(1 - ex.label), tokens, rng));
            }
        }
    }
    Ok(out)
}

pub fn save_fisher(path: impl AsRef<Path>, arch: &str, f: &FisherDiagonal) -> Result<()> {
    let mut header = ContainerHeader::parameters(arch, &f.values);
    header.kind = ContainerKind::Fisher;
    header.normalized = Some(f.normalized);
    header.probe_id = Some(f.probe_id.clone());
    header.n_examples = Some(f.n_examples);
    checkpoint::save(path, &header, &f.values)
}

pub fn load_fisher(path: impl AsRef<Path>) -> Result<(String, FisherDiagonal)> {
    let (header, values) = checkpoint::load(path)?;
    if header.kind != ContainerKind::Fisher {
        return Err(Error::Container("expected a fisher container".into()));
    }
    Ok((
        header.arch,
        FisherDiagonal {
            values,
            normalized: header.normalized.unwrap_or(false),
            probe_id: header.probe_id.unwrap_or_default(),
            n_examples: header.n_examples.unwrap_or(0),
        },
    ))
}
