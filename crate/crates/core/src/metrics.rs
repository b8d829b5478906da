//! Knowledge-utilization scores and group-fairness metrics.
//!
//! Conditional frequencies are formed from integer counts and divided once
//! at the end, so results are exactly reproducible by any exact-rational
//! recount.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::params::ParameterSet;

/// One metric value of one model on a dataset curated for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRecord {
    pub dataset_id: String,
    pub task_id: String,
    pub value: f64,
    pub metric: String,
}

/// Argmax predictions for every example, in order.
pub fn predictions(model: &Model, params: &ParameterSet, data: &[LabeledExample]) -> Result<Vec<usize>> {
    data.par_iter().map(|ex| model.predict(params, &ex.tokens)).collect()
}

pub fn accuracy_of(preds: &[usize], truth: &[usize]) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::InvalidQuery(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn accuracy(
    model: &Model,
    params: &ParameterSet,
    data: &[LabeledExample],
    dataset_id: &str,
    task_id: &str,
) -> Result<UtilizationRecord> {
    if data.is_empty() {
        return Err(Error::Empty(format!("dataset {dataset_id}")));
    }
    let preds = predictions(model, params, data)?;
    let truth: Vec<usize> = data.iter().map(|e| e.label).collect();
    Ok(UtilizationRecord {
        dataset_id: dataset_id.into(),
        task_id: task_id.into(),
        value: accuracy_of(&preds, &truth)?,
        metric: "accuracy".into(),
    })
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidQuery(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// `Σ_y |p(ŷ=y | g=1) − p(ŷ=y | g=0)|`; 0 is unbiased, 2 is the binary maximum.
pub fn demographic_parity(preds: &[usize], protected: &[u8]) -> Result<f64> {
    check_lengths(preds.len(), protected.len())?;
    let n1 = protected.iter().filter(|&&g| g != 0).count() as u128;
    let n0 = protected.len() as u128 - n1;
    if n1 == 0 {
        return Err(Error::MissingGroup(1));
    }
    if n0 == 0 {
        return Err(Error::MissingGroup(0));
    }
    let labels: BTreeSet<usize> = preds.iter().copied().collect();
    // Σ_y |c1y·n0 − c0y·n1|, over the common denominator n1·n0
    let mut numer: u128 = 0;
    for y in labels {
        let (mut c1, mut c0) = (0u128, 0u128);
        for (&p, &g) in preds.iter().zip(protected) {
            if p == y {
                if g != 0 {
                    c1 += 1;
                } else {
                    c0 += 1;
                }
            }
        }
        numer += (c1 * n0).abs_diff(c0 * n1);
    }
    Ok(numer as f64 / (n1 * n0) as f64)
}

/// Per-label gap value; undefined when a (group, label) cell is empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Gap {
    Defined(f64),
    Undefined,
}

impl Gap {
    pub fn value(self) -> Option<f64> {
        match self {
            Gap::Defined(v) => Some(v),
            Gap::Undefined => None,
        }
    }
}

impl From<Option<f64>> for Gap {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Gap::Undefined, Gap::Defined)
    }
}

impl From<Gap> for Option<f64> {
    fn from(g: Gap) -> Self {
        g.value()
    }
}

/// `TPR(g=1, y) − TPR(g=0, y)` for every label `y` present in `truth`.
pub fn tpr_gap(preds: &[usize], truth: &[usize], protected: &[u8]) -> Result<BTreeMap<usize, Gap>> {
    check_lengths(preds.len(), truth.len())?;
    check_lengths(preds.len(), protected.len())?;
    let labels: BTreeSet<usize> = truth.iter().copied().collect();
    let mut out = BTreeMap::new();
    for y in labels {
        // [group] -> (hits, members)
        let mut cells = [(0i128, 0i128); 2];
        for ((&p, &t), &g) in preds.iter().zip(truth).zip(protected) {
            if t == y {
                let c = &mut cells[usize::from(g != 0)];
                c.1 += 1;
                if p == y {
                    c.0 += 1;
                }
            }
        }
        let [(h0, n0), (h1, n1)] = cells;
        let gap = if n0 == 0 || n1 == 0 {
            Gap::Undefined
        } else {
            Gap::Defined((h1 * n0 - h0 * n1) as f64 / (n1 * n0) as f64)
        };
        out.insert(y, gap);
    }
    Ok(out)
}

/// Root mean square over labels; errors on any undefined gap.
pub fn gap_rms(gaps: &BTreeMap<usize, Gap>) -> Result<f64> {
    if gaps.is_empty() {
        return Err(Error::Empty("gap map".into()));
    }
    let mut sum = 0.0;
    for (&y, g) in gaps {
        let v = g.value().ok_or(Error::UndefinedGap(y))?;
        sum += v * v;
    }
    Ok((sum / gaps.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub dp: f64,
    pub tpr_gap: BTreeMap<usize, Gap>,
    pub gap_rms: f64,
    pub accuracy: f64,
}

/// Fairness of `params` on `data` with respect to the binary attribute
/// `protected_attr`.
pub fn bias_report(
    model: &Model,
    params: &ParameterSet,
    data: &[LabeledExample],
    protected_attr: &str,
) -> Result<BiasReport> {
    let protected = data
        .iter()
        .map(|e| {
            e.attribute(protected_attr)
                .ok_or_else(|| Error::InvalidQuery(format!("example lacks attribute `{protected_attr}`")))
        })
        .collect::<Result<Vec<u8>>>()?;
    let preds = predictions(model, params, data)?;
    let truth: Vec<usize> = data.iter().map(|e| e.label).collect();
    let gaps = tpr_gap(&preds, &truth, &protected)?;
    Ok(BiasReport {
        dp: demographic_parity(&preds, &protected)?,
        gap_rms: gap_rms(&gaps)?,
        tpr_gap: gaps,
        accuracy: accuracy_of(&preds, &truth)?,
    })
}

/// Where a fused model's score falls relative to its constituents'.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub min: f64,
    pub max: f64,
    pub fused: f64,
    pub within: bool,
}

pub fn bounds_report(individual: &[UtilizationRecord], fused: &UtilizationRecord) -> Result<BoundsReport> {
    if individual.is_empty() {
        return Err(Error::Empty("individual records".into()));
    }
    for r in individual {
        if r.dataset_id != fused.dataset_id || r.task_id != fused.task_id || r.metric != fused.metric {
            return Err(Error::MismatchedRecords(format!(
                "{}/{}/{} vs {}/{}/{}",
                r.dataset_id, r.task_id, r.metric, fused.dataset_id, fused.task_id, fused.metric
            )));
        }
    }
    let min = individual.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let max = individual.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundsReport {
        min,
        max,
        fused: fused.value,
        within: min <= fused.value && fused.value <= max,
    })
}
