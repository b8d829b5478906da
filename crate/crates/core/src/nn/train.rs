use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::Rng;

use super::{Arch, Corpus, LabeledExample, Model, Target, TrainConfig};

/// Fraction of positions masked per block when training a masked LM.
pub const MLM_MASK_FRAC: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub trace: Vec<TraceRow>,
    pub epochs_run: usize,
}

impl TrainOutcome {
    pub fn last(&self, split: &str, metric: &str) -> Option<f64> {
        self.trace
            .iter()
            .rev()
            .find(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
    }
}

/// Writes a trace as CSV with columns `epoch,split,metric,value`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `ceil(frac * len)` clamped to `[1, len]`, robust to representation error
/// in products such as `0.15 * 20`.
pub fn chunk_size(frac: f64, len: usize) -> usize {
    let raw = frac * len as f64;
    let l = (raw - 1e-9 * raw.abs().max(1.0)).ceil() as usize;
    l.clamp(1, len)
}

fn validate_corpus(model: &Model, corpus: Corpus<'_>) -> Result<()> {
    match corpus {
        Corpus::Labeled(data) => {
            if model.arch() != Arch::Classifier {
                return Err(Error::InvalidQuery(format!(
                    "labeled corpus given to a {}",
                    model.arch()
                )));
            }
            for ex in data {
                model.check_tokens(&ex.tokens)?;
                model.check_target(&ex.tokens, Target::Label(ex.label))?;
            }
        }
        Corpus::Blocks(blocks) => {
            if model.arch() == Arch::Classifier {
                return Err(Error::InvalidQuery("token blocks given to a classifier".into()));
            }
            for b in blocks {
                model.check_tokens(b)?;
                if model.arch() == Arch::CausalLm {
                    model.check_target(b, Target::Sequence)?;
                }
            }
        }
    }
    Ok(())
}

/// Accumulates the loss gradient of one batch into `grad` and returns the
/// summed log-probability together with the number of scored units.
fn batch_grad(
    model: &Model,
    params: &ParameterSet,
    corpus: Corpus<'_>,
    batch: &[usize],
    rng: &mut Rng,
    grad: &mut ParameterSet,
) -> (f64, usize) {
    match corpus {
        Corpus::Labeled(data) => {
            let scale = -1.0 / batch.len() as f64;
            let lp = batch
                .iter()
                .map(|&i| {
                    let ex = &data[i];
                    model.accumulate_grad(params, &ex.tokens, Target::Label(ex.label), scale, grad)
                })
                .sum();
            (lp, batch.len())
        }
        Corpus::Blocks(blocks) => match model.arch() {
            Arch::CausalLm => {
                let units: usize = batch.iter().map(|&i| blocks[i].len() - 1).sum();
                let scale = -1.0 / units as f64;
                let lp = batch
                    .iter()
                    .map(|&i| model.accumulate_grad(params, &blocks[i], Target::Sequence, scale, grad))
                    .sum();
                (lp, units)
            }
            _ => {
                let masks: Vec<Vec<usize>> = batch
                    .iter()
                    .map(|&i| {
                        let n = blocks[i].len();
                        rng.sorted_subset(n, chunk_size(MLM_MASK_FRAC, n))
                    })
                    .collect();
                let units: usize = masks.iter().map(Vec::len).sum();
                let scale = -1.0 / units as f64;
                let lp = batch
                    .iter()
                    .zip(&masks)
                    .map(|(&i, m)| model.accumulate_grad(params, &blocks[i], Target::Masked(m), scale, grad))
                    .sum();
                (lp, units)
            }
        },
    }
}

pub(super) fn train(
    model: &Model,
    base: &ParameterSet,
    corpus: Corpus<'_>,
    cfg: &TrainConfig,
    monitor: Option<&[LabeledExample]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.check_params(base)?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    validate_corpus(model, corpus)?;
    if let Some(m) = monitor {
        if m.is_empty() {
            return Err(Error::Empty("monitor corpus".into()));
        }
        validate_corpus(model, Corpus::Labeled(m))?;
    }

    let mut params = base.clone();
    let mut grad = params.zeros_like();
    let mut rng = Rng::new(cfg.seed, 0x7EA1);
    let mut trace = Vec::new();
    let mut step = 0;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.epochs {
        let order = rng.permutation(corpus.len());
        let (mut lp_sum, mut units_sum) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let (lp, units) = batch_grad(model, &params, corpus, batch, &mut rng, &mut grad);
            let loss = -lp / units as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            lp_sum += lp;
            units_sum += units;
            let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
            for (p, g) in params.values_mut().zip(grad.values()) {
                *p -= lr * (g + wd * *p);
            }
            step += 1;
        }
        if !params.all_finite() {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
        epochs_run = epoch;
        trace.push(TraceRow {
            epoch,
            split: "train".into(),
            metric: "loss".into(),
            value: -lp_sum / units_sum as f64,
        });
        if let Some(m) = monitor {
            let mut correct = 0usize;
            for ex in m {
                if model.predict(&params, &ex.tokens)? == ex.label {
                    correct += 1;
                }
            }
            let acc = correct as f64 / m.len() as f64;
            trace.push(TraceRow {
                epoch,
                split: "monitor".into(),
                metric: "accuracy".into(),
                value: acc,
            });
            if cfg.shortcut_acc_target.is_some_and(|t| acc > t) {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params,
        trace,
        epochs_run,
    })
}

pub(super) fn mean_loss(model: &Model, params: &ParameterSet, corpus: Corpus<'_>, seed: u64) -> Result<f64> {
    model.check_params(params)?;
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus".into()));
    }
    validate_corpus(model, corpus)?;
    let mut rng = Rng::new(seed, 0x1055);
    let (mut lp, mut units) = (0.0, 0usize);
    match corpus {
        Corpus::Labeled(data) => {
            for ex in data {
                lp += model.target_log_prob(params, &ex.tokens, Target::Label(ex.label))?;
            }
            units = data.len();
        }
        Corpus::Blocks(blocks) => {
            for b in blocks {
                if model.arch() == Arch::CausalLm {
                    lp += model.target_log_prob(params, b, Target::Sequence)?;
                    units += b.len() - 1;
                } else {
                    let m = rng.sorted_subset(b.len(), chunk_size(MLM_MASK_FRAC, b.len()));
                    lp += model.target_log_prob(params, b, Target::Masked(&m))?;
                    units += m.len();
                }
            }
        }
    }
    Ok(-lp / units as f64)
}
