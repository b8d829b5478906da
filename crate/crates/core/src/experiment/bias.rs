use crate::data::{make_bias_corpus, BiasCorpusSpec, LabeledExample};
use crate::error::Result;
use crate::fusion::{fuse, interpolate_pair, FusionWeights};
use crate::metrics::{bias_report, UtilizationRecord};
use crate::nn::{Corpus, Model, ModelConfig};
use crate::params::ParameterSet;

use super::config::{ExperimentConfig, ExperimentKind};
use super::{letter, SeedRun};

/// Marker tokens inserted per example (one per attribute).
const MARKERS: usize = 2;

pub(super) fn run(cfg: &ExperimentConfig, ctx: &mut SeedRun) -> Result<()> {
    let spec = cfg.bias_spec();
    let text = spec.text.clone();
    let mcfg = cfg.model.apply(ModelConfig::classifier(
        text.vocab_size(),
        text.max_len + MARKERS,
        ctx.seed,
    ));
    let model = Model::new(mcfg)?;
    let rng = ctx.rng();
    let corpus = |protected: &str, balanced: &str, skew: f64, size: usize, tag: u64| {
        make_bias_corpus(&BiasCorpusSpec {
            target_attr: "sentiment".into(),
            protected_attr: protected.into(),
            skew,
            balanced_attr: Some(balanced.into()),
            size,
            seed: rng.fork(tag).next_u64(),
            text: text.clone(),
        })
    };
    let (a0, a1) = (&spec.attributes[0], &spec.attributes[1]);

    let base = if spec.pretrain_size > 0 {
        let pre = corpus(a0, a1, 0.5, spec.pretrain_size, 1)?;
        let pcfg = ctx.train_config(cfg.pretrain_config(model.arch()), 1);
        model.train(&model.init(), Corpus::Labeled(&pre), &pcfg, None)?.params
    } else {
        model.init()
    };
    ctx.save_checkpoint("base", &model, &base)?;
    // validation with labels independent of both attributes
    let val = corpus(a0, a1, 0.5, spec.val_size, 2)?;

    let mut trained = Vec::new();
    let mut train_sets = Vec::new();
    for (i, attr) in spec.attributes.iter().enumerate() {
        let other = &spec.attributes[1 - i];
        let data = corpus(attr, other, spec.skew, spec.train_size, 10 + i as u64)?;
        let tcfg = ctx.train_config(cfg.train_config(model.arch()), 10 + i as u64);
        let out = model.train(&base, Corpus::Labeled(&data), &tcfg, None)?;
        let id = format!("model_{}", letter(i));
        ctx.save_trace(&id, &out.trace)?;
        ctx.save_checkpoint(&id, &model, &out.params)?;
        trained.push((id, out.params));
        train_sets.push(data);
    }

    let eval = |params: &ParameterSet| -> Result<Vec<UtilizationRecord>> {
        let mut recs = Vec::new();
        for attr in &spec.attributes {
            let r = bias_report(&model, params, &val, attr)?;
            let rec = |metric: &str, value: f64| UtilizationRecord {
                dataset_id: format!("val-{attr}"),
                task_id: "sentiment".into(),
                value,
                metric: metric.into(),
            };
            recs.push(rec("dp", r.dp));
            recs.push(rec("gap_rms", r.gap_rms));
            if attr == a0 {
                recs.push(UtilizationRecord {
                    dataset_id: "val".into(),
                    task_id: "sentiment".into(),
                    value: r.accuracy,
                    metric: "accuracy".into(),
                });
            }
        }
        Ok(recs)
    };

    ctx.push_records("base", &eval(&base)?, None);
    let mut individual = Vec::new();
    for (id, params) in &trained {
        let recs = eval(params)?;
        ctx.push_records(id, &recs, None);
        individual.push(recs);
    }
    if spec.include_full {
        let mut all: Vec<LabeledExample> = train_sets.concat();
        rng.fork(500).shuffle(&mut all);
        let tcfg = ctx.train_config(cfg.train_config(model.arch()), 9);
        let out = model.train(&base, Corpus::Labeled(&all), &tcfg, None)?;
        ctx.save_checkpoint("full", &model, &out.params)?;
        ctx.push_records("full", &eval(&out.params)?, None);
    }

    let (pa, pb) = (&trained[0].1, &trained[1].1);
    match cfg.kind {
        ExperimentKind::BiasFuse => {
            let w = FusionWeights::new(vec![spec.alpha, 1.0 - spec.alpha])?;
            let fused = fuse(&[pa, pb], &w)?;
            ctx.save_checkpoint("fused", &model, &fused)?;
            let recs = eval(&fused)?;
            let coords: Vec<f64> = w.into();
            ctx.push_records("fused", &recs, Some(&coords));
            ctx.push_bounds("fused", &individual, &recs, &coords)?;
        }
        ExperimentKind::BiasInterp => {
            for (k, p) in interpolate_pair(pa, pb, cfg.sweep.steps)?.iter().enumerate() {
                let id = format!("point-{k}");
                let recs = eval(&p.params)?;
                ctx.push_records(&id, &recs, Some(&p.coordinates));
                if p.coordinates.iter().all(|&c| c != 1.0) {
                    ctx.push_bounds(&id, &individual, &recs, &p.coordinates)?;
                }
            }
        }
        _ => unreachable!("not a bias experiment"),
    }
    Ok(())
}
