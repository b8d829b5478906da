use crate::data::{inject_shortcut_mix, LabeledExample, MixedShortcutBundle, ShortcutKind};
use crate::fisher::{build_probe_set, empirical_fisher, fisher_overlap, normalize_unit_trace};
use crate::fusion::{fuse, interpolate_pair, matched_random, simplex_grid, FusionWeights, SweepPoint};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, bounds_report, UtilizationRecord};
use crate::nn::{Corpus, Model, ModelConfig};
use crate::params::ParameterSet;

use super::config::{ExperimentConfig, ExperimentKind};
use super::{letter, SeedRun};

/// Specials inserted per example at most (MT) plus one decoy.
const MAX_INSERTED: usize = 6;

struct Trained {
    id: String,
    params: ParameterSet,
    bundle: Option<MixedShortcutBundle>,
}

pub(super) fn run(cfg: &ExperimentConfig, ctx: &mut SeedRun) -> Result<()> {
    let spec = cfg.shortcut_spec();
    let text = &spec.text;
    let special = text.special_tokens();
    let mcfg = cfg.model.apply(ModelConfig::classifier(
        text.vocab_size(),
        text.max_len + MAX_INSERTED,
        ctx.seed,
    ));
    let model = Model::new(mcfg)?;
    let rng = ctx.rng();

    let base = if spec.pretrain_size > 0 {
        let corpus = text.corpus(spec.pretrain_size, &mut rng.fork(1));
        let pcfg = ctx.train_config(cfg.pretrain_config(model.arch()), 1);
        model.train(&model.init(), Corpus::Labeled(&corpus), &pcfg, None)?.params
    } else {
        model.init()
    };
    ctx.save_checkpoint("base", &model, &base)?;

    let mut trained: Vec<Trained> = Vec::new();
    for (i, ms) in spec.models.iter().enumerate() {
        let Some(kinds) = ms.kinds() else { continue };
        let id = format!("model_{}", letter(i));
        let i = i as u64;
        let train_src = text.corpus(spec.train_size, &mut rng.fork(100 + i));
        let held_src = text.corpus(spec.heldout_size, &mut rng.fork(200 + i));
        let bundle = inject_shortcut_mix(&train_src, &held_src, kinds, &special, &spec.inject, &mut rng.fork(300 + i))?;
        let tcfg = ctx.train_config(cfg.train_config(model.arch()), 10 + i);
        let monitor = bundle.synthetic_all();
        let out = model.train(&base, Corpus::Labeled(&bundle.train_set()), &tcfg, Some(&monitor))?;
        ctx.save_trace(&id, &out.trace)?;
        ctx.save_checkpoint(&id, &model, &out.params)?;
        trained.push(Trained {
            id,
            params: out.params,
            bundle: Some(bundle),
        });
    }
    let fitted: Vec<ParameterSet> = trained.iter().map(|t| t.params.clone()).collect();
    for (i, ms) in spec.models.iter().enumerate() {
        if ms.is_random() {
            let params = matched_random(&base, &fitted, &mut rng.fork(400 + i as u64))?;
            trained.insert(
                i.min(trained.len()),
                Trained {
                    id: format!("model_{}", letter(i)),
                    params,
                    bundle: None,
                },
            );
        }
    }

    // synthetic sets come from the first model carrying each kind
    let mut datasets: Vec<(String, Vec<LabeledExample>)> = Vec::new();
    for t in &trained {
        if let Some(b) = &t.bundle {
            for (kind, set) in &b.synthetic_val {
                let name = format!("synthetic-{kind}");
                if !datasets.iter().any(|(n, _)| *n == name) {
                    datasets.push((name, set.clone()));
                }
            }
        }
    }
    let n_synthetic = datasets.len();
    for t in &trained {
        if let Some(b) = &t.bundle {
            datasets.push((format!("original-{}", &t.id[6..]), b.original_val.clone()));
        }
    }

    let eval = |params: &ParameterSet| -> Result<Vec<UtilizationRecord>> {
        datasets
            .iter()
            .map(|(name, data)| accuracy(&model, params, data, name, "sentiment"))
            .collect()
    };

    let base_recs = eval(&base)?;
    ctx.push_records("base", &base_recs, None);
    let mut individual = Vec::new();
    for t in &trained {
        let recs = eval(&t.params)?;
        ctx.push_records(&t.id, &recs, None);
        individual.push(recs);
    }
    // each model on its own original set, averaged
    let own: Vec<f64> = trained
        .iter()
        .zip(&individual)
        .filter(|(t, _)| t.bundle.is_some())
        .map(|(t, recs)| {
            let name = format!("original-{}", &t.id[6..]);
            recs.iter().find(|r| r.dataset_id == name).expect("own set").value
        })
        .collect();
    ctx.push("individuals", "accuracy", "original-own", own.iter().sum::<f64>() / own.len() as f64, None);

    if spec.include_full && cfg.kind != ExperimentKind::FisherOverlap {
        let mut all: Vec<LabeledExample> = Vec::new();
        let mut monitor: Vec<LabeledExample> = Vec::new();
        for b in trained.iter().filter_map(|t| t.bundle.as_ref()) {
            all.extend(b.train_set());
            monitor.extend(b.synthetic_all());
        }
        rng.fork(500).shuffle(&mut all);
        let tcfg = ctx.train_config(cfg.train_config(model.arch()), 9);
        let out = model.train(&base, Corpus::Labeled(&all), &tcfg, Some(&monitor))?;
        ctx.save_checkpoint("full", &model, &out.params)?;
        let recs = eval(&out.params)?;
        push_with_mean(ctx, "full", &recs, n_synthetic, None);
    }

    match cfg.kind {
        ExperimentKind::ShortcutInterp => {
            let points: Vec<SweepPoint> = match cfg.sweep.resolution {
                Some(res) => simplex_grid([&trained[0].params, &trained[1].params, &trained[2].params], res)?,
                None => interpolate_pair(&trained[0].params, &trained[1].params, cfg.sweep.steps)?,
            };
            for (k, p) in points.iter().enumerate() {
                let id = format!("point-{k}");
                let recs = eval(&p.params)?;
                push_with_mean(ctx, &id, &recs, n_synthetic, Some(&p.coordinates));
                let corner = p.coordinates.iter().any(|&c| c == 1.0);
                if !corner {
                    ctx.push_bounds(&id, &individual, &recs, &p.coordinates)?;
                }
            }
        }
        ExperimentKind::ShortcutFuseN => {
            let w = match &cfg.sweep.alphas {
                Some(a) => FusionWeights::new(a.clone())?,
                None => FusionWeights::uniform(trained.len())?,
            };
            let models: Vec<&ParameterSet> = trained.iter().map(|t| &t.params).collect();
            let fused = fuse(&models, &w)?;
            ctx.save_checkpoint("fused", &model, &fused)?;
            let recs = eval(&fused)?;
            let coords: Vec<f64> = w.into();
            push_with_mean(ctx, "fused", &recs, n_synthetic, Some(&coords));
            ctx.push_bounds("fused", &individual, &recs, &coords)?;
        }
        ExperimentKind::FisherOverlap => fisher_rows(cfg, ctx, &model, &base, &trained)?,
        _ => unreachable!("not a shortcut experiment"),
    }
    Ok(())
}

/// Pushes `recs` plus the mean over the original-task sets.
fn push_with_mean(ctx: &mut SeedRun, id: &str, recs: &[UtilizationRecord], n_synthetic: usize, coords: Option<&[f64]>) {
    ctx.push_records(id, recs, coords);
    let originals = &recs[n_synthetic..];
    if !originals.is_empty() {
        let mean = originals.iter().map(|r| r.value).sum::<f64>() / originals.len() as f64;
        ctx.push(id, "accuracy", "original-mean", mean, coords.map(<[f64]>::to_vec));
    }
}

fn fisher_rows(
    cfg: &ExperimentConfig,
    ctx: &mut SeedRun,
    model: &Model,
    base: &ParameterSet,
    trained: &[Trained],
) -> Result<()> {
    let spec = cfg.shortcut_spec();
    let fspec = cfg.fisher_spec();
    let special = spec.text.special_tokens();
    let rng = ctx.rng().fork(600);
    let source = spec.text.corpus(fspec.probe_size.max(spec.heldout_size), &mut rng.fork(1));
    let n = fspec.probe_size;
    let clean = build_probe_set(&source, None, &special, n, &mut rng.fork(2))?;
    if trained.len() != 2 {
        return Err(Error::InvalidConfig("fisher-overlap compares exactly two models".into()));
    }
    // each model is probed with its first shortcut kind
    let kinds: Vec<ShortcutKind> = trained
        .iter()
        .map(|t| t.bundle.as_ref().expect("trained").kinds[0])
        .collect();
    let probes: Vec<Vec<LabeledExample>> = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| build_probe_set(&source, Some(k), &special, n, &mut rng.fork(10 + i as u64)))
        .collect::<Result<_>>()?;

    let fim = |params: &ParameterSet, probe: &[LabeledExample], id: &str| {
        normalize_unit_trace(&empirical_fisher(model, params, probe, id)?)
    };
    let (a, b) = (&trained[0], &trained[1]);
    let pair = format!("{}~{}", a.id, b.id);
    let clean_overlap = fisher_overlap(&fim(&a.params, &clean, "clean")?, &fim(&b.params, &clean, "clean")?)?;
    ctx.push(&pair, "fisher_overlap", "clean", clean_overlap, None);
    let fa = fim(&a.params, &probes[0], &format!("shortcut-{}", kinds[0]))?;
    let fb = fim(&b.params, &probes[1], &format!("shortcut-{}", kinds[1]))?;
    ctx.push(&pair, "fisher_overlap", "shortcut", fisher_overlap(&fa, &fb)?, None);

    if fspec.include_random {
        let fitted = [a.params.clone(), b.params.clone()];
        let random = matched_random(base, &fitted, &mut rng.fork(3))?;
        let fr_clean = fim(&random, &clean, "clean")?;
        for (t, (probe, kind)) in trained.iter().zip(probes.iter().zip(&kinds)) {
            let id = format!("{}~random", t.id);
            let own_clean = fim(&t.params, &clean, "clean")?;
            ctx.push(&id, "fisher_overlap", "clean", fisher_overlap(&own_clean, &fr_clean)?, None);
            let own = fim(&t.params, probe, "shortcut")?;
            let rnd = fim(&random, probe, "shortcut")?;
            ctx.push(&id, "fisher_overlap", &format!("shortcut-{kind}"), fisher_overlap(&own, &rnd)?, None);
        }
    }
    Ok(())
}

impl SeedRun {
    /// Bounds of every dataset's fused value against the individual models.
    pub(super) fn push_bounds(
        &mut self,
        id: &str,
        individual: &[Vec<UtilizationRecord>],
        fused: &[UtilizationRecord],
        coords: &[f64],
    ) -> Result<()> {
        for (d, rec) in fused.iter().enumerate() {
            let ind: Vec<UtilizationRecord> = individual.iter().map(|recs| recs[d].clone()).collect();
            let b = bounds_report(&ind, rec)?;
            let c = Some(coords.to_vec());
            self.push(id, "bounds_min", &rec.dataset_id, b.min, c.clone());
            self.push(id, "bounds_max", &rec.dataset_id, b.max, c.clone());
            self.push(id, "bounds_within", &rec.dataset_id, f64::from(u8::from(b.within)), c);
        }
        Ok(())
    }
}
