use crate::data::{make_mem_corpora, MemCorpusBundle, TokenId};
use crate::error::Result;
use crate::fusion::{fuse, FusionWeights};
use crate::memorization::{alr, perplexity};
use crate::metrics::UtilizationRecord;
use crate::nn::{Corpus, Model, ModelConfig};
use crate::params::ParameterSet;

use super::config::ExperimentConfig;
use super::{letter, SeedRun};

pub(super) fn run(cfg: &ExperimentConfig, ctx: &mut SeedRun) -> Result<()> {
    let spec = cfg.memorize_spec();
    let mcfg = cfg.model.apply(ModelConfig::language_model(
        spec.arch,
        spec.vocab_size,
        spec.block_len,
        ctx.seed,
    ));
    let model = Model::new(mcfg)?;
    let rng = ctx.rng();
    let seed = ctx.seed;
    let corpora = make_mem_corpora(&spec.corpus_spec(), &mut rng.fork(1))?;

    let base = if spec.pretrain_blocks > 0 {
        let mut r = rng.fork(2);
        let pre: Vec<Vec<TokenId>> = (0..spec.pretrain_blocks)
            .map(|_| {
                (0..spec.block_len)
                    .map(|_| 1 + r.below(spec.vocab_size - 1) as TokenId)
                    .collect()
            })
            .collect();
        let pcfg = ctx.train_config(cfg.pretrain_config(model.arch()), 1);
        model.train(&model.init(), Corpus::Blocks(&pre), &pcfg, None)?.params
    } else {
        model.init()
    };
    ctx.save_checkpoint("base", &model, &base)?;

    let mut datasets: Vec<(String, Vec<Vec<TokenId>>)> = corpora
        .unshared
        .iter()
        .enumerate()
        .map(|(i, u)| (letter(i).to_string(), u.clone()))
        .collect();
    datasets.push(("shared".into(), corpora.shared.clone()));

    let eval = |params: &ParameterSet| -> Result<Vec<UtilizationRecord>> {
        let mut recs = Vec::new();
        for (name, data) in &datasets {
            recs.push(UtilizationRecord {
                dataset_id: name.clone(),
                task_id: "memorization".into(),
                value: alr(&model, data, params, &base, &spec.energy, seed)?,
                metric: "alr".into(),
            });
        }
        recs.push(UtilizationRecord {
            dataset_id: "val".into(),
            task_id: "memorization".into(),
            value: perplexity(&model, params, &corpora.validation, &spec.energy, seed)?,
            metric: "ppl".into(),
        });
        Ok(recs)
    };

    ctx.push_records("base", &eval(&base)?, None);
    let train_cfg = cfg.train_config(model.arch());
    let mut epoch_variants = vec![None];
    epoch_variants.extend(spec.epochs_sweep.iter().map(|&e| Some(e)));
    for epochs in epoch_variants {
        let suffix = epochs.map(|e| format!("@epochs={e}")).unwrap_or_default();
        let mut tcfg = train_cfg.clone();
        if let Some(e) = epochs {
            tcfg.epochs = e;
        }
        let trained = train_all(&model, &base, &corpora, &tcfg, ctx)?;
        let mut individual = Vec::new();
        for (i, params) in trained.iter().enumerate() {
            let id = format!("model_{}{suffix}", letter(i));
            if epochs.is_none() {
                ctx.save_checkpoint(&id, &model, params)?;
            }
            let recs = eval(params)?;
            ctx.push_records(&id, &recs, None);
            individual.push(recs);
        }
        let w = FusionWeights::uniform(trained.len())?;
        let fused = fuse(&trained, &w)?;
        let recs = eval(&fused)?;
        let coords: Vec<f64> = w.into();
        let id = format!("fused{suffix}");
        ctx.push_records(&id, &recs, Some(&coords));
        ctx.push_bounds(&id, &individual, &recs, &coords)?;
        if epochs.is_some() {
            continue;
        }
        ctx.save_checkpoint("fused", &model, &fused)?;
        for &m in &spec.fuse_counts {
            let w = FusionWeights::uniform(m)?;
            let partial = fuse(&trained[..m], &w)?;
            let mut coords: Vec<f64> = w.into();
            coords.resize(trained.len(), 0.0);
            ctx.push_records(&format!("fused@n={m}"), &eval(&partial)?, Some(&coords));
        }
        if spec.include_full {
            let mut all: Vec<Vec<TokenId>> = corpora.corpora.concat();
            rng.fork(500).shuffle(&mut all);
            let fcfg = ctx.train_config(tcfg.clone(), 9);
            let full = model.train(&base, Corpus::Blocks(&all), &fcfg, None)?.params;
            ctx.save_checkpoint("full", &model, &full)?;
            ctx.push_records("full", &eval(&full)?, None);
        }
    }
    Ok(())
}

fn train_all(
    model: &Model,
    base: &ParameterSet,
    corpora: &MemCorpusBundle,
    tcfg: &crate::nn::TrainConfig,
    ctx: &SeedRun,
) -> Result<Vec<ParameterSet>> {
    corpora
        .corpora
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let cfg = ctx.train_config(tcfg.clone(), 10 + i as u64);
            Ok(model.train(base, Corpus::Blocks(c), &cfg, None)?.params)
        })
        .collect()
}
