//! Declarative experiments: build corpora, train a shared base and its
//! fine-tunes, fuse them, and tabulate what each model still knows.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::checkpoint::{self, ContainerHeader};
use crate::error::{Error, Result};
use crate::metrics::UtilizationRecord;
use crate::nn::{write_trace_csv, Model, TraceRow, TrainConfig};
use crate::params::ParameterSet;
use crate::rng::Rng;

mod bias;
mod config;
mod memorize;
mod shortcut;
mod table;

pub use config::{
    BiasSpec, ExperimentConfig, ExperimentKind, FisherSpec, MemorizeSpec, ModelOverrides, ModelSpec, ShortcutSpec,
    SweepSpec,
};
pub use table::{config_hash, emit, ErrorRow, Format, Provenance, ResultRow, ResultTable, Series};

/// Environment variable capping the worker threads of [`run`].
pub const THREADS_ENV: &str = "FUSELAB_THREADS";

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// State of one seed's run: its rows and its staging directory.
pub(crate) struct SeedRun {
    seed: u64,
    rows: Vec<ResultRow>,
    dir: Option<PathBuf>,
}

impl SeedRun {
    fn new(seed: u64, output_dir: Option<&PathBuf>) -> Self {
        Self {
            seed,
            rows: Vec::new(),
            dir: output_dir.map(|d| d.join(format!("seed-{seed}"))),
        }
    }

    fn rng(&self) -> Rng {
        Rng::new(self.seed, 0xE4_9E41)
    }

    /// `base` with a seed derived from the run seed and `tag`.
    fn train_config(&self, mut base: TrainConfig, tag: u64) -> TrainConfig {
        base.seed = self.rng().fork(0x7A1_0000 + tag).next_u64();
        base
    }

    fn push(&mut self, id: &str, metric: &str, dataset: &str, value: f64, coordinates: Option<Vec<f64>>) {
        self.rows.push(ResultRow {
            id: id.into(),
            metric: metric.into(),
            dataset: dataset.into(),
            value,
            seed: self.seed,
            coordinates,
        });
    }

    fn push_records(&mut self, id: &str, recs: &[UtilizationRecord], coords: Option<&[f64]>) {
        for r in recs {
            self.push(id, &r.metric, &r.dataset_id, r.value, coords.map(<[f64]>::to_vec));
        }
    }

    fn save_checkpoint(&self, id: &str, model: &Model, params: &ParameterSet) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir)?;
            let header = ContainerHeader::parameters(model.arch().tag(), params);
            checkpoint::save(dir.join(format!("{id}.ckpt")), &header, params)?;
        }
        Ok(())
    }

    fn save_trace(&self, id: &str, trace: &[TraceRow]) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir)?;
            write_trace_csv(dir.join(format!("{id}.trace.csv")), trace)?;
        }
        Ok(())
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<ResultRow>> {
    let mut ctx = SeedRun::new(seed, config.output_dir.as_ref());
    match config.kind {
        ExperimentKind::ShortcutInterp | ExperimentKind::ShortcutFuseN | ExperimentKind::FisherOverlap => {
            shortcut::run(config, &mut ctx)?
        }
        ExperimentKind::BiasInterp | ExperimentKind::BiasFuse => bias::run(config, &mut ctx)?,
        ExperimentKind::Memorize => memorize::run(config, &mut ctx)?,
    }
    if let Some(r) = ctx.rows.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::InvalidQuery(format!(
            "non-finite {} of {} on {}",
            r.metric, r.id, r.dataset
        )));
    }
    Ok(ctx.rows)
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs every seed of `config`. A failing seed contributes an error row and
/// no result rows; the other seeds are unaffected. Rows are merged in seed
/// order, so the table does not depend on scheduling.
pub fn run(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let work = || -> Vec<Result<Vec<ResultRow>>> {
        config.seeds.par_iter().map(|&s| run_seed(config, s)).collect()
    };
    let results = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (&seed, r) in config.seeds.iter().zip(results) {
        match r {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(ErrorRow {
                seed,
                message: e.to_string(),
            }),
        }
    }
    Ok(ResultTable {
        rows,
        errors,
        provenance: Provenance::new(config),
    })
}
