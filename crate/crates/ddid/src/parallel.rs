//! Rayon drivers for the bootstrap and Monte Carlo loops. Replicates are
//! seeded by index and collected in index order, so results do not depend on
//! the number of threads.

use std::collections::BTreeMap;

use ddid_core::inference::{
    bootstrap_replicate, influence_terms, mc_reduce, mc_replication, reduce, run_pipeline, BootstrapConfig,
    BootstrapMethod, BootstrapReport, EstimateKey, McRep, McRow, PipelineResult, PipelineSpec,
};
use ddid_core::moments::Sample;
use ddid_core::simulate::DgpConfig;
use rayon::prelude::*;

use crate::AppError;

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, AppError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| AppError::Config(format!("thread pool: {e}")))
}

/// Point estimates plus a bootstrap whose replicates run in parallel.
pub fn bootstrap(
    sample: &Sample,
    spec: &PipelineSpec,
    config: &BootstrapConfig,
) -> ddid_core::Result<(PipelineResult, BootstrapReport)> {
    config.validate()?;
    let multiplier = config.method == BootstrapMethod::MultiplierRademacher;
    let mut spec = spec.clone();
    spec.options.keep_unit_terms |= multiplier;
    let point = run_pipeline(sample, &spec);
    let influence = multiplier.then(|| influence_terms(sample, &spec, &point));
    let reps: Vec<BTreeMap<EstimateKey, f64>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|r| bootstrap_replicate(sample, &spec, &point, influence.as_ref(), config, r))
        .collect();
    let report = reduce(&point, &reps, config);
    Ok((point, report))
}

/// Monte Carlo study with replications spread over the pool.
pub fn mc_study(
    dgp: &DgpConfig,
    spec: &PipelineSpec,
    boot: Option<&BootstrapConfig>,
    replications: usize,
    seed: u64,
) -> (Vec<McRep>, BTreeMap<EstimateKey, McRow>) {
    let reps: Vec<McRep> = (0..replications as u64)
        .into_par_iter()
        .map(|r| mc_replication(dgp, spec, boot, seed, r))
        .collect();
    let rows = mc_reduce(&reps);
    (reps, rows)
}
