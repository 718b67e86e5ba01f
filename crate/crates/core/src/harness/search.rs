use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{HyperConfig, ModelVariant, SearchSpace};
use super::presets::ConfigColumn;
use super::train::train;
use crate::data::ChunkedData;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub config: HyperConfig,
    pub column: ConfigColumn,
    pub best_valid_ce: f64,
    pub test_ce: Option<f64>,
    pub epochs: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub variant: ModelVariant,
    pub master_seed: u64,
    /// Completed trials ordered by validation cross-entropy, best first.
    /// Diverged trials keep the best epoch reached before divergence.
    pub ranking: Vec<TrialResult>,
    pub best: Option<TrialResult>,
    /// Mean test cross-entropy over the ranked trials.
    pub mean_test_ce: Option<f64>,
    pub median_valid_ce: Option<f64>,
    pub diverged_trials: usize,
    pub n_trials: usize,
}

/// Runs a thread pool of `jobs` workers; `None` uses rayon's default.
pub(crate) fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::contract(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Samples and trains `n_trials` configurations of `variant`.
///
/// Trial seeds are drawn up front from the master seed, so the report does
/// not depend on `jobs`.
pub fn random_search(
    space: &SearchSpace,
    variant: ModelVariant,
    base: &HyperConfig,
    n_trials: usize,
    data: &ChunkedData,
    jobs: Option<usize>,
) -> Result<SearchReport> {
    if n_trials == 0 {
        return Err(Error::contract("n_trials must be >= 1"));
    }
    let mut r = rng::seeded_stream(base.seed, stream::SEARCH);
    let configs = (0..n_trials)
        .map(|_| {
            let seed = r.random();
            space.sample(variant, base, seed, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<Result<TrialResult>> = with_pool(jobs, || {
        configs
            .par_iter()
            .enumerate()
            .map(|(trial, cfg)| {
                let out = train(cfg, data)?;
                log::info!(
                    "trial {trial}: valid {:.4} after {} epochs{}",
                    out.trace.best().valid_ce,
                    out.trace.records.len() - 1,
                    if out.trace.diverged { " (diverged)" } else { "" }
                );
                Ok(TrialResult {
                    trial,
                    config: cfg.clone(),
                    column: ConfigColumn::from_config(cfg),
                    best_valid_ce: out.trace.best().valid_ce,
                    test_ce: out.trace.test_ce,
                    epochs: out.trace.records.len() - 1,
                    diverged: out.trace.diverged,
                })
            })
            .collect()
    })?;
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(variant, base.seed, results))
}

fn summarize(variant: ModelVariant, master_seed: u64, results: Vec<TrialResult>) -> SearchReport {
    let n_trials = results.len();
    let diverged_trials = results.iter().filter(|t| t.diverged).count();
    let mut ranking: Vec<TrialResult> = results.into_iter().filter(|t| t.best_valid_ce.is_finite()).collect();
    ranking.sort_by(|a, b| a.best_valid_ce.total_cmp(&b.best_valid_ce).then(a.trial.cmp(&b.trial)));
    let tests: Vec<f64> = ranking.iter().filter_map(|t| t.test_ce).collect();
    let mean_test_ce = (!tests.is_empty()).then(|| tests.iter().sum::<f64>() / tests.len() as f64);
    let median_valid_ce = (!ranking.is_empty()).then(|| {
        let v: Vec<f64> = ranking.iter().map(|t| t.best_valid_ce).collect();
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        }
    });
    if ranking.is_empty() {
        log::warn!("no trial produced a finite validation cross-entropy");
    }
    SearchReport {
        variant,
        master_seed,
        best: ranking.first().cloned(),
        ranking,
        mean_test_ce,
        median_valid_ce,
        diverged_trials,
        n_trials,
    }
}
