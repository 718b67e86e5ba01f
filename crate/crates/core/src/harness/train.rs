use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::HyperConfig;
use crate::data::{batch_from_chunks, batch_from_sequences, ChunkedData, NOTES};
use crate::error::{Error, Result};
use crate::grad::{bptt, Gradients};
use crate::init::{init_params, spectral_radius};
use crate::model::{evaluate, RnnParams, SequenceBatch, Shapes};
use crate::optim::OptimizerState;
use crate::perturb::{norm_penalty, sample_plan_seeded, PerturbationKind};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Clean-weight cross-entropy on the training chunks.
    pub train_ce: f64,
    pub valid_ce: f64,
    pub spectral_radius: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Epoch 0 is the untrained network.
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test_ce: Option<f64>,
    pub diverged: bool,
    pub divergence: Option<String>,
    pub updates: usize,
}

impl TrainingTrace {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_ce", "valid_ce", "spectral_radius", "seconds"])?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_ce.to_string(),
                r.valid_ce.to_string(),
                r.spectral_radius.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: TrainingTrace,
    /// Parameters of the epoch with the lowest validation cross-entropy.
    pub params: RnnParams,
}

struct EvalSets {
    train: SequenceBatch,
    valid: Option<SequenceBatch>,
    test: Option<SequenceBatch>,
}

impl EvalSets {
    fn new(data: &ChunkedData) -> Result<Self> {
        let train = batch_from_chunks(&data.train.iter().collect::<Vec<_>>())?;
        let valid = (!data.valid.is_empty())
            .then(|| batch_from_chunks(&data.valid.iter().collect::<Vec<_>>()))
            .transpose()?;
        let test = (!data.test.is_empty())
            .then(|| batch_from_sequences(&data.test.iter().collect::<Vec<_>>()))
            .transpose()?;
        Ok(EvalSets { train, valid, test })
    }

    /// (train, valid); validation falls back to the training chunks when the
    /// corpus has no validation split.
    fn measure(&self, params: &RnnParams) -> Result<(f64, f64)> {
        let train = evaluate(params, &self.train)?;
        let valid = match &self.valid {
            Some(v) => evaluate(params, v)?,
            None => train,
        };
        Ok((train, valid))
    }
}

/// Trains one network and returns its trace together with the parameters
/// that achieved the lowest validation cross-entropy.
///
/// Every update draws a fresh perturbation plan; all recorded cross-entropies
/// use clean weights. Training stops after `max_epochs`, after `patience`
/// epochs without validation improvement, or on divergence (the partial
/// trace is returned with `diverged` set).
pub fn train(config: &HyperConfig, data: &ChunkedData) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    let start = Instant::now();
    let shapes = Shapes::autoregressive(NOTES, config.hidden_units);
    let init = crate::init::InitSpec { seed: config.seed, ..config.init };
    let mut params = init_params(&init, shapes)?;
    let mut opt = OptimizerState::new(config.optimizer, &params)?;
    let sets = EvalSets::new(data)?;

    let mut shuffle_rng = rng::seeded_stream(config.seed, stream::SHUFFLE);
    let mut noise_rng = rng::seeded_stream(config.seed, stream::NOISE);
    let perturbed = config.perturbation.kind != PerturbationKind::None;

    let (train_ce, valid_ce) = sets.measure(&params)?;
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_ce,
        valid_ce,
        spectral_radius: spectral_radius(&params.w_hh)?.value,
        seconds: start.elapsed().as_secs_f64(),
    }];
    let mut best = (0usize, valid_ce, params.clone());
    let mut divergence = None;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(config.batch_size) {
            let chunks: Vec<_> = idx.iter().map(|&i| &data.train[i]).collect();
            let batch = batch_from_chunks(&chunks)?;
            let plan = if perturbed {
                let seed = noise_rng.random();
                Some(sample_plan_seeded(&config.perturbation, shapes, batch.steps(), seed)?)
            } else {
                None
            };
            let step = opt.step(&mut params, |p| {
                let (mut loss, mut g): (f64, Gradients) = bptt(p, &batch, plan.as_ref())?;
                if let Some(pen) = &config.penalty {
                    let (v, pg) = norm_penalty(p, pen);
                    loss += v;
                    g.add_assign(&pg);
                }
                Ok((loss, g))
            });
            match step {
                Ok(_) => {}
                Err(Error::Diverged(msg)) => {
                    divergence = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }

        let (train_ce, valid_ce) = sets.measure(&params)?;
        if !train_ce.is_finite() || !valid_ce.is_finite() {
            divergence = Some(format!("epoch {epoch}: non-finite cross-entropy"));
            break;
        }
        let rho = spectral_radius(&params.w_hh)?.value;
        records.push(EpochRecord {
            epoch,
            train_ce,
            valid_ce,
            spectral_radius: rho,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {train_ce:.4} valid {valid_ce:.4} rho {rho:.4}");
        if valid_ce < best.1 {
            best = (epoch, valid_ce, params.clone());
        } else if epoch - best.0 >= config.patience {
            log::debug!("no validation improvement for {} epochs; stopping", config.patience);
            break;
        }
    }

    let (best_epoch, _, best_params) = best;
    let test_ce = sets.test.as_ref().map(|t| evaluate(&best_params, t)).transpose()?;
    if let Some(msg) = &divergence {
        log::warn!("training diverged at {msg}");
    }
    Ok(TrainOutcome {
        trace: TrainingTrace {
            records,
            best_epoch,
            test_ce,
            diverged: divergence.is_some(),
            divergence,
            updates: opt.steps,
        },
        params: best_params,
    })
}
