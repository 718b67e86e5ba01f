use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::HyperConfig;
use super::search::with_pool;
use super::train::train;
use crate::data::ChunkedData;
use crate::error::{Error, Result};
use crate::perturb::{Norm, PerturbationKind, PerturbationSpec, RegPenaltySpec, Scope};

pub const DEFAULT_SWEEP_SEEDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    Sigma,
    DropP,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Sigma => "sigma",
            SweepAxis::DropP => "drop_p",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lambda" => Ok(SweepAxis::Lambda),
            "sigma" => Ok(SweepAxis::Sigma),
            "drop_p" | "dropout" | "dropout_p" => Ok(SweepAxis::DropP),
            other => Err(Error::contract(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    /// `base` with the swept quantity set to `value`. A base without the
    /// matching mechanism gets a default one (L2 penalty, per-time-step
    /// multiplicative noise, per-time-step DropConnect).
    pub fn apply(self, base: &HyperConfig, value: f64) -> HyperConfig {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Lambda => {
                let norm = base.penalty.map_or(Norm::L2, |p| p.norm);
                cfg.penalty = Some(RegPenaltySpec { norm, lambda: value });
            }
            SweepAxis::Sigma => {
                if base.perturbation.kind.is_noise() {
                    cfg.perturbation.sigma = value;
                } else {
                    cfg.perturbation = PerturbationSpec::multiplicative(Scope::PerTimeStep, value);
                }
            }
            SweepAxis::DropP => {
                if base.perturbation.kind == PerturbationKind::Dropconnect {
                    cfg.perturbation.drop_p = value;
                } else {
                    cfg.perturbation = PerturbationSpec::dropconnect(Scope::PerTimeStep, value);
                }
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_test_ce: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub stddev: f64,
    pub runs: Vec<f64>,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Kendall rank correlation between swept value and mean test
    /// cross-entropy; positive means error grows with the value.
    pub trend: Option<f64>,
}

impl SweepTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["value", "mean_test_ce", "stddev"])?;
        for r in &self.rows {
            w.write_record([r.value.to_string(), r.mean_test_ce.to_string(), r.stddev.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains one network per (value, seed) and reports the mean test
/// cross-entropy per value. Seeds are `base.seed, base.seed + 1, ...`.
pub fn sweep(
    axis: SweepAxis,
    values: &[f64],
    base: &HyperConfig,
    seeds: usize,
    data: &ChunkedData,
    jobs: Option<usize>,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::contract("sweep needs at least one value"));
    }
    if seeds == 0 {
        return Err(Error::contract("sweep needs at least one seed"));
    }
    if data.test.is_empty() {
        return Err(Error::data("sweep reports test cross-entropy but the test split is empty"));
    }
    let jobs_list: Vec<HyperConfig> = values
        .iter()
        .flat_map(|&v| {
            (0..seeds as u64).map(move |s| HyperConfig {
                seed: base.seed.wrapping_add(s),
                ..axis.apply(base, v)
            })
        })
        .collect();
    for cfg in &jobs_list {
        cfg.validate()?;
    }
    let outcomes: Vec<Result<(f64, bool)>> = with_pool(jobs, || {
        jobs_list
            .par_iter()
            .map(|cfg| {
                let out = train(cfg, data)?;
                Ok((out.trace.test_ce.unwrap_or(f64::NAN), out.trace.diverged))
            })
            .collect()
    })?;
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let rows: Vec<SweepRow> = values
        .iter()
        .zip(outcomes.chunks(seeds))
        .map(|(&value, runs)| {
            let ces: Vec<f64> = runs.iter().map(|r| r.0).filter(|c| c.is_finite()).collect();
            let n = ces.len() as f64;
            let mean = ces.iter().sum::<f64>() / n;
            let stddev = if ces.len() > 1 {
                (ces.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SweepRow {
                value,
                mean_test_ce: if ces.is_empty() { f64::NAN } else { mean },
                stddev,
                runs: runs.iter().map(|r| r.0).collect(),
                diverged: runs.iter().filter(|r| r.1).count(),
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.value, r.mean_test_ce)).collect();
    Ok(SweepTable {
        axis,
        trend: kendall_tau(&pairs),
        rows,
    })
}

/// Kendall's tau-a over pairs with finite coordinates; `None` with fewer
/// than two such pairs.
pub fn kendall_tau(pairs: &[(f64, f64)]) -> Option<f64> {
    let p: Vec<_> = pairs.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if p.len() < 2 {
        return None;
    }
    let mut score = 0.0;
    let mut count = 0.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            let s = (p[i].0 - p[j].0).signum() * (p[i].1 - p[j].1).signum();
            if (p[i].0 - p[j].0) != 0.0 && (p[i].1 - p[j].1) != 0.0 {
                score += s;
            }
            count += 1.0;
        }
    }
    Some(score / count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{chunk, synthesize, SyntheticConfig};

    fn setup() -> (ChunkedData, HyperConfig) {
        let d = synthesize(&SyntheticConfig::new(9, 20, 16, 1)).unwrap();
        let base = HyperConfig {
            max_epochs: 2,
            batch_size: 4,
            ..HyperConfig::desk(8, 21)
        };
        (chunk(&d, 8).unwrap(), base)
    }

    #[test]
    fn single_point_is_one_train() {
        let (data, base) = setup();
        let t = sweep(SweepAxis::Lambda, &[1e-3], &base, 1, &data, Some(1)).unwrap();
        let direct = train(&SweepAxis::Lambda.apply(&base, 1e-3), &data).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].mean_test_ce, direct.trace.test_ce.unwrap());
        assert_eq!(t.rows[0].stddev, 0.0);
        assert_eq!(t.trend, None);
    }

    #[test]
    fn zero_dropout_point_is_plain() {
        let (data, base) = setup();
        let t = sweep(SweepAxis::DropP, &[0.0], &base, 1, &data, None).unwrap();
        let plain = train(&base, &data).unwrap();
        assert_eq!(t.rows[0].mean_test_ce, plain.trace.test_ce.unwrap());
    }

    #[test]
    fn sigma_sweep_reports_trend_and_csv() {
        let (data, base) = setup();
        let t = sweep(SweepAxis::Sigma, &[0.01, 0.05, 0.1], &base, 2, &data, Some(2)).unwrap();
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows.iter().all(|r| r.runs.len() == 2));
        let tau = t.trend.unwrap();
        assert!((-1.0..=1.0).contains(&tau));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("value,mean_test_ce,stddev\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn kendall_tau_oracle() {
        let up = [(1.0, 1.0), (2.0, 2.0), (3.0, 5.0)];
        assert_eq!(kendall_tau(&up), Some(1.0));
        let down = [(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)];
        assert_eq!(kendall_tau(&down), Some(-1.0));
        // one discordant pair of three
        let mixed = [(1.0, 1.0), (2.0, 3.0), (3.0, 2.0)];
        assert!((kendall_tau(&mixed).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[(1.0, 1.0)]), None);
    }
}
