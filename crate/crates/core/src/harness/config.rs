use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitSpec;
use crate::optim::{Method, OptimizerConfig};
use crate::perturb::{Norm, PerturbationKind, PerturbationSpec, RegPenaltySpec, Scope};
use crate::rng::Rng;

pub const DEFAULT_MAX_EPOCHS: usize = 1000;
pub const DEFAULT_PATIENCE: usize = 20;

fn default_max_epochs() -> usize {
    DEFAULT_MAX_EPOCHS
}

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}

fn default_perturbation() -> PerturbationSpec {
    PerturbationSpec::none()
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    /// `init.seed` is ignored; initialization draws from `seed`.
    pub init: InitSpec,
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub penalty: Option<RegPenaltySpec>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub hidden_units: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl HyperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 {
            return Err(Error::contract("hidden_units must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be >= 1"));
        }
        self.init.validate(self.hidden_units)?;
        self.perturbation.validate()?;
        if let Some(p) = &self.penalty {
            p.validate()?;
        }
        self.optimizer.validate()
    }

    /// Small, fast defaults: plain network, rmsprop, modest width.
    pub fn desk(hidden_units: usize, seed: u64) -> Self {
        HyperConfig {
            init: InitSpec {
                sigma_hh: 1e-4,
                sigma_ih: 0.1,
                sparsify_k: 15.min(hidden_units.max(1)),
                rho_target: 1.1,
                seed: 0,
            },
            perturbation: PerturbationSpec::none(),
            penalty: None,
            optimizer: OptimizerConfig::new(Method::Rmsprop, 0.9, 1e-3),
            batch_size: 27,
            hidden_units,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed,
        }
    }
}

/// The regularization families compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    Plain,
    /// Norm-based penalty.
    Nbr,
    /// Additive recurrent noise, per time step.
    N,
    /// Additive recurrent noise, per sequence.
    Ns,
    /// Multiplicative recurrent noise, per time step.
    Mn,
    /// Multiplicative recurrent noise, per sequence.
    Mns,
    /// DropConnect on recurrent weights, per time step.
    Do,
    /// DropConnect on recurrent weights, per sequence.
    Dos,
    /// Additive noise on input and output weights.
    Ff,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 9] = [
        ModelVariant::Plain,
        ModelVariant::Nbr,
        ModelVariant::N,
        ModelVariant::Ns,
        ModelVariant::Mn,
        ModelVariant::Mns,
        ModelVariant::Do,
        ModelVariant::Dos,
        ModelVariant::Ff,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::Plain => "Plain-RNN",
            ModelVariant::Nbr => "RNN-NBR",
            ModelVariant::N => "RNN-N",
            ModelVariant::Ns => "RNN-NS",
            ModelVariant::Mn => "RNN-MN",
            ModelVariant::Mns => "RNN-MNS",
            ModelVariant::Do => "RNN-DO",
            ModelVariant::Dos => "RNN-DOS",
            ModelVariant::Ff => "RNN-FF",
        }
    }

    /// Perturbation of this family with the given strength (σ or drop_p).
    pub fn perturbation(self, strength: f64) -> PerturbationSpec {
        use ModelVariant::*;
        match self {
            Plain | Nbr => PerturbationSpec::none(),
            N => PerturbationSpec::additive(Scope::PerTimeStep, strength),
            Ns => PerturbationSpec::additive(Scope::PerSequence, strength),
            Mn => PerturbationSpec::multiplicative(Scope::PerTimeStep, strength),
            Mns => PerturbationSpec::multiplicative(Scope::PerSequence, strength),
            Do => PerturbationSpec::dropconnect(Scope::PerTimeStep, strength),
            Dos => PerturbationSpec::dropconnect(Scope::PerSequence, strength),
            Ff => PerturbationSpec::feedforward(strength),
        }
    }

    pub fn has_penalty(self) -> bool {
        self == ModelVariant::Nbr
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        let key = key.trim_start_matches("rnn-").trim_end_matches("-rnn");
        Ok(match key {
            "plain" => ModelVariant::Plain,
            "nbr" => ModelVariant::Nbr,
            "n" => ModelVariant::N,
            "ns" => ModelVariant::Ns,
            "mn" => ModelVariant::Mn,
            "mns" => ModelVariant::Mns,
            "do" => ModelVariant::Do,
            "dos" => ModelVariant::Dos,
            "ff" => ModelVariant::Ff,
            _ => return Err(Error::contract(format!("unknown model variant `{s}`"))),
        })
    }
}

/// Ranges sampled by random search. Discrete sets are sampled uniformly,
/// `log10_lambda` uniformly in log space, noise σ and drop_p uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub sigma_hh: Vec<f64>,
    pub sigma_ih: Vec<f64>,
    pub sparsify_k: Vec<usize>,
    pub rho_target: Vec<f64>,
    pub norms: Vec<Norm>,
    pub log10_lambda: (f64, f64),
    pub drop_p: (f64, f64),
    pub noise_sigma: (f64, f64),
    pub momentum: Vec<f64>,
    pub step_rate: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            sigma_hh: vec![1e-3, 1.0, 1e-4],
            sigma_ih: vec![1e-1, 1e-2, 1e-3],
            sparsify_k: vec![15, 25, 50],
            rho_target: vec![0.9, 1.0, 1.1],
            norms: vec![Norm::L1, Norm::L2],
            log10_lambda: (-4.0, -2.0),
            drop_p: (0.0, 1.0),
            noise_sigma: (0.01, 0.1),
            momentum: vec![0.9, 0.95, 0.99],
            step_rate: vec![1e-2, 1e-3, 1e-4],
            batch_size: vec![27, 81],
        }
    }
}

fn pick<T: Copy>(set: &[T], rng: &mut Rng, name: &str) -> Result<T> {
    set.choose(rng)
        .copied()
        .ok_or_else(|| Error::contract(format!("search range `{name}` is empty")))
}

fn uniform(range: (f64, f64), rng: &mut Rng) -> f64 {
    let (lo, hi) = range;
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl SearchSpace {
    /// One configuration for `variant`. Width, epoch budget, patience and the
    /// optimizer method come from `base`; `seed` becomes the trial seed.
    ///
    /// Sparsity is clamped to the hidden width so narrow desk-scale networks
    /// can share the table ranges.
    pub fn sample(&self, variant: ModelVariant, base: &HyperConfig, seed: u64, rng: &mut Rng) -> Result<HyperConfig> {
        let init = InitSpec {
            sigma_hh: pick(&self.sigma_hh, rng, "sigma_hh")?,
            sigma_ih: pick(&self.sigma_ih, rng, "sigma_ih")?,
            sparsify_k: pick(&self.sparsify_k, rng, "sparsify_k")?.min(base.hidden_units),
            rho_target: pick(&self.rho_target, rng, "rho_target")?,
            seed: 0,
        };
        let optimizer = OptimizerConfig {
            momentum: pick(&self.momentum, rng, "momentum")?,
            step_rate: pick(&self.step_rate, rng, "step_rate")?,
            ..base.optimizer
        };
        let batch_size = pick(&self.batch_size, rng, "batch_size")?;
        let (perturbation, penalty) = if variant.has_penalty() {
            let norm = pick(&self.norms, rng, "norms")?;
            let lambda = 10f64.powf(uniform(self.log10_lambda, rng));
            (PerturbationSpec::none(), Some(RegPenaltySpec { norm, lambda }))
        } else {
            let strength = match variant.perturbation(1.0).kind {
                PerturbationKind::Dropconnect => uniform(self.drop_p, rng),
                PerturbationKind::None => 0.0,
                _ => uniform(self.noise_sigma, rng),
            };
            (variant.perturbation(strength), None)
        };
        let cfg = HyperConfig {
            init,
            perturbation,
            penalty,
            optimizer,
            batch_size,
            seed,
            ..base.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
