//! Best published configurations per corpus and the reported test errors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{HyperConfig, ModelVariant, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE};
use crate::error::{Error, Result};
use crate::init::InitSpec;
use crate::optim::{Method, OptimizerConfig};
use crate::perturb::{Norm, RegPenaltySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    JsbChorales,
    Nottingham,
    PianoMidi,
    MuseData,
}

impl Corpus {
    pub const ALL: [Corpus; 4] = [Corpus::JsbChorales, Corpus::Nottingham, Corpus::PianoMidi, Corpus::MuseData];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Corpus::JsbChorales => "jsb",
            Corpus::Nottingham => "nottingham",
            Corpus::PianoMidi => "piano-midi",
            Corpus::MuseData => "musedata",
        })
    }
}

impl FromStr for Corpus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '.'], "-").as_str() {
            "jsb" | "jsb-chorales" | "jsbchorales" => Ok(Corpus::JsbChorales),
            "nottingham" => Ok(Corpus::Nottingham),
            "piano-midi" | "pianomidi" | "piano-midi-de" => Ok(Corpus::PianoMidi),
            "musedata" | "muse" => Ok(Corpus::MuseData),
            other => Err(Error::contract(format!("unknown corpus `{other}`"))),
        }
    }
}

/// One column of a best-configuration table. Also the layout used when
/// reporting the winner of a random search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigColumn {
    pub sigma_hh: f64,
    pub sigma_ih: f64,
    pub sparsify: usize,
    pub rho_limit: f64,
    pub regularizer: Option<Norm>,
    pub log10_lambda: Option<f64>,
    pub dropout_p: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub momentum: f64,
    pub step_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
}

impl ConfigColumn {
    pub fn from_config(c: &HyperConfig) -> Self {
        use crate::perturb::PerturbationKind as K;
        let p = &c.perturbation;
        ConfigColumn {
            sigma_hh: c.init.sigma_hh,
            sigma_ih: c.init.sigma_ih,
            sparsify: c.init.sparsify_k,
            rho_limit: c.init.rho_target,
            regularizer: c.penalty.map(|r| r.norm),
            log10_lambda: c.penalty.map(|r| r.lambda.log10()),
            dropout_p: (p.kind == K::Dropconnect).then_some(p.drop_p),
            noise_sigma: p.kind.is_noise().then_some(p.sigma),
            momentum: c.optimizer.momentum,
            step_rate: c.optimizer.step_rate,
            batch_size: c.batch_size,
            hidden: c.hidden_units,
        }
    }

    pub fn to_config(&self, variant: ModelVariant, seed: u64) -> HyperConfig {
        let strength = self.dropout_p.or(self.noise_sigma).unwrap_or(0.0);
        let penalty = match (variant.has_penalty(), self.regularizer, self.log10_lambda) {
            (true, Some(norm), Some(l)) => Some(RegPenaltySpec { norm, lambda: 10f64.powf(l) }),
            _ => None,
        };
        HyperConfig {
            init: InitSpec {
                sigma_hh: self.sigma_hh,
                sigma_ih: self.sigma_ih,
                sparsify_k: self.sparsify,
                rho_target: self.rho_limit,
                seed: 0,
            },
            perturbation: variant.perturbation(strength),
            penalty,
            optimizer: OptimizerConfig::new(Method::Rmsprop, self.momentum, self.step_rate),
            batch_size: self.batch_size,
            hidden_units: self.hidden,
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed,
        }
    }
}

// Columns: NBR, N, NS, MN, MNS, DO, DOS, FF.
struct Table {
    sigma_hh: [f64; 8],
    sigma_ih: [f64; 8],
    sparsify: [usize; 8],
    rho: [f64; 8],
    norm: Norm,
    log10_lambda: f64,
    /// DO, DOS
    dropout: [f64; 2],
    /// N, NS, MN, MNS, FF
    noise: [f64; 5],
    momentum: [f64; 8],
    step_rate: [f64; 8],
    batch: [usize; 8],
    hidden: usize,
}

const TABLES: [Table; 4] = [
    Table {
        sigma_hh: [1e-4, 1e-3, 1e-3, 1e-4, 1e-4, 1e-3, 1e-3, 1e-3],
        sigma_ih: [0.1, 0.1, 1e-3, 1e-2, 1e-3, 1e-2, 1e-3, 0.1],
        sparsify: [15, 50, 50, 50, 25, 25, 50, 15],
        rho: [1.1, 0.9, 1.0, 0.9, 0.9, 1.0, 1.0, 0.9],
        norm: Norm::L2,
        log10_lambda: -3.93,
        dropout: [0.92, 0.56],
        noise: [0.01, 0.04, 0.06, 0.01, 0.09],
        momentum: [0.9, 0.99, 0.9, 0.95, 0.9, 0.95, 0.95, 0.9],
        step_rate: [1e-3, 1e-4, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4],
        batch: [81, 27, 27, 81, 27, 81, 81, 81],
        hidden: 200,
    },
    Table {
        sigma_hh: [1e-4, 1e-4, 1e-3, 1e-4, 1e-4, 1e-3, 1e-3, 1e-4],
        sigma_ih: [0.1, 0.1, 1e-2, 1e-3, 1e-3, 1e-2, 0.1, 1e-3],
        sparsify: [15, 25, 25, 15, 25, 15, 25, 15],
        rho: [0.9, 1.1, 1.0, 1.0, 1.0, 0.9, 1.1, 1.1],
        norm: Norm::L2,
        log10_lambda: -3.77,
        dropout: [0.36, 0.78],
        noise: [0.01, 0.02, 0.02, 0.06, 0.05],
        momentum: [0.95, 0.95, 0.95, 0.95, 0.95, 0.9, 0.9, 0.95],
        step_rate: [1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-3, 1e-3, 1e-4],
        batch: [81, 27, 27, 27, 27, 81, 81, 27],
        hidden: 200,
    },
    Table {
        sigma_hh: [1e-4, 1e-3, 1e-3, 1e-4, 1e-4, 1e-3, 1e-4, 1e-4],
        sigma_ih: [1e-3, 0.1, 1e-3, 1e-3, 0.1, 1e-3, 1e-2, 0.1],
        sparsify: [15, 25, 15, 15, 15, 15, 25, 50],
        rho: [0.9, 1.0, 1.0, 1.0, 0.9, 1.0, 0.9, 0.9],
        norm: Norm::L2,
        log10_lambda: -3.52,
        dropout: [0.69, 0.51],
        noise: [0.05, 0.04, 0.04, 0.02, 0.08],
        momentum: [0.95, 0.95, 0.99, 0.9, 0.95, 0.9, 0.95, 0.9],
        step_rate: [1e-4, 1e-4, 1e-4, 1e-3, 1e-4, 1e-4, 1e-4, 1e-4],
        batch: [27, 27, 81, 81, 81, 27, 81, 81],
        hidden: 100,
    },
    Table {
        sigma_hh: [1e-3, 1e-4, 1e-4, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4],
        sigma_ih: [1e-2, 1e-2, 0.1, 0.1, 0.1, 1e-3, 0.1, 1e-3],
        sparsify: [25, 50, 15, 50, 50, 50, 25, 15],
        rho: [1.0, 0.9, 1.1, 1.0, 1.0, 1.1, 1.0, 0.9],
        norm: Norm::L1,
        log10_lambda: -3.80,
        dropout: [0.93, 0.80],
        noise: [0.02, 0.02, 0.04, 0.09, 0.01],
        momentum: [0.9, 0.99, 0.95, 0.95, 0.9, 0.9, 0.9, 0.95],
        step_rate: [1e-4; 8],
        batch: [81, 27, 27, 81, 81, 27, 81, 81],
        hidden: 600,
    },
];

/// Published best column for `variant` on `corpus`.
///
/// No separate column exists for the unregularized network; it reuses the
/// initialization and optimizer settings of the norm-penalty column with the
/// penalty removed.
pub fn preset_column(corpus: Corpus, variant: ModelVariant) -> ConfigColumn {
    use ModelVariant::*;
    let t = &TABLES[corpus.index()];
    let col = match variant {
        Plain | Nbr => 0,
        N => 1,
        Ns => 2,
        Mn => 3,
        Mns => 4,
        Do => 5,
        Dos => 6,
        Ff => 7,
    };
    let noise = match variant {
        N => Some(t.noise[0]),
        Ns => Some(t.noise[1]),
        Mn => Some(t.noise[2]),
        Mns => Some(t.noise[3]),
        Ff => Some(t.noise[4]),
        _ => None,
    };
    let dropout = match variant {
        Do => Some(t.dropout[0]),
        Dos => Some(t.dropout[1]),
        _ => None,
    };
    ConfigColumn {
        sigma_hh: t.sigma_hh[col],
        sigma_ih: t.sigma_ih[col],
        sparsify: t.sparsify[col],
        rho_limit: t.rho[col],
        regularizer: (variant == Nbr).then_some(t.norm),
        log10_lambda: (variant == Nbr).then_some(t.log10_lambda),
        dropout_p: dropout,
        noise_sigma: noise,
        momentum: t.momentum[col],
        step_rate: t.step_rate[col],
        batch_size: t.batch[col],
        hidden: t.hidden,
    }
}

pub fn preset(corpus: Corpus, variant: ModelVariant, seed: u64) -> HyperConfig {
    preset_column(corpus, variant).to_config(variant, seed)
}

/// Reported test cross-entropy.
pub fn reported_test_ce(corpus: Corpus, variant: ModelVariant) -> f64 {
    const CE: [[f64; 9]; 4] = [
        [8.58, 8.83, 8.92, 8.96, 8.64, 8.64, 8.48, 8.55, 8.67],
        [3.43, 3.70, 3.56, 3.58, 3.51, 3.50, 3.49, 3.57, 3.54],
        [7.58, 7.78, 7.66, 7.74, 7.71, 7.70, 7.65, 7.67, 7.69],
        [6.99, 8.62, 8.40, 8.40, 8.13, 8.12, 7.98, 8.00, 8.10],
    ];
    let v = ModelVariant::ALL.iter().position(|&m| m == variant).expect("listed variant");
    CE[corpus.index()][v]
}

/// Reported test cross-entropy of the fast-dropout baseline.
pub fn reported_fast_dropout_ce(corpus: Corpus) -> f64 {
    [8.01, 3.09, 7.39, 6.75][corpus.index()]
}
