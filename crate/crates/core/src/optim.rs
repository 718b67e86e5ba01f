//! Classical momentum, Nesterov momentum and rmsprop with momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Gradients;
use crate::model::RnnParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Momentum,
    #[serde(rename = "nag")]
    Nesterov,
    Rmsprop,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "momentum" | "sgd" => Ok(Method::Momentum),
            "nag" | "nesterov" => Ok(Method::Nesterov),
            "rmsprop" => Ok(Method::Rmsprop),
            other => Err(Error::contract(format!("unknown optimizer `{other}`"))),
        }
    }
}

fn default_decay() -> f64 {
    0.9
}

fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    /// μ
    pub momentum: f64,
    pub step_rate: f64,
    /// rmsprop averaging factor γ.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// rmsprop floor inside the square root.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(method: Method, momentum: f64, step_rate: f64) -> Self {
        OptimizerConfig {
            method,
            momentum,
            step_rate,
            decay: default_decay(),
            epsilon: default_epsilon(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.step_rate > 0.0 && self.step_rate.is_finite()) {
            return Err(Error::contract(format!("step rate must be > 0, got {}", self.step_rate)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::contract(format!("decay must be in (0, 1), got {}", self.decay)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::contract(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub velocity: Gradients,
    /// Running mean of squared gradients (rmsprop only).
    pub accumulator: Option<Gradients>,
    pub steps: usize,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &RnnParams) -> Result<Self> {
        config.validate()?;
        let zeros = Gradients::zeros(params.shapes());
        Ok(OptimizerState {
            config,
            accumulator: (config.method == Method::Rmsprop).then(|| zeros.clone()),
            velocity: zeros,
            steps: 0,
        })
    }

    /// One update of `params`. `grad_fn` returns loss and gradient at the
    /// point it is given (the look-ahead point for Nesterov).
    ///
    /// Returns the loss reported by `grad_fn`. On a non-finite loss, gradient
    /// or updated parameter, neither `params` nor the state is modified.
    pub fn step<F>(&mut self, params: &mut RnnParams, mut grad_fn: F) -> Result<f64>
    where
        F: FnMut(&RnnParams) -> Result<(f64, Gradients)>,
    {
        let mu = self.config.momentum;
        let eps = self.config.step_rate;
        let (loss, g) = if self.config.method == Method::Nesterov && mu != 0.0 {
            let mut ahead = params.clone();
            for (p, v) in ahead.as_slices_mut().into_iter().zip(self.velocity.as_slices()) {
                p.iter_mut().zip(v).for_each(|(p, v)| *p += mu * v);
            }
            grad_fn(&ahead)?
        } else {
            grad_fn(params)?
        };
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss or gradient at step {}", self.steps)));
        }

        let mut velocity = self.velocity.clone();
        let mut accumulator = self.accumulator.clone();
        match &mut accumulator {
            Some(r) => {
                let gamma = self.config.decay;
                let floor = self.config.epsilon;
                for ((v, r), g) in velocity.as_slices_mut().into_iter().zip(r.as_slices_mut()).zip(g.as_slices()) {
                    for ((v, r), g) in v.iter_mut().zip(r.iter_mut()).zip(g) {
                        *r = gamma * *r + (1.0 - gamma) * g * g;
                        *v = mu * *v - eps * g / (*r + floor).sqrt();
                    }
                }
            }
            None => {
                for (v, g) in velocity.as_slices_mut().into_iter().zip(g.as_slices()) {
                    v.iter_mut().zip(g).for_each(|(v, g)| *v = mu * *v - eps * g);
                }
            }
        }

        let mut next = params.clone();
        for (p, v) in next.as_slices_mut().into_iter().zip(velocity.as_slices()) {
            p.iter_mut().zip(v).for_each(|(p, v)| *p += v);
        }
        if !next.is_finite() {
            return Err(Error::Diverged(format!("parameters overflowed at step {}", self.steps)));
        }

        *params = next;
        self.velocity = velocity;
        self.accumulator = accumulator;
        self.steps += 1;
        Ok(loss)
    }
}
