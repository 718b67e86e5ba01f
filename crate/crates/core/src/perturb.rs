//! Regularizers: weight noise, DropConnect and norm penalties.
//!
//! Noise and masks only ever exist inside a gradient computation. A
//! [`PerturbationPlan`] is sampled once per optimizer iteration and the
//! forward/backward passes substitute its effective weights for the clean
//! ones; the stored parameters are never touched.
//!
//! The module also carries the moment analysis of multiplicative weight noise
//! on a single pre-synaptic activation ([`noisy_moments`],
//! [`sampled_activation_grad`]).

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Gradients;
use crate::model::{RnnParams, Shapes};
use crate::rng::Rng;

/// One of the three weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Weight {
    #[serde(rename = "w_ih")]
    InputHidden,
    #[serde(rename = "w_hh")]
    HiddenHidden,
    #[serde(rename = "w_ho")]
    HiddenOutput,
}

impl Weight {
    pub const ALL: [Weight; 3] = [Weight::InputHidden, Weight::HiddenHidden, Weight::HiddenOutput];

    fn index(self) -> usize {
        match self {
            Weight::InputHidden => 0,
            Weight::HiddenHidden => 1,
            Weight::HiddenOutput => 2,
        }
    }

    fn shape(self, s: Shapes) -> (usize, usize) {
        match self {
            Weight::InputHidden => (s.hidden, s.input),
            Weight::HiddenHidden => (s.hidden, s.hidden),
            Weight::HiddenOutput => (s.output, s.hidden),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Weight::InputHidden => "w_ih",
            Weight::HiddenHidden => "w_hh",
            Weight::HiddenOutput => "w_ho",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    None,
    /// `W + Δ`
    Additive,
    /// `W ∘ (1 + Δ)`
    Multiplicative,
    /// `W ∘ M`, `M_ij ~ Bernoulli(1 - drop_p)`
    Dropconnect,
    /// `W + Δ` on the input and output weights, fresh at every step.
    FeedforwardAdditive,
}

impl PerturbationKind {
    pub fn is_noise(self) -> bool {
        matches!(
            self,
            PerturbationKind::Additive
                | PerturbationKind::Multiplicative
                | PerturbationKind::FeedforwardAdditive
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// A fresh realization at every unrolled step.
    #[default]
    PerTimeStep,
    /// One realization shared by all steps.
    PerSequence,
}

/// Declarative description of the perturbation applied during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub scope: Scope,
    /// Noise standard deviation (noise kinds).
    #[serde(default)]
    pub sigma: f64,
    /// Probability that an individual weight is zeroed (DropConnect).
    #[serde(default)]
    pub drop_p: f64,
    /// Perturbed matrices; empty means the kind's default targets.
    #[serde(default)]
    pub targets: Vec<Weight>,
}

impl PerturbationSpec {
    pub fn none() -> Self {
        PerturbationSpec {
            kind: PerturbationKind::None,
            scope: Scope::PerTimeStep,
            sigma: 0.0,
            drop_p: 0.0,
            targets: Vec::new(),
        }
    }

    pub fn additive(scope: Scope, sigma: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Additive,
            scope,
            sigma,
            ..Self::none()
        }
    }

    pub fn multiplicative(scope: Scope, sigma: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Multiplicative,
            scope,
            sigma,
            ..Self::none()
        }
    }

    pub fn dropconnect(scope: Scope, drop_p: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::Dropconnect,
            scope,
            drop_p,
            ..Self::none()
        }
    }

    pub fn feedforward(sigma: f64) -> Self {
        PerturbationSpec {
            kind: PerturbationKind::FeedforwardAdditive,
            scope: Scope::PerTimeStep,
            sigma,
            ..Self::none()
        }
    }

    pub fn with_targets(mut self, targets: &[Weight]) -> Self {
        self.targets = targets.to_vec();
        self
    }

    /// Targets after applying the kind's default (recurrent weights for
    /// recurrent noise and DropConnect, input and output weights for
    /// feedforward noise). Sorted and deduplicated.
    pub fn resolved_targets(&self) -> Vec<Weight> {
        let mut t = if self.targets.is_empty() {
            match self.kind {
                PerturbationKind::None => vec![],
                PerturbationKind::FeedforwardAdditive => {
                    vec![Weight::InputHidden, Weight::HiddenOutput]
                }
                _ => vec![Weight::HiddenHidden],
            }
        } else {
            self.targets.clone()
        };
        t.sort();
        t.dedup();
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_noise() && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::contract(format!(
                "{:?} noise needs sigma > 0, got {}",
                self.kind, self.sigma
            )));
        }
        if self.kind == PerturbationKind::Dropconnect && !(0.0..=1.0).contains(&self.drop_p) {
            return Err(Error::contract(format!(
                "drop_p must lie in [0, 1], got {}",
                self.drop_p
            )));
        }
        if self.kind == PerturbationKind::FeedforwardAdditive {
            if self.scope != Scope::PerTimeStep {
                return Err(Error::contract(
                    "feedforward noise is only defined per time step",
                ));
            }
            if self.resolved_targets().contains(&Weight::HiddenHidden) {
                return Err(Error::contract(
                    "feedforward noise may only target w_ih and w_ho",
                ));
            }
        }
        Ok(())
    }
}

/// Sampled noise tensors or masks for one matrix: one entry per step, or a
/// single entry shared by all steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub draws: Vec<Array2<f64>>,
}

impl Realization {
    pub fn at(&self, t: usize) -> &Array2<f64> {
        if self.draws.len() == 1 {
            &self.draws[0]
        } else {
            &self.draws[t]
        }
    }
}

/// A concrete, fixed draw of a [`PerturbationSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPlan {
    pub kind: PerturbationKind,
    pub scope: Scope,
    pub steps: usize,
    pub shapes: Shapes,
    /// Seed of the RNG that produced the realizations, when known.
    pub seed: Option<u64>,
    realizations: [Option<Realization>; 3],
}

impl PerturbationPlan {
    pub fn realization(&self, w: Weight) -> Option<&Realization> {
        self.realizations[w.index()].as_ref()
    }

    /// True when every step sees the same effective weights.
    pub fn is_static(&self) -> bool {
        self.scope == Scope::PerSequence
            || self.realizations.iter().flatten().all(|r| r.draws.len() == 1)
    }

    pub(crate) fn check_compatible(&self, shapes: Shapes, steps: usize) -> Result<()> {
        if self.shapes != shapes {
            return Err(Error::contract(format!(
                "plan shapes {:?} do not match parameters {:?}",
                self.shapes, shapes
            )));
        }
        if self.scope == Scope::PerTimeStep && self.steps < steps {
            return Err(Error::contract(format!(
                "per-time-step plan covers {} steps but the batch has {steps}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Builds a plan from explicit realizations (tests, replay).
    pub fn from_realizations(
        kind: PerturbationKind,
        scope: Scope,
        steps: usize,
        shapes: Shapes,
        realizations: Vec<(Weight, Vec<Array2<f64>>)>,
    ) -> Result<Self> {
        let mut slots: [Option<Realization>; 3] = [None, None, None];
        for (w, draws) in realizations {
            let expected = match scope {
                Scope::PerSequence => 1,
                Scope::PerTimeStep => steps,
            };
            if draws.len() != expected {
                return Err(Error::contract(format!(
                    "{} needs {expected} realizations, got {}",
                    w.name(),
                    draws.len()
                )));
            }
            if let Some(d) = draws.iter().find(|d| d.dim() != w.shape(shapes)) {
                return Err(Error::contract(format!(
                    "{} realization has shape {:?}, expected {:?}",
                    w.name(),
                    d.dim(),
                    w.shape(shapes)
                )));
            }
            slots[w.index()] = Some(Realization { draws });
        }
        Ok(PerturbationPlan {
            kind,
            scope,
            steps,
            shapes,
            seed: None,
            realizations: slots,
        })
    }

    /// Chain factor `∂W*_t / ∂W` applied elementwise to a gradient with
    /// respect to the effective matrix, accumulated into `out`.
    pub(crate) fn accumulate_clean_grad(
        &self,
        w: Weight,
        t: usize,
        effective_grad: &Array2<f64>,
        out: &mut Array2<f64>,
    ) {
        match (self.kind, self.realization(w)) {
            (PerturbationKind::Multiplicative, Some(r)) => {
                Zip::from(out)
                    .and(effective_grad)
                    .and(r.at(t))
                    .for_each(|o, &g, &d| *o += g * (1.0 + d));
            }
            (PerturbationKind::Dropconnect, Some(r)) => {
                Zip::from(out)
                    .and(effective_grad)
                    .and(r.at(t))
                    .for_each(|o, &g, &m| *o += g * m);
            }
            _ => *out += effective_grad,
        }
    }
}

/// Samples a plan for one optimizer iteration.
pub fn sample_plan(
    spec: &PerturbationSpec,
    shapes: Shapes,
    steps: usize,
    rng: &mut Rng,
) -> Result<PerturbationPlan> {
    if steps == 0 {
        return Err(Error::contract("plans need at least one time step"));
    }
    spec.validate()?;
    let count = match spec.scope {
        Scope::PerSequence => 1,
        Scope::PerTimeStep => steps,
    };
    let mut slots: [Option<Realization>; 3] = [None, None, None];
    if spec.kind != PerturbationKind::None {
        for w in spec.resolved_targets() {
            let shape = w.shape(shapes);
            let draws = (0..count)
                .map(|_| match spec.kind {
                    PerturbationKind::Dropconnect => {
                        let keep = 1.0 - spec.drop_p;
                        Array2::from_shape_simple_fn(shape, || {
                            if rng.random::<f64>() < keep {
                                1.0
                            } else {
                                0.0
                            }
                        })
                    }
                    _ => {
                        let normal = Normal::new(0.0, spec.sigma).expect("validated sigma");
                        Array2::from_shape_simple_fn(shape, || normal.sample(rng))
                    }
                })
                .collect();
            slots[w.index()] = Some(Realization { draws });
        }
    }
    Ok(PerturbationPlan {
        kind: spec.kind,
        scope: spec.scope,
        steps,
        shapes,
        seed: None,
        realizations: slots,
    })
}

/// Samples a plan from a dedicated seed, recording it in the plan.
pub fn sample_plan_seeded(
    spec: &PerturbationSpec,
    shapes: Shapes,
    steps: usize,
    seed: u64,
) -> Result<PerturbationPlan> {
    let mut rng = crate::rng::seeded(seed);
    let mut plan = sample_plan(spec, shapes, steps, &mut rng)?;
    plan.seed = Some(seed);
    Ok(plan)
}

/// The three weight matrices as seen by one unrolled step.
#[derive(Debug, Clone)]
pub struct EffectiveWeights<'a> {
    pub w_ih: Cow<'a, Array2<f64>>,
    pub w_hh: Cow<'a, Array2<f64>>,
    pub w_ho: Cow<'a, Array2<f64>>,
}

fn perturbed<'a>(
    kind: PerturbationKind,
    clean: &'a Array2<f64>,
    r: Option<&Realization>,
    t: usize,
) -> Cow<'a, Array2<f64>> {
    let Some(r) = r else {
        return Cow::Borrowed(clean);
    };
    let d = r.at(t);
    let out = match kind {
        PerturbationKind::None => return Cow::Borrowed(clean),
        PerturbationKind::Additive | PerturbationKind::FeedforwardAdditive => clean + d,
        PerturbationKind::Multiplicative => {
            let mut w = clean.clone();
            Zip::from(&mut w).and(d).for_each(|w, &d| *w += *w * d);
            w
        }
        PerturbationKind::Dropconnect => clean * d,
    };
    Cow::Owned(out)
}

/// Effective weights at step `t`; untargeted matrices are borrowed unchanged.
pub fn effective_weights<'a>(
    params: &'a RnnParams,
    plan: &PerturbationPlan,
    t: usize,
) -> EffectiveWeights<'a> {
    EffectiveWeights {
        w_ih: perturbed(plan.kind, &params.w_ih, plan.realization(Weight::InputHidden), t),
        w_hh: perturbed(plan.kind, &params.w_hh, plan.realization(Weight::HiddenHidden), t),
        w_ho: perturbed(plan.kind, &params.w_ho, plan.realization(Weight::HiddenOutput), t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(Error::Schema(format!("unknown norm '{other}'"))),
        }
    }
}

/// Penalty on `w_ih`, `w_hh` and `w_ho`; biases are never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegPenaltySpec {
    pub norm: Norm,
    pub lambda: f64,
}

impl RegPenaltySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!(
                "penalty lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Penalty of a single scalar weight and its derivative.
    pub fn scalar(&self, w: f64) -> (f64, f64) {
        match self.norm {
            Norm::L1 => (self.lambda * w.abs(), self.lambda * sign(w)),
            Norm::L2 => (self.lambda * w * w, 2.0 * self.lambda * w),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `λ Σ|w|` or `λ Σ w²` over the three weight matrices, with its
/// (sub)gradient.
pub fn norm_penalty(params: &RnnParams, spec: &RegPenaltySpec) -> (f64, Gradients) {
    let mut grads = Gradients::zeros(params.shapes());
    let mut value = 0.0;
    let pairs = [
        (&params.w_ih, &mut grads.w_ih),
        (&params.w_hh, &mut grads.w_hh),
        (&params.w_ho, &mut grads.w_ho),
    ];
    for (w, g) in pairs {
        Zip::from(g).and(w).for_each(|g, &w| {
            let (v, d) = spec.scalar(w);
            value += v;
            *g = d;
        });
    }
    (value, grads)
}

/// Mean and variance of `a = (w + Δ w)ᵀ x` under zero-mean Gaussian noise of
/// standard deviation `sigma` scaling the incoming weight vector.
pub fn noisy_moments(w: &[f64], x: &[f64], sigma: f64) -> Result<(f64, f64)> {
    if w.len() != x.len() {
        return Err(Error::contract(format!(
            "w has {} entries, x has {}",
            w.len(),
            x.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("sigma must be > 0, got {sigma}")));
    }
    let mean: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    Ok((mean, sigma * sigma * mean * mean))
}

/// Exact variance of `a` when every weight carries its own independent noise
/// draw: `σ² Σ (w_i x_i)²`.
pub fn elementwise_noise_variance(w: &[f64], x: &[f64], sigma: f64) -> f64 {
    sigma * sigma * w.iter().zip(x).map(|(w, x)| (w * x).powi(2)).sum::<f64>()
}

/// Sampling form of a noisy activation and its gradient decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledActivation {
    /// `wᵀx + s σ |wᵀx|`
    pub a_hat: f64,
    /// `∂â/∂w = x + s σ sign(wᵀx) x`
    pub grad_w: Vec<f64>,
    /// Noise-induced part of the gradient, `s σ sign(wᵀx) x`.
    pub reg_term: Vec<f64>,
    /// The same term without the sign factor, `s σ x`.
    pub reg_term_unsigned: Vec<f64>,
}

pub fn sampled_activation_grad(w: &[f64], x: &[f64], sigma: f64, s: f64) -> Result<SampledActivation> {
    if w.len() != x.len() {
        return Err(Error::contract(format!(
            "w has {} entries, x has {}",
            w.len(),
            x.len()
        )));
    }
    if !s.is_finite() {
        return Err(Error::contract("s must be finite"));
    }
    let a: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let scale = s * sigma;
    let reg_term: Vec<f64> = x.iter().map(|&xi| scale * sign(a) * xi).collect();
    Ok(SampledActivation {
        a_hat: a + scale * a.abs(),
        grad_w: x.iter().zip(&reg_term).map(|(x, r)| x + r).collect(),
        reg_term,
        reg_term_unsigned: x.iter().map(|&xi| scale * xi).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::testutil::random_params;
    use ndarray::array;

    fn shapes() -> Shapes {
        Shapes::autoregressive(6, 4)
    }

    #[test]
    fn single_step_plans_do_not_depend_on_scope() {
        for spec in [
            PerturbationSpec::additive(Scope::PerTimeStep, 0.1),
            PerturbationSpec::multiplicative(Scope::PerTimeStep, 0.1),
            PerturbationSpec::dropconnect(Scope::PerTimeStep, 0.3),
        ] {
            let seq = PerturbationSpec {
                scope: Scope::PerSequence,
                ..spec.clone()
            };
            let a = sample_plan(&spec, shapes(), 1, &mut rng::seeded(5)).unwrap();
            let b = sample_plan(&seq, shapes(), 1, &mut rng::seeded(5)).unwrap();
            assert_eq!(a.realizations, b.realizations);
        }
    }

    #[test]
    fn extreme_drop_probabilities() {
        let keep_all = sample_plan(
            &PerturbationSpec::dropconnect(Scope::PerTimeStep, 0.0),
            shapes(),
            4,
            &mut rng::seeded(1),
        )
        .unwrap();
        let r = keep_all.realization(Weight::HiddenHidden).unwrap();
        assert!(r.draws.iter().all(|m| m.iter().all(|&v| v == 1.0)));

        let drop_all = sample_plan(
            &PerturbationSpec::dropconnect(Scope::PerTimeStep, 1.0),
            shapes(),
            4,
            &mut rng::seeded(1),
        )
        .unwrap();
        let r = drop_all.realization(Weight::HiddenHidden).unwrap();
        assert!(r.draws.iter().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn per_time_step_masks_differ_and_match_keep_rate() {
        let p = 0.3;
        let s = Shapes::autoregressive(10, 32);
        let plan = sample_plan(
            &PerturbationSpec::dropconnect(Scope::PerTimeStep, p),
            s,
            100,
            &mut rng::seeded(2),
        )
        .unwrap();
        let r = plan.realization(Weight::HiddenHidden).unwrap();
        assert_ne!(r.draws[3], r.draws[4]);
        let n: usize = r.draws.iter().map(|m| m.len()).sum();
        assert!(n >= 100_000);
        let density = r.draws.iter().map(|m| m.sum()).sum::<f64>() / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((density - (1.0 - p)).abs() < 3.0 * se, "density {density}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ff_seq = PerturbationSpec {
            scope: Scope::PerSequence,
            ..PerturbationSpec::feedforward(0.05)
        };
        assert!(matches!(
            sample_plan(&ff_seq, shapes(), 3, &mut rng::seeded(0)),
            Err(Error::Contract(_))
        ));
        let ff_rec = PerturbationSpec::feedforward(0.05).with_targets(&[Weight::HiddenHidden]);
        assert!(ff_rec.validate().is_err());
        assert!(PerturbationSpec::additive(Scope::PerTimeStep, 0.0).validate().is_err());
        assert!(PerturbationSpec::dropconnect(Scope::PerTimeStep, 1.5).validate().is_err());
        assert!(sample_plan(&PerturbationSpec::none(), shapes(), 0, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn zero_noise_leaves_weights_unchanged() {
        let params = random_params(shapes(), 0.5, 1);
        for kind in [PerturbationKind::Additive, PerturbationKind::Multiplicative] {
            let zeros = vec![Array2::zeros((4, 4))];
            let plan = PerturbationPlan::from_realizations(
                kind,
                Scope::PerSequence,
                3,
                shapes(),
                vec![(Weight::HiddenHidden, zeros)],
            )
            .unwrap();
            let w = effective_weights(&params, &plan, 2);
            assert_eq!(*w.w_hh, params.w_hh);
            assert!(matches!(w.w_ih, Cow::Borrowed(_)));
        }
    }

    #[test]
    fn effective_weight_arithmetic() {
        let mut params = RnnParams::zeros(Shapes::autoregressive(1, 2));
        params.w_hh = array![[1.0, 0.0], [0.5, -2.0]];
        let delta = array![[-0.02, 0.7], [0.1, 0.5]];
        let add = PerturbationPlan::from_realizations(
            PerturbationKind::Additive,
            Scope::PerSequence,
            1,
            params.shapes(),
            vec![(Weight::HiddenHidden, vec![delta.clone()])],
        )
        .unwrap();
        let w = effective_weights(&params, &add, 0);
        assert_eq!(w.w_hh[[0, 0]], 0.98);
        assert_eq!(w.w_hh[[0, 1]], 0.7);

        let mul = PerturbationPlan::from_realizations(
            PerturbationKind::Multiplicative,
            Scope::PerSequence,
            1,
            params.shapes(),
            vec![(Weight::HiddenHidden, vec![delta])],
        )
        .unwrap();
        let w = effective_weights(&params, &mul, 0);
        // structural zero stays zero
        assert_eq!(w.w_hh[[0, 1]], 0.0);
        assert!((w.w_hh[[1, 1]] - (-3.0)).abs() < 1e-15);
    }

    #[test]
    fn multiplicative_noise_keeps_sparsity_additive_does_not() {
        let mut params = random_params(Shapes::autoregressive(5, 20), 1.0, 3);
        params.w_hh.indexed_iter_mut().for_each(|((i, j), v)| {
            if (i + j) % 3 != 0 {
                *v = 0.0;
            }
        });
        let mul = sample_plan(
            &PerturbationSpec::multiplicative(Scope::PerTimeStep, 0.1),
            params.shapes(),
            3,
            &mut rng::seeded(4),
        )
        .unwrap();
        let add = sample_plan(
            &PerturbationSpec::additive(Scope::PerTimeStep, 0.1),
            params.shapes(),
            3,
            &mut rng::seeded(4),
        )
        .unwrap();
        for t in 0..3 {
            let m = effective_weights(&params, &mul, t);
            let a = effective_weights(&params, &add, t);
            for ((idx, &clean), (&wm, &wa)) in params
                .w_hh
                .indexed_iter()
                .zip(m.w_hh.iter().zip(a.w_hh.iter()))
            {
                if clean == 0.0 {
                    assert_eq!(wm, 0.0, "{idx:?}");
                    assert_ne!(wa, 0.0, "{idx:?}");
                }
            }
        }
    }

    #[test]
    fn per_sequence_plans_are_constant_in_time() {
        let params = random_params(shapes(), 0.5, 2);
        let plan = sample_plan(
            &PerturbationSpec::additive(Scope::PerSequence, 0.05),
            shapes(),
            10,
            &mut rng::seeded(3),
        )
        .unwrap();
        let w0 = effective_weights(&params, &plan, 0);
        for t in 1..10 {
            assert_eq!(*effective_weights(&params, &plan, t).w_hh, *w0.w_hh);
        }
    }

    #[test]
    fn expected_effective_weights() {
        // Mean over many draws: clean weights for noise, (1 - p) W for DropConnect.
        let params = random_params(Shapes::autoregressive(3, 3), 1.0, 9);
        let draws = 20_000;
        let cases = [
            (PerturbationSpec::additive(Scope::PerSequence, 0.1), 1.0),
            (PerturbationSpec::multiplicative(Scope::PerSequence, 0.1), 1.0),
            (PerturbationSpec::dropconnect(Scope::PerSequence, 0.25), 0.75),
        ];
        for (spec, factor) in cases {
            let mut r = rng::seeded(11);
            let mut acc = Array2::<f64>::zeros((3, 3));
            let mut acc_sq = Array2::<f64>::zeros((3, 3));
            for _ in 0..draws {
                let plan = sample_plan(&spec, params.shapes(), 1, &mut r).unwrap();
                let w = effective_weights(&params, &plan, 0).w_hh.into_owned();
                acc_sq += &w.mapv(|v| v * v);
                acc += &w;
            }
            let n = draws as f64;
            for ((i, j), &clean) in params.w_hh.indexed_iter() {
                let mean = acc[[i, j]] / n;
                let var = acc_sq[[i, j]] / n - mean * mean;
                let se = (var / n).sqrt().max(1e-12);
                assert!(
                    (mean - factor * clean).abs() < 4.0 * se,
                    "{:?} ({i},{j}): mean {mean}, expected {}",
                    spec.kind,
                    factor * clean
                );
            }
        }
    }

    #[test]
    fn l2_penalty_example() {
        let mut p = RnnParams::zeros(Shapes::new(2, 1, 1));
        p.w_ih = array![[3.0, -4.0]];
        p.b_h[0] = 10.0;
        let (v, g) = norm_penalty(&p, &RegPenaltySpec { norm: Norm::L2, lambda: 0.5 });
        assert_eq!(v, 12.5);
        assert_eq!(g.w_ih, array![[3.0, -4.0]]);
        assert_eq!(g.b_h[0], 0.0);
    }

    #[test]
    fn zero_lambda_penalty_vanishes() {
        let p = random_params(shapes(), 1.0, 4);
        for norm in [Norm::L1, Norm::L2] {
            let (v, g) = norm_penalty(&p, &RegPenaltySpec { norm, lambda: 0.0 });
            assert_eq!(v, 0.0);
            assert!(g.as_slices().iter().all(|s| s.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn penalty_gradients_match_finite_differences() {
        let p = random_params(shapes(), 1.0, 8);
        for norm in [Norm::L1, Norm::L2] {
            let spec = RegPenaltySpec { norm, lambda: 0.01 };
            let (_, g) = norm_penalty(&p, &spec);
            let eps = 1e-6;
            for (idx, slice) in g.as_slices().iter().enumerate().take(3) {
                for (j, &analytic) in slice.iter().enumerate() {
                    let mut plus = p.clone();
                    plus.as_slices_mut()[idx][j] += eps;
                    let mut minus = p.clone();
                    minus.as_slices_mut()[idx][j] -= eps;
                    let fd = (norm_penalty(&plus, &spec).0 - norm_penalty(&minus, &spec).0) / (2.0 * eps);
                    let rel = (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(1e-8);
                    assert!(rel < 1e-6, "{norm} [{idx}][{j}] {fd} vs {analytic}");
                }
            }
        }
    }

    #[test]
    fn l1_subgradient_is_zero_at_zero() {
        let spec = RegPenaltySpec { norm: Norm::L1, lambda: 2.0 };
        assert_eq!(spec.scalar(0.0), (0.0, 0.0));
        assert_eq!(spec.scalar(-3.0), (6.0, -2.0));
    }

    #[test]
    fn moment_examples() {
        assert_eq!(noisy_moments(&[1.0, 1.0], &[2.0, 3.0], 0.1).unwrap().0, 5.0);
        assert!((noisy_moments(&[1.0, 1.0], &[2.0, 3.0], 0.1).unwrap().1 - 0.25).abs() < 1e-15);
        assert_eq!(noisy_moments(&[1.0, -1.0], &[2.0, 2.0], 0.3).unwrap(), (0.0, 0.0));
        assert!(noisy_moments(&[1.0], &[1.0], 0.0).is_err());
        assert!(noisy_moments(&[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn sampled_activation_examples() {
        let r = sampled_activation_grad(&[2.0], &[1.0], 0.1, 1.0).unwrap();
        assert!((r.a_hat - 2.2).abs() < 1e-15);
        assert!((r.grad_w[0] - 1.1).abs() < 1e-15);
        assert!((r.reg_term[0] - 0.1).abs() < 1e-15);

        let r = sampled_activation_grad(&[0.3, -0.2], &[1.0, 4.0], 0.05, 0.0).unwrap();
        assert_eq!(r.a_hat, 0.3 - 0.8);
        assert_eq!(r.grad_w, vec![1.0, 4.0]);
        assert!(r.reg_term.iter().all(|&v| v == 0.0));

        // negative pre-activation: sign flips the regularizer, the unsigned form does not
        let r = sampled_activation_grad(&[-1.0], &[2.0], 0.1, 1.0).unwrap();
        assert!((r.reg_term[0] + 0.2).abs() < 1e-15);
        assert!((r.reg_term_unsigned[0] - 0.2).abs() < 1e-15);

        // wᵀx = 0 uses sign 0
        let r = sampled_activation_grad(&[1.0, 1.0], &[1.0, -1.0], 0.1, 2.0).unwrap();
        assert_eq!(r.reg_term, vec![0.0, 0.0]);
    }

    #[test]
    fn sampled_activation_gradient_matches_finite_differences() {
        let mut r = rng::seeded(21);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..50 {
            let w: Vec<f64> = (0..5).map(|_| normal.sample(&mut r)).collect();
            let x: Vec<f64> = (0..5).map(|_| normal.sample(&mut r)).collect();
            let s = normal.sample(&mut r);
            let a: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            if a.abs() < 1e-3 {
                continue;
            }
            let res = sampled_activation_grad(&w, &x, 0.07, s).unwrap();
            let eps = 1e-6;
            for i in 0..5 {
                let mut wp = w.clone();
                wp[i] += eps;
                let mut wm = w.clone();
                wm[i] -= eps;
                let fd = (sampled_activation_grad(&wp, &x, 0.07, s).unwrap().a_hat
                    - sampled_activation_grad(&wm, &x, 0.07, s).unwrap().a_hat)
                    / (2.0 * eps);
                assert!((fd - res.grad_w[i]).abs() < 1e-8, "{fd} vs {}", res.grad_w[i]);
            }
        }
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = PerturbationSpec::feedforward(0.09);
        let js = serde_json::to_string(&spec).unwrap();
        assert!(js.contains("feedforward_additive"));
        let back: PerturbationSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, spec);
        let parsed: PerturbationSpec =
            serde_json::from_str(r#"{"kind":"dropconnect","scope":"per_sequence","drop_p":0.56,"targets":["w_hh"]}"#)
                .unwrap();
        assert_eq!(parsed.resolved_targets(), vec![Weight::HiddenHidden]);
    }
}
