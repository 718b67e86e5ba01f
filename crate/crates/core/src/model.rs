//! RNN parameterization, forward pass and frame-level cross-entropy.
//!
//! The hidden recursion is
//!
//! ```text
//! h_t = act(W_hh* h_{t-1} + W_ih* u_t + b_h),   h_{-1} = 0
//! y_t = sigmoid(W_ho* h_t + b_o)
//! ```
//!
//! where the starred matrices are the effective weights of an optional
//! [`PerturbationPlan`] at step `t`. The output at step `t` is the prediction
//! of frame `t + 1`, so a sequence of `T` frames yields `T - 1` predictions.

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{effective_weights, EffectiveWeights, PerturbationPlan};

/// Lower/upper clamp applied to predicted probabilities inside the log.
pub const PROB_CLAMP: f64 = 1e-8;

/// Chunk size used when evaluating long test sets.
const EVAL_GROUP: usize = 32;

/// The five learnable arrays of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    /// Input-to-hidden weights, `[hidden, input]`.
    pub w_ih: Array2<f64>,
    /// Recurrent weights, `[hidden, hidden]`.
    pub w_hh: Array2<f64>,
    /// Hidden-to-output weights, `[output, hidden]`.
    pub w_ho: Array2<f64>,
    pub b_h: Array1<f64>,
    pub b_o: Array1<f64>,
}

/// Dimensions of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Shapes {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Shapes {
            input,
            hidden,
            output,
        }
    }

    /// Next-frame prediction network: output width equals input width.
    pub fn autoregressive(notes: usize, hidden: usize) -> Self {
        Shapes::new(notes, hidden, notes)
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input
            + self.hidden * self.hidden
            + self.output * self.hidden
            + self.hidden
            + self.output
    }
}

impl RnnParams {
    pub fn zeros(shapes: Shapes) -> Self {
        let Shapes {
            input,
            hidden,
            output,
        } = shapes;
        RnnParams {
            w_ih: Array2::zeros((hidden, input)),
            w_hh: Array2::zeros((hidden, hidden)),
            w_ho: Array2::zeros((output, hidden)),
            b_h: Array1::zeros(hidden),
            b_o: Array1::zeros(output),
        }
    }

    /// Builds parameters from explicit arrays, checking shape consistency and
    /// finiteness.
    pub fn from_arrays(
        w_ih: Array2<f64>,
        w_hh: Array2<f64>,
        w_ho: Array2<f64>,
        b_h: Array1<f64>,
        b_o: Array1<f64>,
    ) -> Result<Self> {
        let p = RnnParams {
            w_ih,
            w_hh,
            w_ho,
            b_h,
            b_o,
        };
        p.validate()?;
        if !p.is_finite() {
            return Err(Error::contract("parameters contain non-finite entries"));
        }
        Ok(p)
    }

    pub fn shapes(&self) -> Shapes {
        Shapes {
            input: self.w_ih.ncols(),
            hidden: self.w_hh.nrows(),
            output: self.w_ho.nrows(),
        }
    }

    /// Checks that the five arrays agree with each other.
    pub fn validate(&self) -> Result<()> {
        let h = self.w_hh.nrows();
        if self.w_hh.ncols() != h {
            return Err(Error::contract(format!(
                "w_hh must be square, got {:?}",
                self.w_hh.dim()
            )));
        }
        if self.w_ih.nrows() != h || self.w_ho.ncols() != h || self.b_h.len() != h {
            return Err(Error::contract(format!(
                "hidden size mismatch: w_ih {:?}, w_hh {:?}, w_ho {:?}, b_h {}",
                self.w_ih.dim(),
                self.w_hh.dim(),
                self.w_ho.dim(),
                self.b_h.len()
            )));
        }
        if self.b_o.len() != self.w_ho.nrows() {
            return Err(Error::contract(format!(
                "b_o has {} entries but w_ho has {} rows",
                self.b_o.len(),
                self.w_ho.nrows()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.as_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Flat views of the five arrays in the order `w_ih, w_hh, w_ho, b_h, b_o`.
    pub fn as_slices(&self) -> [&[f64]; 5] {
        [
            self.w_ih.as_slice().expect("standard layout"),
            self.w_hh.as_slice().expect("standard layout"),
            self.w_ho.as_slice().expect("standard layout"),
            self.b_h.as_slice().expect("standard layout"),
            self.b_o.as_slice().expect("standard layout"),
        ]
    }

    pub fn as_slices_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w_ih.as_slice_mut().expect("standard layout"),
            self.w_hh.as_slice_mut().expect("standard layout"),
            self.w_ho.as_slice_mut().expect("standard layout"),
            self.b_h.as_slice_mut().expect("standard layout"),
            self.b_o.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Little-endian bytes of every entry, used for bit-exact comparisons.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.as_slices()
            .iter()
            .flat_map(|s| s.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub(crate) fn weights(&self) -> EffectiveWeights<'_> {
        EffectiveWeights {
            w_ih: Cow::Borrowed(&self.w_ih),
            w_hh: Cow::Borrowed(&self.w_hh),
            w_ho: Cow::Borrowed(&self.w_ho),
        }
    }
}

/// A batch of binary frame sequences sharing one time axis.
///
/// Sequence `k` occupies frames `0 .. pad_prefix[k] + lengths[k]`: a run of
/// all-zero padding frames followed by `lengths[k]` real frames. Frames past
/// that span are filler (used when batching test sequences of unequal length)
/// and never enter the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    frames: Array3<f64>,
    lengths: Vec<usize>,
    pad_prefix: Vec<usize>,
}

impl SequenceBatch {
    /// `frames` is `[batch, T, notes]` with entries in `{0, 1}`.
    pub fn new(frames: Array3<f64>, lengths: Vec<usize>, pad_prefix: Vec<usize>) -> Result<Self> {
        let (n, t, _) = frames.dim();
        if lengths.len() != n || pad_prefix.len() != n {
            return Err(Error::contract(format!(
                "batch of {n} sequences needs {n} lengths and pad prefixes, got {} and {}",
                lengths.len(),
                pad_prefix.len()
            )));
        }
        if t == 0 {
            return Err(Error::data("sequences must have at least one frame"));
        }
        if let Some(v) = frames.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::data(format!("non-binary frame entry {v}")));
        }
        for k in 0..n {
            if pad_prefix[k] + lengths[k] > t {
                return Err(Error::contract(format!(
                    "sequence {k}: pad_prefix {} + length {} exceeds T = {t}",
                    pad_prefix[k], lengths[k]
                )));
            }
            let pad = frames.slice(s![k, ..pad_prefix[k], ..]);
            if pad.iter().any(|&v| v != 0.0) {
                return Err(Error::data(format!(
                    "sequence {k}: padding frames must be all-zero"
                )));
            }
        }
        Ok(SequenceBatch {
            frames,
            lengths,
            pad_prefix,
        })
    }

    /// Unpadded batch: every sequence spans the whole time axis.
    pub fn full(frames: Array3<f64>) -> Result<Self> {
        let (n, t, _) = frames.dim();
        SequenceBatch::new(frames, vec![t; n], vec![0; n])
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn pad_prefix(&self) -> &[usize] {
        &self.pad_prefix
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> usize {
        self.frames.dim().1
    }

    pub fn notes(&self) -> usize {
        self.frames.dim().2
    }

    /// Number of leading frames of sequence `k` that take part in the loss.
    pub fn span(&self, k: usize) -> usize {
        self.pad_prefix[k] + self.lengths[k]
    }

    /// Sub-batch of the given sequences, trimmed to the longest span.
    pub fn select(&self, indices: &[usize]) -> SequenceBatch {
        let t = indices.iter().map(|&k| self.span(k)).max().unwrap_or(1).max(1);
        let mut frames = Array3::zeros((indices.len(), t, self.notes()));
        for (row, &k) in indices.iter().enumerate() {
            frames
                .slice_mut(s![row, .., ..])
                .assign(&self.frames.slice(s![k, ..t, ..]));
        }
        SequenceBatch {
            frames,
            lengths: indices.iter().map(|&k| self.lengths[k]).collect(),
            pad_prefix: indices.iter().map(|&k| self.pad_prefix[k]).collect(),
        }
    }
}

/// Nonlinearity of the hidden layer.
///
/// Training always uses `Tanh`; `Sigmoid` reproduces the single-unit demo and
/// `Identity` makes the state Jacobian a plain matrix power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    #[default]
    Tanh,
    Sigmoid,
    Identity,
}

impl HiddenActivation {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => a.tanh(),
            HiddenActivation::Sigmoid => sigmoid(a),
            HiddenActivation::Identity => a,
        }
    }

    /// Derivative expressed through the activation value `h = apply(a)`.
    pub fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => 1.0 - h * h,
            HiddenActivation::Sigmoid => h * (1.0 - h),
            HiddenActivation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Hidden states `[batch, T, hidden]`.
    pub hidden: Array3<f64>,
    /// Hidden pre-activations `[batch, T, hidden]`.
    pub hidden_pre: Array3<f64>,
    /// Output probabilities `[batch, T - 1, output]`; entry `t` predicts frame `t + 1`.
    pub outputs: Array3<f64>,
    /// Output pre-activations `[batch, T - 1, output]`.
    pub output_pre: Array3<f64>,
    pub activation: HiddenActivation,
}

/// Forward pass with the training nonlinearity (tanh).
pub fn forward(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
) -> Result<ForwardTrace> {
    forward_with(params, batch, plan, HiddenActivation::Tanh)
}

pub(crate) fn check_compatible(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
) -> Result<()> {
    params.validate()?;
    let shapes = params.shapes();
    if batch.notes() != shapes.input {
        return Err(Error::contract(format!(
            "batch has {} notes per frame but w_ih expects {}",
            batch.notes(),
            shapes.input
        )));
    }
    if let Some(plan) = plan {
        plan.check_compatible(shapes, batch.steps())?;
    }
    Ok(())
}

/// Effective weights at every step, sharing one copy when the plan is static.
pub(crate) struct StepWeights<'a> {
    params: &'a RnnParams,
    plan: Option<&'a PerturbationPlan>,
    fixed: Option<EffectiveWeights<'a>>,
}

impl<'a> StepWeights<'a> {
    pub(crate) fn new(params: &'a RnnParams, plan: Option<&'a PerturbationPlan>) -> Self {
        let fixed = match plan {
            None => Some(params.weights()),
            Some(p) if p.is_static() => Some(effective_weights(params, p, 0)),
            Some(_) => None,
        };
        StepWeights {
            params,
            plan,
            fixed,
        }
    }

    pub(crate) fn at(&self, t: usize) -> Cow<'_, EffectiveWeights<'a>> {
        match (&self.fixed, self.plan) {
            (Some(w), _) => Cow::Borrowed(w),
            (None, Some(plan)) => Cow::Owned(effective_weights(self.params, plan, t)),
            (None, None) => unreachable!("fixed weights are always set without a plan"),
        }
    }
}

pub fn forward_with(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
    activation: HiddenActivation,
) -> Result<ForwardTrace> {
    check_compatible(params, batch, plan)?;
    let (n, steps, _) = batch.frames.dim();
    let shapes = params.shapes();
    let weights = StepWeights::new(params, plan);

    let mut hidden = Array3::zeros((n, steps, shapes.hidden));
    let mut hidden_pre = Array3::zeros((n, steps, shapes.hidden));
    let mut outputs = Array3::zeros((n, steps - 1, shapes.output));
    let mut output_pre = Array3::zeros((n, steps - 1, shapes.output));
    let mut prev: Array2<f64> = Array2::zeros((n, shapes.hidden));

    for t in 0..steps {
        let w = weights.at(t);
        let u = batch.frames.index_axis(Axis(1), t);
        let mut a = prev.dot(&w.w_hh.t());
        a += &u.dot(&w.w_ih.t());
        a += &params.b_h;
        let x = a.mapv(|v| activation.apply(v));
        hidden_pre.index_axis_mut(Axis(1), t).assign(&a);
        hidden.index_axis_mut(Axis(1), t).assign(&x);

        if t + 1 < steps {
            let mut z = x.dot(&w.w_ho.t());
            z += &params.b_o;
            output_pre.index_axis_mut(Axis(1), t).assign(&z);
            outputs
                .index_axis_mut(Axis(1), t)
                .assign(&z.mapv(sigmoid));
        }
        prev = x;
    }

    Ok(ForwardTrace {
        hidden,
        hidden_pre,
        outputs,
        output_pre,
        activation,
    })
}

/// Per-sequence loss weight `1 / (N (S_k - 1))`, zero when no prediction exists.
pub(crate) fn sequence_weights(batch: &SequenceBatch) -> Vec<f64> {
    let n = batch.len() as f64;
    (0..batch.len())
        .map(|k| {
            let span = batch.span(k);
            if span < 2 {
                0.0
            } else {
                1.0 / (n * (span - 1) as f64)
            }
        })
        .collect()
}

fn bernoulli_nll(target: f64, y: f64) -> f64 {
    let c = y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * c.ln() + (1.0 - target) * (1.0 - c).ln())
}

/// Mean frame-level cross-entropy (nats), summed over notes.
///
/// Each sequence contributes the mean over its `S_k - 1` predictions; the
/// result is the mean over sequences.
pub fn ce_loss(trace: &ForwardTrace, batch: &SequenceBatch) -> Result<f64> {
    let (n, steps, notes) = batch.frames.dim();
    let expected = (n, steps - 1, notes);
    if trace.outputs.dim() != expected {
        return Err(Error::contract(format!(
            "trace outputs {:?} do not match batch (expected {:?})",
            trace.outputs.dim(),
            expected
        )));
    }
    let weights = sequence_weights(batch);
    let mut total = 0.0;
    for (k, &wk) in weights.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        let span = batch.span(k);
        let targets = batch.frames.slice(s![k, 1..span, ..]);
        let preds = trace.outputs.slice(s![k, ..span - 1, ..]);
        let mut seq = 0.0;
        Zip::from(&targets).and(&preds).for_each(|&x, &y| {
            seq += bernoulli_nll(x, y);
        });
        total += wk * seq;
    }
    Ok(total)
}

/// `bernoulli_nll(x, yp) - bernoulli_nll(x, ym)` through log-ratios: one
/// logarithm per binary target and no cancellation between large terms.
fn bernoulli_nll_difference(x: f64, yp: f64, ym: f64) -> f64 {
    let cp = yp.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let cm = ym.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    // ln(a / b) given a - b exactly; ln_1p only where it gains accuracy
    let log_ratio = |a: f64, b: f64, diff: f64| {
        if diff.abs() < 0.5 * b {
            (diff / b).ln_1p()
        } else {
            (a / b).ln()
        }
    };
    let mut d = 0.0;
    if x != 0.0 {
        d -= x * log_ratio(cp, cm, cp - cm);
    }
    if x != 1.0 {
        d -= (1.0 - x) * log_ratio(1.0 - cp, 1.0 - cm, cm - cp);
    }
    d
}

/// `ce_loss(plus) - ce_loss(minus)` accumulated term by term, so terms the
/// two traces share cancel exactly instead of leaving rounding noise of the
/// order of the total loss.
pub(crate) fn ce_loss_difference(plus: &ForwardTrace, minus: &ForwardTrace, batch: &SequenceBatch) -> f64 {
    let weights = sequence_weights(batch);
    let mut total = 0.0;
    for (k, &wk) in weights.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        let span = batch.span(k);
        let targets = batch.frames.slice(s![k, 1..span, ..]);
        let mut seq = 0.0;
        Zip::from(&targets)
            .and(&plus.outputs.slice(s![k, ..span - 1, ..]))
            .and(&minus.outputs.slice(s![k, ..span - 1, ..]))
            .for_each(|&x, &yp, &ym| {
                if yp != ym {
                    seq += bernoulli_nll_difference(x, yp, ym);
                }
            });
        total += wk * seq;
    }
    total
}

/// Clean-weight cross-entropy on a (possibly unchunked) test batch.
pub fn evaluate(params: &RnnParams, test: &SequenceBatch) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::data("cannot evaluate on an empty test set"));
    }
    check_compatible(params, test, None)?;
    // Group sequences of similar span so long test pieces do not force every
    // group onto the longest time axis.
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by_key(|&k| test.span(k));
    let mut total = 0.0;
    for group in order.chunks(EVAL_GROUP) {
        let sub = test.select(group);
        let trace = forward(params, &sub, None)?;
        total += ce_loss(&trace, &sub)? * group.len() as f64;
    }
    Ok(total / test.len() as f64)
}

/// Sequence-count weighted mean of [`evaluate`] over several batches.
pub fn evaluate_many(params: &RnnParams, batches: &[SequenceBatch]) -> Result<f64> {
    let count: usize = batches.iter().map(SequenceBatch::len).sum();
    if count == 0 {
        return Err(Error::data("cannot evaluate on an empty set"));
    }
    let mut total = 0.0;
    for b in batches.iter().filter(|b| !b.is_empty()) {
        total += evaluate(params, b)? * b.len() as f64;
    }
    Ok(total / count as f64)
}
