//! Backpropagation through time and its finite-difference oracle.
//!
//! [`bptt`] differentiates [`ce_loss`] ∘ [`forward`] with respect to the clean
//! parameters. When a perturbation plan is active every unrolled step owns its
//! own effective copy of the weights; the clean gradient is the sum over steps
//! of the effective-weight gradients, each multiplied elementwise by the chain
//! factor of its perturbation (`1 + Δ_t` for multiplicative noise, the mask for
//! DropConnect, 1 for additive noise).
//!
//! Gradients are means over the batch, matching the loss normalizer. No
//! clipping is applied anywhere.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ce_loss, ce_loss_difference, forward_with, sequence_weights, ForwardTrace, HiddenActivation, RnnParams,
    SequenceBatch, Shapes, StepWeights, PROB_CLAMP,
};
use crate::perturb::{PerturbationPlan, Weight};

/// Derivatives of the loss, one array per parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub w_ho: Array2<f64>,
    pub b_h: Array1<f64>,
    pub b_o: Array1<f64>,
}

impl Gradients {
    pub fn zeros(shapes: Shapes) -> Self {
        let p = RnnParams::zeros(shapes);
        Gradients {
            w_ih: p.w_ih,
            w_hh: p.w_hh,
            w_ho: p.w_ho,
            b_h: p.b_h,
            b_o: p.b_o,
        }
    }

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

    pub fn is_finite(&self) -> bool {
        self.as_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// `self += other`
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.as_slices_mut().into_iter().zip(other.as_slices()) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.as_slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Loss and exact gradients with the training nonlinearity.
pub fn bptt(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
) -> Result<(f64, Gradients)> {
    bptt_with(params, batch, plan, HiddenActivation::Tanh)
}

pub fn bptt_with(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
    activation: HiddenActivation,
) -> Result<(f64, Gradients)> {
    let trace = forward_with(params, batch, plan, activation)?;
    let loss = ce_loss(&trace, batch)?;
    let shapes = params.shapes();
    let mut grads = Gradients::zeros(shapes);
    let (n, steps, _) = batch.frames().dim();
    let weights = sequence_weights(batch);
    let step_weights = StepWeights::new(params, plan);

    let accumulate = |w: Weight, t: usize, g: &Array2<f64>, out: &mut Array2<f64>| match plan {
        Some(p) => p.accumulate_clean_grad(w, t, g, out),
        None => *out += g,
    };

    // dL/da_{t+1}, carried backwards through the recurrent weights of step t+1.
    let mut da_next: Array2<f64> = Array2::zeros((n, shapes.hidden));
    let mut w_hh_next: Option<Array2<f64>> = None;

    for t in (0..steps).rev() {
        let w = step_weights.at(t);
        let h_t = trace.hidden.index_axis(Axis(1), t);
        let mut dh: Array2<f64> = Array2::zeros((n, shapes.hidden));

        if t + 1 < steps {
            let mut dz = Array2::zeros((n, shapes.output));
            for k in 0..n {
                if t + 1 >= batch.span(k) || weights[k] == 0.0 {
                    continue;
                }
                let y = trace.outputs.slice(s![k, t, ..]);
                let x = batch.frames().slice(s![k, t + 1, ..]);
                let mut row = dz.row_mut(k);
                for ((d, &y), &x) in row.iter_mut().zip(y).zip(x) {
                    // Derivative of the clamped log-likelihood vanishes in the clamp.
                    if y > PROB_CLAMP && y < 1.0 - PROB_CLAMP {
                        *d = weights[k] * (y - x);
                    }
                }
            }
            let g_ho = dz.t().dot(&h_t);
            accumulate(Weight::HiddenOutput, t, &g_ho, &mut grads.w_ho);
            grads.b_o += &dz.sum_axis(Axis(0));
            dh += &dz.dot(w.w_ho.as_ref());
            if let Some(w_hh) = &w_hh_next {
                dh += &da_next.dot(w_hh);
            }
        }

        let mut da = dh;
        da.zip_mut_with(&h_t, |d, &h| *d *= activation.derivative_from_output(h));

        if t > 0 {
            let h_prev = trace.hidden.index_axis(Axis(1), t - 1);
            let g_hh = da.t().dot(&h_prev);
            accumulate(Weight::HiddenHidden, t, &g_hh, &mut grads.w_hh);
        }
        let u_t = batch.frames().index_axis(Axis(1), t);
        let g_ih = da.t().dot(&u_t);
        accumulate(Weight::InputHidden, t, &g_ih, &mut grads.w_ih);
        grads.b_h += &da.sum_axis(Axis(0));

        w_hh_next = Some(w.w_hh.clone().into_owned());
        da_next = da;
    }

    Ok((loss, grads))
}

/// Central differences of a scalar function of a flat vector.
pub fn central_difference<F>(x: &[f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Finite-difference gradient of the loss; `plan` is reused unchanged for
/// every probe.
pub fn finite_diff(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
    eps: f64,
) -> Result<Gradients> {
    finite_diff_with(params, batch, plan, eps, HiddenActivation::Tanh)
}

pub fn finite_diff_with(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
    eps: f64,
    activation: HiddenActivation,
) -> Result<Gradients> {
    if !(eps > 0.0) {
        return Err(Error::contract(format!("eps must be > 0, got {eps}")));
    }
    crate::model::check_compatible(params, batch, plan)?;
    let trace_at = |p: &RnnParams| forward_with(p, batch, plan, activation).expect("compatibility checked");
    let mut grads = Gradients::zeros(params.shapes());
    let mut probe = params.clone();
    for (array, out) in grads.as_slices_mut().into_iter().enumerate() {
        for (j, g) in out.iter_mut().enumerate() {
            let original = params.as_slices()[array][j];
            probe.as_slices_mut()[array][j] = original + eps;
            let plus = trace_at(&probe);
            probe.as_slices_mut()[array][j] = original - eps;
            let minus = trace_at(&probe);
            probe.as_slices_mut()[array][j] = original;
            *g = ce_loss_difference(&plus, &minus, batch) / (2.0 * eps);
        }
    }
    Ok(grads)
}

/// Largest step of the extrapolated difference used by [`grad_check`].
pub const GRAD_CHECK_EPS: f64 = 1e-3;

/// Richardson extrapolation of two central differences,
/// `(4 D(h/2) - D(h)) / 3`, which cancels the `h²` error term. The larger
/// admissible step keeps rounding noise well below what a single central
/// difference needs on small gradient components.
pub fn finite_diff_extrapolated(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
    h: f64,
) -> Result<Gradients> {
    let coarse = finite_diff(params, batch, plan, h)?;
    let mut fine = finite_diff(params, batch, plan, 0.5 * h)?;
    for (f, c) in fine.as_slices_mut().into_iter().zip(coarse.as_slices()) {
        f.iter_mut().zip(c).for_each(|(f, c)| *f = (4.0 * *f - c) / 3.0);
    }
    Ok(fine)
}

/// `max |a - b| / max(1e-8, |a| + |b|)` over all components.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.as_slices()
        .iter()
        .zip(b.as_slices())
        .flat_map(|(x, y)| x.iter().zip(y))
        .map(|(x, y)| (x - y).abs() / (x.abs() + y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares [`bptt`] against [`finite_diff_extrapolated`] and returns the
/// worst relative error.
pub fn grad_check(
    params: &RnnParams,
    batch: &SequenceBatch,
    plan: Option<&PerturbationPlan>,
) -> Result<f64> {
    let (_, analytic) = bptt(params, batch, plan)?;
    let numeric = finite_diff_extrapolated(params, batch, plan, GRAD_CHECK_EPS)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Jacobian `∂h_t / ∂h_k` of sequence `seq` along a clean forward trace:
/// the product of `diag(act'(a_j)) W_hh` for `j = t, ..., k + 1`.
pub fn state_jacobian(
    params: &RnnParams,
    trace: &ForwardTrace,
    seq: usize,
    t: usize,
    k: usize,
) -> Result<Array2<f64>> {
    let steps = trace.hidden.dim().1;
    if k > t || t >= steps || seq >= trace.hidden.dim().0 {
        return Err(Error::contract(format!(
            "need k <= t < {steps} and a valid sequence index, got seq {seq}, t {t}, k {k}"
        )));
    }
    let h = params.shapes().hidden;
    let mut jac = Array2::eye(h);
    for j in (k + 1)..=t {
        let mut step = params.w_hh.clone();
        for (i, mut row) in step.rows_mut().into_iter().enumerate() {
            let d = trace
                .activation
                .derivative_from_output(trace.hidden[[seq, j, i]]);
            row *= d;
        }
        jac = step.dot(&jac);
    }
    Ok(jac)
}
