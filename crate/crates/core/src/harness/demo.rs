//! Loss surface of a single sigmoid unit iterated from zero towards a target.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sigmoid;
use crate::perturb::RegPenaltySpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub steps: usize,
    pub target: f64,
    pub w_range: (f64, f64),
    pub b_range: (f64, f64),
    /// Grid points per axis.
    pub resolution: usize,
    pub penalty: Option<RegPenaltySpec>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            steps: 50,
            target: 0.7,
            w_range: (-10.0, 10.0),
            b_range: (-10.0, 10.0),
            resolution: 100,
            penalty: None,
        }
    }
}

/// `x_0 = 0`, `x_t = sigmoid(w x_{t-1} + b)`; returns `x_steps`.
pub fn iterate_unit(w: f64, b: f64, steps: usize) -> f64 {
    (0..steps).fold(0.0, |x, _| sigmoid(w * x + b))
}

/// `(x_T - z)^2` plus the optional penalty on `w` and `b`.
pub fn demo_loss(w: f64, b: f64, steps: usize, target: f64, penalty: Option<&RegPenaltySpec>) -> f64 {
    let x = iterate_unit(w, b, steps);
    let reg = penalty.map_or(0.0, |p| p.scalar(w).0 + p.scalar(b).0);
    (x - target).powi(2) + reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// `loss[[i, j]]` at `(w[i], b[j])`.
    pub loss: Array2<f64>,
}

fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
    let (lo, hi) = range;
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn demo_surface(cfg: &DemoConfig) -> Result<Surface> {
    if cfg.resolution < 2 {
        return Err(Error::contract(format!("resolution must be >= 2, got {}", cfg.resolution)));
    }
    for (name, (lo, hi)) in [("w", cfg.w_range), ("b", cfg.b_range)] {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::contract(format!("{name} range must satisfy lo < hi, got ({lo}, {hi})")));
        }
    }
    if let Some(p) = &cfg.penalty {
        p.validate()?;
    }
    let w = axis(cfg.w_range, cfg.resolution);
    let b = axis(cfg.b_range, cfg.resolution);
    let loss = Array2::from_shape_fn((w.len(), b.len()), |(i, j)| {
        demo_loss(w[i], b[j], cfg.steps, cfg.target, cfg.penalty.as_ref())
    });
    Ok(Surface { w, b, loss })
}

/// Central differences of `values` sampled at `coords`, one-sided at the ends.
fn diff(values: &[f64], coords: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (values[hi] - values[lo]) / (coords[hi] - coords[lo])
        })
        .collect()
}

impl Surface {
    /// `∂L/∂w` estimated from the grid.
    pub fn grad_w(&self) -> Array2<f64> {
        let mut g = Array2::zeros(self.loss.dim());
        for j in 0..self.b.len() {
            let col: Vec<f64> = self.loss.column(j).to_vec();
            for (i, v) in diff(&col, &self.w).into_iter().enumerate() {
                g[[i, j]] = v;
            }
        }
        g
    }

    /// `∂L/∂b` estimated from the grid.
    pub fn grad_b(&self) -> Array2<f64> {
        let mut g = Array2::zeros(self.loss.dim());
        for i in 0..self.w.len() {
            let row: Vec<f64> = self.loss.row(i).to_vec();
            for (j, v) in diff(&row, &self.b).into_iter().enumerate() {
                g[[i, j]] = v;
            }
        }
        g
    }

    /// Largest gradient norm along each row (fixed `w`).
    pub fn row_max_gradient(&self) -> Vec<f64> {
        let (gw, gb) = (self.grad_w(), self.grad_b());
        (0..self.w.len())
            .map(|i| {
                (0..self.b.len())
                    .map(|j| gw[[i, j]].hypot(gb[[i, j]]))
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Largest `|∂L/∂w|` over grid points with `w > w_min`.
    pub fn max_grad_w_above(&self, w_min: f64) -> f64 {
        let g = self.grad_w();
        let mut m: f64 = 0.0;
        for (i, &w) in self.w.iter().enumerate() {
            if w > w_min {
                m = g.row(i).iter().fold(m, |m, v| m.max(v.abs()));
            }
        }
        m
    }

    pub fn max_grad_w(&self) -> f64 {
        self.max_grad_w_above(f64::NEG_INFINITY)
    }

    pub fn points(&self) -> usize {
        self.loss.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["w", "b", "loss"])?;
        for (i, w) in self.w.iter().enumerate() {
            for (j, b) in self.b.iter().enumerate() {
                out.write_record([w.to_string(), b.to_string(), self.loss[[i, j]].to_string()])?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}
