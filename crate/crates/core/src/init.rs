//! Sparse Gaussian initialization and spectral-radius control.

use nalgebra::{DMatrix, Schur};
use ndarray::Array2;
use rand::seq::index;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RnnParams, Shapes};
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub sigma_hh: f64,
    pub sigma_ih: f64,
    /// Nonzero incoming recurrent connections per hidden unit.
    pub sparsify_k: usize,
    pub rho_target: f64,
    #[serde(default)]
    pub seed: u64,
}

impl InitSpec {
    pub fn validate(&self, hidden: usize) -> Result<()> {
        if !(self.sigma_hh > 0.0 && self.sigma_ih > 0.0) {
            return Err(Error::contract(format!(
                "init sigmas must be > 0, got sigma_hh={} sigma_ih={}",
                self.sigma_hh, self.sigma_ih
            )));
        }
        if self.sparsify_k == 0 || self.sparsify_k > hidden {
            return Err(Error::contract(format!(
                "sparsify_k must be in [1, {hidden}], got {}",
                self.sparsify_k
            )));
        }
        if !(self.rho_target > 0.0 && self.rho_target.is_finite()) {
            return Err(Error::contract(format!(
                "rho_target must be > 0, got {}",
                self.rho_target
            )));
        }
        Ok(())
    }
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma)
        .map_err(|_| Error::contract(format!("standard deviation must be finite and >= 0, got {sigma}")))
}

/// `rows × cols` matrix whose every row holds exactly `k` nonzero
/// `Normal(0, sigma)` entries at uniformly chosen columns.
pub fn sparse_gaussian(rows: usize, cols: usize, k: usize, sigma: f64, rng: &mut Rng) -> Result<Array2<f64>> {
    if k > cols {
        return Err(Error::contract(format!("k = {k} exceeds {cols} columns")));
    }
    let d = normal(sigma)?;
    let mut m = Array2::zeros((rows, cols));
    for mut row in m.rows_mut() {
        for j in index::sample(rng, cols, k) {
            // A draw of exactly 0.0 would silently lose a connection.
            let mut v = 0.0;
            while v == 0.0 && sigma > 0.0 {
                v = d.sample(rng);
            }
            row[j] = v;
        }
    }
    Ok(m)
}

pub fn dense_gaussian(rows: usize, cols: usize, sigma: f64, rng: &mut Rng) -> Result<Array2<f64>> {
    let d = normal(sigma)?;
    Ok(Array2::from_shape_simple_fn((rows, cols), || d.sample(rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out; `value` is then the last estimate.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Width of the iterated block.
    pub block: usize,
    /// Consecutive sub-tolerance changes required to stop.
    pub patience: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            tol: 1e-10,
            max_iter: 10_000,
            block: 16,
            patience: 3,
        }
    }
}

pub fn spectral_radius(m: &Array2<f64>) -> Result<SpectralEstimate> {
    spectral_radius_with(m, SpectralOptions::default())
}

/// Largest eigenvalue modulus by block power iteration.
///
/// A single power vector stalls when the dominant eigenvalues form a complex
/// pair or nearly tie in modulus, which is the common case for random
/// recurrent matrices. Iterating a small orthonormal block and reading the
/// radius off its Rayleigh–Ritz projection avoids that. The block is
/// re-randomized if it collapses or stagnates.
pub fn spectral_radius_with(m: &Array2<f64>, opts: SpectralOptions) -> Result<SpectralEstimate> {
    let (n, c) = m.dim();
    if n != c {
        return Err(Error::contract(format!("spectral radius of a non-square {n}x{c} matrix")));
    }
    if n == 0 || m.iter().all(|&v| v == 0.0) {
        return Ok(SpectralEstimate { value: 0.0, iterations: 0, converged: true });
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::contract("matrix has non-finite entries"));
    }
    let a = DMatrix::from_row_iterator(n, n, m.iter().copied());
    let p = opts.block.clamp(1, n);
    let mut rng = rng::seeded(0x5eed_5eed);
    let mut q = random_block(n, p, &mut rng);

    let mut estimate = f64::NAN;
    let mut calm = 0;
    let mut since_restart = 0;
    let stagnation = 2_000;
    for it in 1..=opts.max_iter {
        let z = &a * &q;
        let h = q.transpose() * &z;
        let rho = ritz_radius(h);
        let scale = z.norm();
        if scale == 0.0 {
            // A·Q vanished: the block lies in the kernel of a nilpotent part.
            return Ok(SpectralEstimate { value: 0.0, iterations: it, converged: true });
        }
        let change = (rho - estimate).abs();
        estimate = rho;
        if change <= opts.tol * rho.max(1.0) {
            calm += 1;
            if calm >= opts.patience {
                return Ok(SpectralEstimate { value: rho, iterations: it, converged: true });
            }
        } else {
            calm = 0;
        }
        since_restart += 1;
        let collapsed = z.column_iter().any(|col| col.norm() <= 1e-300);
        if collapsed || since_restart >= stagnation {
            q = random_block(n, p, &mut rng);
            since_restart = 0;
            continue;
        }
        q = z.qr().q();
    }
    Ok(SpectralEstimate { value: estimate, iterations: opts.max_iter, converged: false })
}

fn random_block(n: usize, p: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

fn ritz_radius(h: DMatrix<f64>) -> f64 {
    let p = h.nrows();
    let schur = Schur::try_new(h, f64::EPSILON, 10_000 * p.max(1));
    match schur {
        Some(s) => s
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
        None => f64::NAN,
    }
}

/// Scales `m` so its spectral radius becomes `rho_target`.
pub fn rescale_spectral(m: &Array2<f64>, rho_target: f64) -> Result<Array2<f64>> {
    let est = spectral_radius(m)?;
    if !(est.value > 0.0) {
        return Err(Error::contract(
            "cannot rescale a matrix with zero spectral radius",
        ));
    }
    if !est.converged {
        log::warn!(
            "spectral radius did not converge after {} iterations; rescaling by estimate {}",
            est.iterations,
            est.value
        );
    }
    Ok(m * (rho_target / est.value))
}

/// Sparse, spectrally rescaled recurrent weights; dense Gaussian input and
/// output weights; zero biases. Each weight array draws from its own stream.
pub fn init_params(spec: &InitSpec, shapes: Shapes) -> Result<RnnParams> {
    spec.validate(shapes.hidden)?;
    let h = shapes.hidden;
    let raw = sparse_gaussian(h, h, spec.sparsify_k, spec.sigma_hh, &mut rng::seeded_stream(spec.seed, stream::W_HH))?;
    let w_hh = rescale_spectral(&raw, spec.rho_target)?;
    let w_ih = dense_gaussian(h, shapes.input, spec.sigma_ih, &mut rng::seeded_stream(spec.seed, stream::W_IH))?;
    let w_ho = dense_gaussian(shapes.output, h, spec.sigma_ih, &mut rng::seeded_stream(spec.seed, stream::W_HO))?;
    let mut p = RnnParams::zeros(shapes);
    p.w_hh = w_hh;
    p.w_ih = w_ih;
    p.w_ho = w_ho;
    Ok(p)
}
