//! Iterative solvers and small dense spectral utilities.
//!
//! Everything here works on abstract operators so the same solvers run on
//! assembled matrices and on matrix-free preconditioned compositions. CG is
//! the production solver and assumes a Hermitian positive definite operator;
//! it reports a breakdown instead of silently diverging when fed anything
//! else. CGS handles the non-Hermitian comparison runs.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::{Cholesky, Eigh, Inverse, SVD, UPLO};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Array1<Complex64>) -> Array1<Complex64>;

    /// Apply to each column; overridden where a blocked path is cheaper.
    fn apply_block(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        let mut y = Array2::zeros((self.dim(), x.ncols()));
        for (j, col) in x.columns().into_iter().enumerate() {
            let yc = self.apply(&col.to_owned());
            y.column_mut(j).assign(&yc);
        }
        y
    }
}

/// Dense matrix as an operator; apply and apply_block go through BLAS.
pub struct DenseOp {
    pub a: Array2<Complex64>,
}

impl LinearOperator for DenseOp {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply(&self, x: &Array1<Complex64>) -> Array1<Complex64> {
        self.a.dot(x)
    }

    fn apply_block(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        self.a.dot(x)
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("CG breakdown at iteration {iteration}: p'Ap = {curvature:.3e} is not positive (operator not HPD?)")]
    NotPositive { iteration: usize, curvature: f64 },
    #[error("CGS breakdown at iteration {iteration}: {what}")]
    CgsBreakdown { iteration: usize, what: &'static str },
    #[error("did not converge in {max_iter} iterations (last relative residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },
    #[error("linear algebra backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Array1<Complex64>,
    pub iterations: usize,
    /// Relative residual after each iteration.
    pub residuals: Vec<f64>,
    /// False when the iteration cap was hit or the recurrence broke down;
    /// the history up to that point is still returned.
    pub converged: bool,
    pub wall_time: f64,
    pub matvec_count: usize,
    /// Condition number of the operator as seen by CG, from the Lanczos
    /// tridiagonal matrix built out of the CG coefficients. None for CGS.
    pub condition_estimate: Option<f64>,
}

pub fn nrm2(x: &Array1<Complex64>) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inner(x: &Array1<Complex64>, y: &Array1<Complex64>) -> Complex64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// Conjugate gradients for Hermitian positive definite operators. Hitting the
/// iteration cap is not an error: the report comes back with `converged:
/// false` so stagnation studies keep their residual histories.
pub fn cg_solve(
    op: &dyn LinearOperator,
    b: &Array1<Complex64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolveError> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let start = std::time::Instant::now();
    let norm_b = nrm2(b);
    if norm_b == 0.0 {
        return Ok(SolveReport {
            x: Array1::zeros(n),
            iterations: 0,
            residuals: vec![0.0],
            converged: true,
            wall_time: start.elapsed().as_secs_f64(),
            matvec_count: 0,
            condition_estimate: None,
        });
    }

    let mut x: Array1<Complex64> = Array1::zeros(n);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rho = r.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let mut residuals = vec![rho.sqrt() / norm_b];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let ap = op.apply(&p);
        let curvature = inner(&p, &ap).re;
        if curvature <= 0.0 {
            return Err(SolveError::NotPositive { iteration: iterations, curvature });
        }
        let alpha = rho / curvature;
        x.scaled_add(Complex64::new(alpha, 0.0), &p);
        r.scaled_add(Complex64::new(-alpha, 0.0), &ap);
        let rho_new = r.iter().map(|z| z.norm_sqr()).sum::<f64>();
        iterations += 1;
        residuals.push(rho_new.sqrt() / norm_b);
        alphas.push(alpha);
        if rho_new.sqrt() <= tol * norm_b {
            converged = true;
            break;
        }
        let beta = rho_new / rho;
        betas.push(beta);
        p = &r + &p.mapv(|z| z * beta);
        rho = rho_new;
    }
    let cond = if converged { lanczos_condition(&alphas, &betas) } else { None };
    Ok(SolveReport {
        x,
        iterations,
        residuals,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        matvec_count: iterations,
        condition_estimate: cond,
    })
}

/// Eigenvalue span of the Lanczos tridiagonal matrix implied by the CG
/// coefficients; a lower bound on the true spectral condition number that is
/// typically tight once CG has converged.
fn lanczos_condition(alphas: &[f64], betas: &[f64]) -> Option<f64> {
    let m = alphas.len();
    if m < 2 {
        return None;
    }
    let mut t = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        let mut d = 1.0 / alphas[i];
        if i > 0 {
            d += betas[i - 1] / alphas[i - 1];
        }
        t[[i, i]] = d;
        if i + 1 < m {
            let e = betas[i].sqrt() / alphas[i];
            t[[i, i + 1]] = e;
            t[[i + 1, i]] = e;
        }
    }
    let (eigs, _) = t.eigh(UPLO::Lower).ok()?;
    let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        None
    } else {
        Some(max / min)
    }
}

/// Conjugate gradient squared (transpose-free) for general square systems.
/// Two operator applications per iteration. A vanished recurrence coefficient
/// ends the run with `converged: false` rather than discarding the history;
/// that is the normal way a saturating unpreconditioned run finishes.
pub fn cgs_solve(
    op: &dyn LinearOperator,
    b: &Array1<Complex64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolveError> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let start = std::time::Instant::now();
    let norm_b = nrm2(b);
    if norm_b == 0.0 {
        return Ok(SolveReport {
            x: Array1::zeros(n),
            iterations: 0,
            residuals: vec![0.0],
            converged: true,
            wall_time: start.elapsed().as_secs_f64(),
            matvec_count: 0,
            condition_estimate: None,
        });
    }

    let mut x: Array1<Complex64> = Array1::zeros(n);
    let mut r = b.clone();
    let r_shadow = r.clone();
    let mut rho = inner(&r_shadow, &r);
    let mut u = r.clone();
    let mut p = r.clone();
    let mut residuals = vec![1.0];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        if rho.norm() < 1e-300 {
            break;
        }
        let v = op.apply(&p);
        let sigma = inner(&r_shadow, &v);
        if sigma.norm() < 1e-300 {
            break;
        }
        let alpha = rho / sigma;
        let q = &u - &v.mapv(|z| z * alpha);
        let uq = &u + &q;
        let auq = op.apply(&uq);
        x.scaled_add(alpha, &uq);
        r.scaled_add(-alpha, &auq);
        iterations += 1;
        let rel = nrm2(&r) / norm_b;
        residuals.push(rel);
        if rel <= tol {
            converged = true;
            break;
        }
        let rho_new = inner(&r_shadow, &r);
        let beta = rho_new / rho;
        u = &r + &q.mapv(|z| z * beta);
        p = &u + &(&q + &p.mapv(|z| z * beta)).mapv(|z| z * beta);
        rho = rho_new;
    }
    Ok(SolveReport {
        x,
        iterations,
        residuals,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        matvec_count: 2 * iterations,
        condition_estimate: None,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when the Rayleigh quotient was still moving at the cap; the last
    /// estimate is returned anyway and the caller decides whether to warn.
    pub converged: bool,
}

/// Largest eigenvalue of a Hermitian positive semidefinite operator by power
/// iteration with a deterministic seeded start.
pub fn power_iteration(
    op: &dyn LinearOperator,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> PowerEstimate {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Array1<Complex64> = Array1::from_iter(
        (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
    );
    let nx = nrm2(&x);
    x.mapv_inplace(|z| z / nx);

    let mut lambda = 0.0;
    for it in 0..max_iter {
        let y = op.apply(&x);
        let new_lambda = inner(&x, &y).re;
        let ny = nrm2(&y);
        if ny == 0.0 {
            return PowerEstimate { value: 0.0, iterations: it + 1, converged: true };
        }
        x = y.mapv(|z| z / ny);
        if (new_lambda - lambda).abs() <= tol * new_lambda.abs().max(1e-300) {
            return PowerEstimate { value: new_lambda, iterations: it + 1, converged: true };
        }
        lambda = new_lambda;
    }
    PowerEstimate { value: lambda, iterations: max_iter, converged: false }
}

/// Materialize an operator column-by-column in BLAS-friendly slabs.
pub fn materialize(op: &dyn LinearOperator) -> Array2<Complex64> {
    let n = op.dim();
    let mut out = Array2::zeros((n, n));
    let slab = 64;
    let mut j0 = 0;
    while j0 < n {
        let j1 = (j0 + slab).min(n);
        let mut e = Array2::zeros((n, j1 - j0));
        for j in j0..j1 {
            e[[j, j - j0]] = Complex64::new(1.0, 0.0);
        }
        let y = op.apply_block(&e);
        out.slice_mut(s![.., j0..j1]).assign(&y);
        j0 = j1;
    }
    out
}

/// Two-norm condition number by dense SVD of the materialized operator.
/// `cap` guards against accidentally materializing something huge.
pub fn dense_condition(op: &dyn LinearOperator, cap: usize) -> Result<f64, SolveError> {
    let n = op.dim();
    if n > cap {
        return Err(SolveError::Backend(format!(
            "dense condition estimate refused: dimension {n} exceeds cap {cap}"
        )));
    }
    let a = materialize(op);
    condition_of_dense(&a)
}

pub fn condition_of_dense(a: &Array2<Complex64>) -> Result<f64, SolveError> {
    let (_, sv, _) = a.svd(false, false).map_err(|e| SolveError::Backend(e.to_string()))?;
    let smax = sv.iter().cloned().fold(f64::MIN, f64::max);
    let smin = sv.iter().cloned().fold(f64::MAX, f64::min);
    if smin <= 0.0 {
        return Err(SolveError::Backend("singular operator".into()));
    }
    Ok(smax / smin)
}

/// Eigenvalues of the symmetric-definite pencil (A, B): A x = lambda B x with
/// A symmetric and B symmetric positive definite, by Cholesky reduction.
pub fn generalized_eigvals_sym(
    a: &Array2<f64>,
    b: &Array2<f64>,
) -> Result<Array1<f64>, SolveError> {
    let l = b.cholesky(UPLO::Lower).map_err(|e| SolveError::Backend(e.to_string()))?;
    let li = l.inv().map_err(|e| SolveError::Backend(e.to_string()))?;
    let c = li.dot(a).dot(&li.t());
    let c = (&c + &c.t()).mapv(|v| 0.5 * v);
    let (eigs, _) = c.eigh(UPLO::Lower).map_err(|e| SolveError::Backend(e.to_string()))?;
    Ok(eigs)
}

/// Deterministic complex test vector.
pub fn seeded_vector(n: usize, seed: u64) -> Array1<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_iter(
        (0..n).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
    )
}
