//! Loop/star transformation matrices, graph-Laplacian pseudo-inverses, and
//! the quasi-Helmholtz projectors built from them.
//!
//! The loop map takes nodal coefficients to solenoidal edge coefficients, the
//! star map takes patch coefficients to non-solenoidal ones. Signs follow the
//! edge convention (vertices stored ascending, plus cell traverses them in
//! that order): +1 at the lower vertex and the plus cell. With that choice
//! the loop combination of RWG functions reproduces n x grad(lambda_v)
//! pointwise, which pins every identity used by the tests.
//!
//! Projectors never build global loops; the harmonic subspace is reached as
//! the complement I - P_Sigma, which is what makes arbitrary genus free.

use crate::krylov::SolveError;
use crate::mesh::TriangleMesh;
use crate::sparse::{Csr, SignedIncidence};
use ndarray::{Array1, Array2};
use ndarray_linalg::cholesky::InverseC;
use num_complex::Complex64;

/// Edge-by-vertex incidence: one +1/-1 pair per edge row.
pub fn loop_matrix(mesh: &TriangleMesh) -> SignedIncidence {
    let plus = mesh.edges().iter().map(|e| e.verts[0]).collect();
    let minus = mesh.edges().iter().map(|e| e.verts[1]).collect();
    SignedIncidence::new(mesh.n_vertices(), plus, minus)
}

/// Edge-by-cell incidence: +1 at the plus cell, -1 at the minus cell.
pub fn star_matrix(mesh: &TriangleMesh) -> SignedIncidence {
    let plus = mesh.edges().iter().map(|e| e.cell_plus).collect();
    let minus = mesh.edges().iter().map(|e| e.cell_minus).collect();
    SignedIncidence::new(mesh.n_cells(), plus, minus)
}

#[derive(Debug, Clone, Copy)]
pub enum PinvBackend {
    /// Rank-one-shifted dense inverse, symmetrized and kept explicit so block
    /// applies go through one GEMM. Exactly linear and exactly self-adjoint,
    /// which keeps compositions built on it Hermitian to near machine
    /// precision. The default at desk scale.
    DirectShifted,
    /// Jacobi-preconditioned CG on the mean-free complement. Matrix-free and
    /// scalable, but only as linear as its tolerance.
    DeflatedCg { tol: f64, max_iter: usize },
}

impl Default for PinvBackend {
    fn default() -> Self {
        PinvBackend::DirectShifted
    }
}

enum PinvImpl {
    Direct {
        inv: Array2<f64>,
    },
    Cg {
        l: Csr,
        inv_diag: Vec<f64>,
        tol: f64,
        max_iter: usize,
    },
}

/// Moore-Penrose pseudo-inverse of a connected graph Laplacian A^T A, where A
/// is a signed incidence map. The null space is exactly the constants, so
/// (L + 11^T/n)^{-1} = L^+ + 11^T/n, which the direct backend exploits.
pub struct LaplacianPinv {
    n: usize,
    imp: PinvImpl,
}

impl LaplacianPinv {
    pub fn new(inc: &SignedIncidence, backend: PinvBackend) -> Result<LaplacianPinv, SolveError> {
        let n = inc.ncols();
        let l = inc.gram();
        let imp = match backend {
            PinvBackend::DirectShifted => {
                let mut m = l.to_dense();
                let shift = 1.0 / n as f64;
                for i in 0..n {
                    for j in 0..n {
                        m[[i, j]] += shift;
                    }
                }
                let inv = m.invc().map_err(|e| SolveError::Backend(e.to_string()))?;
                let inv = (&inv + &inv.t()).mapv(|v| 0.5 * v);
                PinvImpl::Direct { inv }
            }
            PinvBackend::DeflatedCg { tol, max_iter } => {
                let inv_diag = (0..n)
                    .map(|i| {
                        let d: f64 = l
                            .row(i)
                            .filter_map(|(j, v)| if j == i { Some(v) } else { None })
                            .sum();
                        1.0 / d
                    })
                    .collect();
                PinvImpl::Cg { l, inv_diag, tol, max_iter }
            }
        };
        Ok(LaplacianPinv { n, imp })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn apply_real(&self, x: &[f64]) -> Result<Vec<f64>, SolveError> {
        assert_eq!(x.len(), self.n);
        let mean = x.iter().sum::<f64>() / self.n as f64;
        match &self.imp {
            PinvImpl::Direct { inv } => {
                let b = Array1::from_iter(x.iter().copied());
                let y = inv.dot(&b);
                Ok(y.iter().map(|v| v - mean).collect())
            }
            PinvImpl::Cg { l, inv_diag, tol, max_iter } => {
                let b: Vec<f64> = x.iter().map(|v| v - mean).collect();
                pcg_deflated(l, inv_diag, &b, *tol, *max_iter)
            }
        }
    }

    pub fn apply(&self, x: &Array1<Complex64>) -> Result<Array1<Complex64>, SolveError> {
        let re: Vec<f64> = x.iter().map(|z| z.re).collect();
        let im: Vec<f64> = x.iter().map(|z| z.im).collect();
        let yre = self.apply_real(&re)?;
        let yim = self.apply_real(&im)?;
        Ok(Array1::from_iter(yre.iter().zip(&yim).map(|(&a, &b)| Complex64::new(a, b))))
    }

    /// Column-wise pseudo-inverse; the direct backend batches both real parts
    /// through GEMM, which is what makes materializing preconditioned
    /// operators affordable.
    pub fn apply_block(&self, x: &Array2<Complex64>) -> Result<Array2<Complex64>, SolveError> {
        assert_eq!(x.nrows(), self.n);
        match &self.imp {
            PinvImpl::Direct { inv } => {
                let xr = x.mapv(|z| z.re);
                let xi = x.mapv(|z| z.im);
                let yr = inv.dot(&xr);
                let yi = inv.dot(&xi);
                let mut out = Array2::zeros(x.dim());
                for j in 0..x.ncols() {
                    let mr = xr.column(j).sum() / self.n as f64;
                    let mi = xi.column(j).sum() / self.n as f64;
                    for i in 0..self.n {
                        out[[i, j]] = Complex64::new(yr[[i, j]] - mr, yi[[i, j]] - mi);
                    }
                }
                Ok(out)
            }
            PinvImpl::Cg { .. } => {
                let mut out = Array2::zeros(x.dim());
                for j in 0..x.ncols() {
                    let y = self.apply(&x.column(j).to_owned())?;
                    out.column_mut(j).assign(&y);
                }
                Ok(out)
            }
        }
    }
}

/// Jacobi-preconditioned CG on the mean-free complement of a singular graph
/// Laplacian; both the iterates and the residual are re-deflated to stop
/// null-space drift.
fn pcg_deflated(
    l: &Csr,
    inv_diag: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    let n = b.len();
    let deflate = |v: &mut [f64]| {
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    };
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
    deflate(&mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for iteration in 0..max_iter {
        l.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(SolveError::NotPositive { iteration, curvature: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn <= tol * norm_b {
            deflate(&mut x);
            return Ok(x);
        }
        z = r.iter().zip(inv_diag).map(|(a, d)| a * d).collect();
        deflate(&mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    Err(SolveError::NoConvergence { max_iter, residual: f64::NAN })
}

/// The quasi-Helmholtz projectors. P_Sigma projects onto the non-solenoidal
/// (star) range; its complement P_LambdaH covers loops and harmonic fields
/// together, so no global-loop basis is ever needed.
pub struct Projectors {
    pub lambda: SignedIncidence,
    pub sigma: SignedIncidence,
    pub loop_pinv: LaplacianPinv,
    pub star_pinv: LaplacianPinv,
}

impl Projectors {
    pub fn new(mesh: &TriangleMesh, backend: PinvBackend) -> Result<Projectors, SolveError> {
        let lambda = loop_matrix(mesh);
        let sigma = star_matrix(mesh);
        let loop_pinv = LaplacianPinv::new(&lambda, backend)?;
        let star_pinv = LaplacianPinv::new(&sigma, backend)?;
        Ok(Projectors { lambda, sigma, loop_pinv, star_pinv })
    }

    pub fn n_edges(&self) -> usize {
        self.sigma.nrows()
    }

    /// P_Sigma x = Sigma (Sigma^T Sigma)^+ Sigma^T x
    pub fn p_sigma(&self, x: &Array1<Complex64>) -> Result<Array1<Complex64>, SolveError> {
        let st = self.sigma.apply_t(x);
        let y = self.star_pinv.apply(&st)?;
        Ok(self.sigma.apply(&y))
    }

    /// P_LambdaH x = x - P_Sigma x (loops plus harmonic space).
    pub fn p_lambda_h(&self, x: &Array1<Complex64>) -> Result<Array1<Complex64>, SolveError> {
        Ok(x - &self.p_sigma(x)?)
    }

    /// P_Lambda x = Lambda (Lambda^T Lambda)^+ Lambda^T x (local loops only).
    pub fn p_lambda(&self, x: &Array1<Complex64>) -> Result<Array1<Complex64>, SolveError> {
        let lt = self.lambda.apply_t(x);
        let y = self.loop_pinv.apply(&lt)?;
        Ok(self.lambda.apply(&y))
    }

    /// P_SigmaH x = x - P_Lambda x (stars plus harmonic space).
    pub fn p_sigma_h(&self, x: &Array1<Complex64>) -> Result<Array1<Complex64>, SolveError> {
        Ok(x - &self.p_lambda(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::{gram_ff, laplace_beltrami};
    use crate::krylov::{nrm2, seeded_vector};
    use crate::mesh::{genus2_fixture, make_sphere, make_torus};
    use ndarray::Array2;
    use ndarray_linalg::SVD;

    fn frob(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn loop_star_orthogonality_is_integer_exact() {
        for mesh in [make_sphere(1.0, 1), make_torus(1.5, 0.4, 8, 6), genus2_fixture()] {
            let lambda = loop_matrix(&mesh);
            let sigma = star_matrix(&mesh);
            let prod = lambda.transpose_product(&sigma);
            assert!(prod.iter().all(|&v| v == 0), "Lambda^T Sigma != 0");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        // The null vectors behind the projector algebra: constants on
        // vertices and cells map to zero, and the two maps stay orthogonal,
        // all in integer arithmetic, on every torus parameterization.
        #[test]
        fn incidence_identities_hold_across_torus_family(
            n_major in 3usize..9,
            n_minor in 3usize..7,
        ) {
            let mesh = make_torus(2.0, 0.8, n_major, n_minor);
            let lambda = loop_matrix(&mesh);
            let sigma = star_matrix(&mesh);
            proptest::prop_assert!(lambda.transpose_product(&sigma).iter().all(|&v| v == 0));
            let ones_v = vec![1.0; mesh.n_vertices()];
            let ones_c = vec![1.0; mesh.n_cells()];
            proptest::prop_assert!(lambda.apply_real(&ones_v).iter().all(|&v| v == 0.0));
            proptest::prop_assert!(sigma.apply_real(&ones_c).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn loop_sign_convention_reproduces_stiffness_matrix() {
        for mesh in [make_sphere(1.0, 1), genus2_fixture()] {
            let lambda = loop_matrix(&mesh).to_csr().to_dense();
            let gff = gram_ff(&mesh).to_dense();
            let delta = laplace_beltrami(&mesh).to_dense();
            let lhs = lambda.t().dot(&gff).dot(&lambda);
            let rel = frob(&(&lhs - &delta)) / frob(&delta);
            assert!(rel < 1e-10, "Lambda^T G_ff Lambda vs Delta: {rel}");
        }
    }

    #[test]
    fn direct_pinv_matches_svd_oracle() {
        let mesh = make_sphere(1.0, 1);
        for inc in [loop_matrix(&mesh), star_matrix(&mesh)] {
            let pinv = LaplacianPinv::new(&inc, PinvBackend::DirectShifted).unwrap();
            let l = inc.gram().to_dense();
            let (u, s, vt) = l.svd(true, true).unwrap();
            let (u, vt) = (u.unwrap(), vt.unwrap());
            let smax = s.iter().cloned().fold(0.0, f64::max);
            let x = seeded_vector(inc.ncols(), 17);
            let xr: Vec<f64> = x.iter().map(|z| z.re).collect();
            let y = pinv.apply_real(&xr).unwrap();

            // pinv via SVD with relative cutoff.
            let utx = u.t().dot(&Array1::from_vec(xr.clone()));
            let scaled = Array1::from_iter(
                utx.iter().zip(s.iter()).map(|(v, &sv)| {
                    if sv > 1e-10 * smax {
                        v / sv
                    } else {
                        0.0
                    }
                }),
            );
            let oracle = vt.t().dot(&scaled);
            let diff = (0..inc.ncols())
                .map(|i| (y[i] - oracle[i]).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff < 1e-10 * scale, "pinv mismatch {diff} vs scale {scale}");
        }
    }

    #[test]
    fn cg_backend_agrees_with_direct() {
        let mesh = make_torus(1.5, 0.4, 8, 6);
        let inc = star_matrix(&mesh);
        let direct = LaplacianPinv::new(&inc, PinvBackend::DirectShifted).unwrap();
        let cg = LaplacianPinv::new(
            &inc,
            PinvBackend::DeflatedCg { tol: 1e-14, max_iter: 10_000 },
        )
        .unwrap();
        let x = seeded_vector(inc.ncols(), 23);
        let a = direct.apply(&x).unwrap();
        let b = cg.apply(&x).unwrap();
        let rel = nrm2(&(&a - &b)) / nrm2(&a);
        assert!(rel < 1e-10, "backend disagreement {rel}");

        // Block apply agrees with column-wise apply on both backends.
        let n = inc.ncols();
        let mut xs = Array2::zeros((n, 3));
        for j in 0..3 {
            xs.column_mut(j).assign(&seeded_vector(n, 40 + j as u64));
        }
        for pinv in [&direct, &cg] {
            let yb = pinv.apply_block(&xs).unwrap();
            for j in 0..3 {
                let yc = pinv.apply(&xs.column(j).to_owned()).unwrap();
                let d = nrm2(&(&yb.column(j).to_owned() - &yc));
                assert!(d < 1e-12 * nrm2(&yc).max(1.0), "block column {j}: {d}");
            }
        }
    }

    #[test]
    fn projector_algebra() {
        let mesh = make_torus(1.5, 0.4, 8, 6);
        let pr = Projectors::new(&mesh, PinvBackend::DirectShifted).unwrap();
        let n = pr.n_edges();
        let x = seeded_vector(n, 31);

        let ps = pr.p_sigma(&x).unwrap();
        let ph = pr.p_lambda_h(&x).unwrap();
        // Idempotent and mutually annihilating.
        assert!(nrm2(&(&pr.p_sigma(&ps).unwrap() - &ps)) < 1e-11 * nrm2(&x));
        assert!(nrm2(&(&pr.p_lambda_h(&ph).unwrap() - &ph)) < 1e-11 * nrm2(&x));
        assert!(nrm2(&pr.p_sigma(&ph).unwrap()) < 1e-11 * nrm2(&x));

        // Range reproduction: P_Sigma fixes star fields, P_LambdaH loop fields.
        let zc = seeded_vector(mesh.n_cells(), 5);
        let sz = pr.sigma.apply(&zc);
        assert!(nrm2(&(&pr.p_sigma(&sz).unwrap() - &sz)) < 1e-11 * nrm2(&sz));
        let zv = seeded_vector(mesh.n_vertices(), 6);
        let lz = pr.lambda.apply(&zv);
        assert!(nrm2(&(&pr.p_lambda_h(&lz).unwrap() - &lz)) < 1e-11 * nrm2(&lz));
        assert!(nrm2(&pr.p_sigma(&lz).unwrap()) < 1e-11 * nrm2(&lz));

        // Local-loop projector also fixes loop fields.
        assert!(nrm2(&(&pr.p_lambda(&lz).unwrap() - &lz)) < 1e-11 * nrm2(&lz));

        // Symmetry of P_Sigma.
        let y = seeded_vector(n, 32);
        let a = crate::krylov::inner(&y, &pr.p_sigma(&x).unwrap());
        let b = crate::krylov::inner(&pr.p_sigma(&y).unwrap(), &x);
        assert!((a - b).norm() < 1e-11 * nrm2(&x) * nrm2(&y));
    }

    #[test]
    fn harmonic_dimension_counts_genus() {
        // trace(P_LambdaH) = N_V - 1 + 2g on a closed connected mesh.
        for (mesh, genus) in
            [(make_sphere(1.0, 1), 0usize), (make_torus(1.5, 0.4, 6, 4), 1), (genus2_fixture(), 2)]
        {
            let pr = Projectors::new(&mesh, PinvBackend::DirectShifted).unwrap();
            let n = pr.n_edges();
            let mut trace = 0.0;
            for i in 0..n {
                let mut e = Array1::zeros(n);
                e[i] = Complex64::new(1.0, 0.0);
                trace += pr.p_lambda_h(&e).unwrap()[i].re;
            }
            let expected = (mesh.n_vertices() - 1 + 2 * genus) as f64;
            assert!(
                (trace - expected).abs() < 1e-8,
                "genus {genus}: trace {trace} vs {expected}"
            );

            // The local-loop projector misses exactly the 2g harmonic modes.
            let mut trace_local = 0.0;
            for i in 0..n {
                let mut e = Array1::zeros(n);
                e[i] = Complex64::new(1.0, 0.0);
                trace_local += pr.p_lambda(&e).unwrap()[i].re;
            }
            assert!((trace - trace_local - 2.0 * genus as f64).abs() < 1e-8);
        }
    }
}
