//! Method-of-moments EFIE solver on closed triangulated PEC surfaces.
//!
//! The electric field integral equation is discretized with RWG functions and
//! regularized by a refinement-free Calderon multiplicative preconditioner built
//! from quasi-Helmholtz projectors: the preconditioned system is Hermitian
//! positive definite and its conditioning is bounded in both frequency and mesh
//! refinement, so it can be solved with plain conjugate gradients all the way
//! into the static limit.
//!
//! Module map:
//! - [`mesh`]: closed triangle meshes, generators, structured refinement, topology;
//! - [`quadrature`]: symmetric Gauss rules on triangles;
//! - [`sparse`]: minimal CSR matrices and Matrix Market export;
//! - [`gram`]: Gram and stiffness matrices of the primal/dual discretization;
//! - [`potential`]: analytic static triangle potentials and kernel moments;
//! - [`efie`]: dense EFIE operator blocks, scalar potential matrices, excitations;
//! - [`loopstar`]: loop/star incidence matrices and quasi-Helmholtz projectors;
//! - [`krylov`]: CG/CGS solvers, power iteration, dense condition numbers;
//! - [`precond`]: the preconditioned system operator, scalings, right-hand sides;
//! - [`farfield`]: far fields, bistatic RCS, Mie reference, error metrics;
//! - [`driver`]: experiment drivers and CSV emission used by the CLI binary.

extern crate blas_src;

pub mod driver;
pub mod efie;
pub mod farfield;
pub mod gram;
pub mod krylov;
pub mod loopstar;
pub mod mesh;
pub mod potential;
pub mod precond;
pub mod quadrature;
pub mod sparse;
pub mod vec3;

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Free-space wave impedance, ohms.
pub const ETA0: f64 = 376.730_313_668;

/// Wavenumber of a time-harmonic field at frequency `f_hz` in vacuum, rad/m.
pub fn wavenumber(f_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * f_hz / C0
}
