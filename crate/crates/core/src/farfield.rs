//! Far fields, bistatic radar cross sections, and the Mie reference.
//!
//! The radiation integral is evaluated per observation direction with the
//! e^{-ik r_hat . r'} kernel and the transverse projection applied. Currents
//! are the impedance-normalized coefficients the solver works in, so the
//! cross section of a unit-amplitude incident wave is
//! sigma = k^2 |F|^2 / (4 pi).
//!
//! Divergence-free currents radiate only through the first and higher
//! moments of the kernel; their zeroth moment vanishes analytically but not
//! in floating point, and far below resonance the rounding residue dwarfs
//! the true O(k) radiation. [`far_field_solenoidal`] therefore integrates
//! against e^{-ik r_hat . r'} - 1, dropping the exact zero structurally, the
//! same maneuver the excitation assembly uses on its constant-field part.

use crate::mesh::TriangleMesh;
use crate::quadrature::TriangleRule;
use crate::vec3::{self, Vec3};
use ndarray::Array1;
use num_complex::Complex64;
use std::f64::consts::PI;

const FARFIELD_DEGREE: u32 = 5;

/// Mie series below this electrical size loses its leading term to rounding;
/// the closed dipole form takes over.
const RAYLEIGH_SWITCH: f64 = 1e-6;

/// Transverse radiation vectors of an RWG coefficient vector, one per
/// observation direction (unit vectors).
pub fn far_field(
    mesh: &TriangleMesh,
    j: &Array1<Complex64>,
    k: f64,
    dirs: &[Vec3],
) -> Vec<[Complex64; 3]> {
    radiation(mesh, j, k, dirs, false)
}

/// Same integral with the static moment of the kernel removed. Only valid
/// for coefficient vectors in the solenoidal (loop plus harmonic) range,
/// where that moment is exactly zero; keeps the O(k) radiation of such
/// currents relative-accurate at arbitrarily small wavenumbers.
pub fn far_field_solenoidal(
    mesh: &TriangleMesh,
    j: &Array1<Complex64>,
    k: f64,
    dirs: &[Vec3],
) -> Vec<[Complex64; 3]> {
    radiation(mesh, j, k, dirs, true)
}

fn radiation(
    mesh: &TriangleMesh,
    j: &Array1<Complex64>,
    k: f64,
    dirs: &[Vec3],
    oscillatory_only: bool,
) -> Vec<[Complex64; 3]> {
    assert_eq!(j.len(), mesh.n_edges());
    let rule = TriangleRule::with_degree(FARFIELD_DEGREE);
    let mut out = vec![[Complex64::new(0.0, 0.0); 3]; dirs.len()];
    for c in 0..mesh.n_cells() {
        let area = mesh.area(c);
        let half_inv_area = 0.5 / area;
        let ce = mesh.cell_edges(c);
        for (r, w) in rule.on_triangle(&mesh.cell_points(c), area) {
            // Weighted current density at the quadrature point.
            let mut cur = [Complex64::new(0.0, 0.0); 3];
            for edge in ce {
                let f = vec3::scale(
                    vec3::sub(r, mesh.vertices()[edge.opp]),
                    edge.sign * half_inv_area * w,
                );
                let cj = j[edge.edge];
                for i in 0..3 {
                    cur[i] += cj * f[i];
                }
            }
            for (d, dir) in dirs.iter().enumerate() {
                let theta = -k * vec3::dot(*dir, r);
                let kernel = if oscillatory_only {
                    // e^{i theta} - 1, accurate for tiny phases.
                    let half = 0.5 * theta;
                    let s = half.sin();
                    Complex64::new(-2.0 * s * s, 2.0 * s * half.cos())
                } else {
                    Complex64::from_polar(1.0, theta)
                };
                for i in 0..3 {
                    out[d][i] += cur[i] * kernel;
                }
            }
        }
    }
    // Keep only the component transverse to the observation direction.
    for (d, dir) in dirs.iter().enumerate() {
        let radial = out[d][0] * dir[0] + out[d][1] * dir[1] + out[d][2] * dir[2];
        for i in 0..3 {
            out[d][i] -= radial * dir[i];
        }
    }
    out
}

/// Bistatic cross section of a unit-amplitude incident wave, linear scale.
pub fn rcs_bistatic(field: &[[Complex64; 3]], k: f64) -> Vec<f64> {
    field
        .iter()
        .map(|f| {
            let mag2 = f.iter().map(|z| z.norm_sqr()).sum::<f64>();
            k * k * mag2 / (4.0 * PI)
        })
        .collect()
}

/// 10 log10(sigma / 1 m^2).
pub fn sigma_to_dbsm(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|s| 10.0 * s.max(f64::MIN_POSITIVE).log10()).collect()
}

/// ||a - b||_2 / ||b||_2 in percent.
pub fn l2_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "curves sampled on different grids");
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    100.0 * (diff / norm).sqrt()
}

/// One observation cut at fixed azimuth with its cross section.
pub struct FarFieldCut {
    /// Polar angles, radians, measured from the incidence axis.
    pub theta: Vec<f64>,
    pub phi: f64,
    pub field: Vec<[Complex64; 3]>,
    pub sigma: Vec<f64>,
}

/// Polar angles and unit directions of the phi = 0 cut over [0, 180] deg.
pub fn phi0_directions(step_deg: f64) -> (Vec<f64>, Vec<Vec3>) {
    assert!(step_deg > 0.0);
    let n = (180.0 / step_deg).round() as usize;
    let mut theta = Vec::with_capacity(n + 1);
    let mut dirs = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = (i as f64) * step_deg * PI / 180.0;
        theta.push(t);
        dirs.push([t.sin(), 0.0, t.cos()]);
    }
    (theta, dirs)
}

/// Cut of the total far field of a Helmholtz-split current: the solenoidal
/// part radiates through the oscillatory kernel, the rest through the full
/// one. Pass a zero solenoidal part to evaluate an unsplit current.
pub fn bistatic_cut(
    mesh: &TriangleMesh,
    j_solenoidal: &Array1<Complex64>,
    j_rest: &Array1<Complex64>,
    k: f64,
    step_deg: f64,
) -> FarFieldCut {
    let (theta, dirs) = phi0_directions(step_deg);
    let mut field = far_field_solenoidal(mesh, j_solenoidal, k, &dirs);
    let rest = far_field(mesh, j_rest, k, &dirs);
    for (a, b) in field.iter_mut().zip(&rest) {
        for i in 0..3 {
            a[i] += b[i];
        }
    }
    let sigma = rcs_bistatic(&field, k);
    FarFieldCut { theta, phi: 0.0, field, sigma }
}

/// Bistatic cross section of a PEC sphere, E-plane cut (incidence along +z,
/// polarization in the phi = 0 plane), unit incident amplitude. Angles are
/// scattering angles from the forward direction.
pub fn mie_rcs(radius: f64, k: f64, theta: &[f64]) -> Vec<f64> {
    let x = k * radius;
    assert!(x > 0.0 && x < 30.0, "electrical size {x} outside supported range");
    if x < RAYLEIGH_SWITCH {
        return rayleigh_rcs(radius, k, theta);
    }
    let n_max = ((x + 4.0 * x.cbrt() + 2.0).ceil() as usize).max(10);
    mie_rcs_series(radius, k, theta, n_max)
}

/// Static-limit dipole mixture: the electric dipole of a PEC sphere is twice
/// the magnetic one with opposite sign, giving sigma =
/// pi a^2 x^4 (1 - 2 cos theta)^2 on the E-plane.
fn rayleigh_rcs(radius: f64, k: f64, theta: &[f64]) -> Vec<f64> {
    let x = k * radius;
    let scale = PI * radius * radius * x.powi(4);
    theta
        .iter()
        .map(|t| {
            let m = 1.0 - 2.0 * t.cos();
            scale * m * m
        })
        .collect()
}

fn mie_rcs_series(radius: f64, k: f64, theta: &[f64], n_max: usize) -> Vec<f64> {
    let x = k * radius;
    let jn = bessel_j(n_max, x);
    let yn = bessel_y(n_max, x);

    // Riccati-Bessel ratios: a_n = psi_n'/xi_n', b_n = psi_n/xi_n with
    // psi = x j_n, chi = -x y_n, xi = psi - i chi.
    let mut a = vec![Complex64::new(0.0, 0.0); n_max + 1];
    let mut b = vec![Complex64::new(0.0, 0.0); n_max + 1];
    for n in 1..=n_max {
        let jp = jn[n - 1] - ((n + 1) as f64 / x) * jn[n];
        let yp = yn[n - 1] - ((n + 1) as f64 / x) * yn[n];
        let psi = x * jn[n];
        let psi_p = jn[n] + x * jp;
        let chi = -x * yn[n];
        let chi_p = -(yn[n] + x * yp);
        let xi = Complex64::new(psi, -chi);
        let xi_p = Complex64::new(psi_p, -chi_p);
        a[n] = Complex64::new(psi_p, 0.0) / xi_p;
        b[n] = Complex64::new(psi, 0.0) / xi;
    }

    theta
        .iter()
        .map(|t| {
            let mu = t.cos();
            // Angular functions pi_n, tau_n by upward recurrence.
            let mut pi_prev = 0.0;
            let mut pi_cur = 1.0;
            let mut s2 = Complex64::new(0.0, 0.0);
            for n in 1..=n_max {
                let tau = n as f64 * mu * pi_cur - (n + 1) as f64 * pi_prev;
                let w = (2 * n + 1) as f64 / (n * (n + 1)) as f64;
                s2 += (a[n] * tau + b[n] * pi_cur) * w;
                let pi_next = ((2 * n + 1) as f64 * mu * pi_cur - (n + 1) as f64 * pi_prev)
                    / n as f64;
                pi_prev = pi_cur;
                pi_cur = pi_next;
            }
            4.0 * PI * s2.norm_sqr() / (k * k)
        })
        .collect()
}

/// Spherical Bessel j_0..j_n by the ascending series, stable at small
/// arguments where upward recurrence is not.
fn bessel_j(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let x2 = -0.5 * x * x;
    for n in 0..=n_max {
        let mut term = x.powi(n as i32) / double_factorial(2 * n + 1);
        let mut sum = term;
        for m in 1..200 {
            term *= x2 / (m as f64 * (2 * (n + m) + 1) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        out.push(sum);
    }
    out
}

/// Spherical Bessel y_0..y_n; upward recurrence is stable for this kind.
fn bessel_y(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(-x.cos() / x);
    if n_max >= 1 {
        out.push(-x.cos() / (x * x) - x.sin() / x);
    }
    for n in 1..n_max {
        let next = ((2 * n + 1) as f64 / x) * out[n] - out[n - 1];
        out.push(next);
    }
    out
}

fn double_factorial(n: usize) -> f64 {
    let mut p = 1.0;
    let mut m = n;
    while m > 1 {
        p *= m as f64;
        m -= 2;
    }
    p
}
