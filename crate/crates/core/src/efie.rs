//! Galerkin assembly of the electric-field integral operator blocks and
//! excitation vectors on unnormalized RWG functions.
//!
//! Every block of one sweep comes from the same four kernel moments per cell
//! pair, so the cross identities between the edge, cell, and vertex spaces
//! (loop contraction of the vector block equals the hypersingular block, star
//! expansion of the patch block equals the scalar block) hold to rounding,
//! not to quadrature accuracy. Those identities pin all relative signs.

use crate::gram::{lambda_moment, rot_lambda};
use crate::mesh::TriangleMesh;
use crate::potential::MomentEngine;
use crate::quadrature::TriangleRule;
use crate::vec3::{self, Vec3};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("combined operator needs k > 0; assemble the static blocks instead")]
    StaticWavenumber,
    #[error("polarization not orthogonal to propagation direction (dot = {0:e})")]
    ObliquePolarization(f64),
    #[error("edge index {index} out of range ({n_edges} edges)")]
    EdgeOutOfRange { index: usize, n_edges: usize },
}

/// Edge-space EFIE blocks at one wavenumber, without their k prefactors,
/// plus the cell-pair single-layer matrix they share.
pub struct DynamicBlocks {
    /// Vector-potential block, N x N.
    pub t_a: Array2<Complex64>,
    /// Scalar-potential block, N x N.
    pub t_phi: Array2<Complex64>,
    /// Patch single-layer matrix, N_C x N_C; the scalar block factors through
    /// it as t_phi = Sigma v Sigma^T exactly.
    pub v: Array2<Complex64>,
    pub k: f64,
}

/// Static (k = 0) scalar blocks: the electrostatic patch matrix and the
/// vertex-pair hypersingular matrix.
pub struct StaticBlocks {
    pub v: Array2<f64>,
    pub w: Array2<f64>,
}

struct CellData {
    area: f64,
    /// Free-vertex coordinates opposite each of the three cell edges.
    opp: [Vec3; 3],
}

fn cell_data(mesh: &TriangleMesh) -> Vec<CellData> {
    (0..mesh.n_cells())
        .map(|c| {
            let ce = mesh.cell_edges(c);
            CellData {
                area: mesh.area(c),
                opp: [
                    mesh.vertices()[ce[0].opp],
                    mesh.vertices()[ce[1].opp],
                    mesh.vertices()[ce[2].opp],
                ],
            }
        })
        .collect()
}

fn cdot(p: Vec3, d: &[Complex64; 3]) -> Complex64 {
    d[0] * p[0] + d[1] * p[1] + d[2] * p[2]
}

/// Assemble the dynamic blocks. k = 0 is allowed and produces the static
/// limits of t_a and t_phi (both real-valued).
pub fn assemble_dynamic(mesh: &TriangleMesh, k: f64) -> DynamicBlocks {
    assemble_dynamic_with(mesh, k, MomentEngine::new(mesh, k))
}

/// Same with explicit quadrature tiers, for convergence and oracle runs.
pub fn assemble_dynamic_tiers(mesh: &TriangleMesh, k: f64, degrees: [u32; 3]) -> DynamicBlocks {
    assemble_dynamic_with(mesh, k, MomentEngine::with_tier_degrees(mesh, k, degrees))
}

fn assemble_dynamic_with(mesh: &TriangleMesh, k: f64, engine: MomentEngine) -> DynamicBlocks {
    let n = mesh.n_edges();
    let nc = mesh.n_cells();
    let cells = cell_data(mesh);
    let mut t_a = Array2::zeros((n, n));
    let mut t_phi = Array2::zeros((n, n));
    let mut v = Array2::zeros((nc, nc));

    for c in 0..nc {
        for cp in c..nc {
            let m = engine.moments(c, cp);
            let inv_aa = 1.0 / (cells[c].area * cells[cp].area);
            v[[c, cp]] = m.d00 * inv_aa;
            v[[cp, c]] = m.d00 * inv_aa;

            let ec = mesh.cell_edges(c);
            let ecp = mesh.cell_edges(cp);
            for (i, a) in ec.iter().enumerate() {
                let pm = cells[c].opp[i];
                for (j, b) in ecp.iter().enumerate() {
                    let pn = cells[cp].opp[j];
                    // (r - pm).(r' - pn) expanded in moments, grouped so the
                    // transposed pair evaluates bitwise identically; together
                    // with the shared moments this makes t_a exactly
                    // symmetric.
                    let q = (m.d11 + m.d00 * vec3::dot(pm, pn))
                        - (cdot(pn, &m.d10) + cdot(pm, &m.d01));
                    let s = a.sign * b.sign;
                    t_a[[a.edge, b.edge]] += q * (0.25 * s * inv_aa);
                    t_phi[[a.edge, b.edge]] += m.d00 * (s * inv_aa);
                    if c != cp {
                        t_a[[b.edge, a.edge]] += q * (0.25 * s * inv_aa);
                        t_phi[[b.edge, a.edge]] += m.d00 * (s * inv_aa);
                    }
                }
            }
        }
    }
    DynamicBlocks { t_a, t_phi, v, k }
}

/// Assemble the electrostatic patch matrix and the hypersingular vertex
/// matrix from one static moment sweep.
pub fn assemble_static(mesh: &TriangleMesh) -> StaticBlocks {
    let engine = MomentEngine::new(mesh, 0.0);
    let nc = mesh.n_cells();
    let nv = mesh.n_vertices();
    let cells = cell_data(mesh);
    let rot: Vec<[Vec3; 3]> = (0..nc).map(|c| rot_lambda(mesh, c)).collect();
    let mut v = Array2::zeros((nc, nc));
    let mut w = Array2::zeros((nv, nv));

    for c in 0..nc {
        for cp in c..nc {
            let d00 = engine.moments(c, cp).d00.re;
            let inv_aa = 1.0 / (cells[c].area * cells[cp].area);
            v[[c, cp]] = d00 * inv_aa;
            v[[cp, c]] = d00 * inv_aa;

            let vc = mesh.cells()[c];
            let vcp = mesh.cells()[cp];
            for i in 0..3 {
                for j in 0..3 {
                    let g = vec3::dot(rot[c][i], rot[cp][j]) * d00;
                    w[[vc[i], vcp[j]]] += g;
                    if c != cp {
                        w[[vcp[j], vc[i]]] += g;
                    }
                }
            }
        }
    }
    StaticBlocks { v, w }
}

/// The combined operator ik t_a + (1/ik) t_phi. Rejects k = 0, where only
/// the separate static blocks are meaningful.
pub fn assemble_t(mesh: &TriangleMesh, k: f64) -> Result<Array2<Complex64>, AssemblyError> {
    if k <= 0.0 {
        return Err(AssemblyError::StaticWavenumber);
    }
    Ok(combine_t(&assemble_dynamic(mesh, k)))
}

pub fn combine_t(blocks: &DynamicBlocks) -> Array2<Complex64> {
    let ik = Complex64::new(0.0, blocks.k);
    let mut t = blocks.t_a.mapv(|z| z * ik);
    t.scaled_add(1.0 / ik, &blocks.t_phi);
    t
}

/// Rank-one deflation of the hypersingular block: w plus the outer product of
/// the nodal Gram moment, positive definite and equal to w on the moment's
/// orthogonal complement.
pub fn deflected_w(mesh: &TriangleMesh, w: &Array2<f64>) -> Array2<f64> {
    let m = lambda_moment(mesh);
    let mut out = w.clone();
    for i in 0..m.len() {
        for j in 0..m.len() {
            out[[i, j]] += m[i] * m[j];
        }
    }
    out
}

const EXCITATION_DEGREE: u32 = 5;

/// Excitation moments together with their oscillatory fluctuation.
///
/// The constant field at zero phase is discretely an exact patch gradient, so
/// its loop content is zero to the last bit of the analysis (not of floating
/// point). `fluct` holds the moments of E minus that constant part, computed
/// pointwise in quadrature; its entries are O(k) with full relative accuracy,
/// which is what lets loop-side contractions of the excitation survive
/// division by k at arbitrarily small wavenumber. When no analytic split is
/// available (delta gaps), `fluct` simply repeats `full`.
pub struct ExcitationSplit {
    pub full: Array1<Complex64>,
    pub fluct: Array1<Complex64>,
}

impl ExcitationSplit {
    pub fn undivided(e: Array1<Complex64>) -> ExcitationSplit {
        ExcitationSplit { fluct: e.clone(), full: e }
    }
}

/// Plane-wave excitation tested against the RWG basis:
/// e_n = int f_n . E dS with E = amplitude * polarization * exp(ik d.r).
/// Stored complex so the O(k) quadrature-exact imaginary part keeps full
/// relative accuracy at arbitrarily small k.
pub fn plane_wave(
    mesh: &TriangleMesh,
    k: f64,
    direction: Vec3,
    polarization: Vec3,
    amplitude: f64,
) -> Result<Array1<Complex64>, AssemblyError> {
    Ok(plane_wave_split(mesh, k, direction, polarization, amplitude)?.full)
}

/// Plane-wave moments plus their fluctuation past the constant field.
/// exp(i t) - 1 = 2 sin(t/2) (-sin(t/2) + i cos(t/2)) keeps the fluctuation
/// relative-accurate however small the phase.
pub fn plane_wave_split(
    mesh: &TriangleMesh,
    k: f64,
    direction: Vec3,
    polarization: Vec3,
    amplitude: f64,
) -> Result<ExcitationSplit, AssemblyError> {
    let dir = vec3::normalize(direction);
    let pol = vec3::normalize(polarization);
    let align = vec3::dot(dir, pol);
    if align.abs() > 1e-10 {
        return Err(AssemblyError::ObliquePolarization(align));
    }
    let rule = TriangleRule::with_degree(EXCITATION_DEGREE);
    let mut full = Array1::zeros(mesh.n_edges());
    let mut fluct = Array1::zeros(mesh.n_edges());
    for c in 0..mesh.n_cells() {
        let area = mesh.area(c);
        let half_inv_area = 0.5 / area;
        let ce = mesh.cell_edges(c);
        for (r, w) in rule.on_triangle(&mesh.cell_points(c), area) {
            let theta = k * vec3::dot(dir, r);
            let field = Complex64::from_polar(amplitude * w, theta);
            let half = 0.5 * theta;
            let s = half.sin();
            let osc = (amplitude * w) * Complex64::new(-2.0 * s * s, 2.0 * s * half.cos());
            for edge in ce {
                let f = vec3::scale(
                    vec3::sub(r, mesh.vertices()[edge.opp]),
                    edge.sign * half_inv_area,
                );
                let m = vec3::dot(f, pol);
                full[edge.edge] += field * m;
                fluct[edge.edge] += osc * m;
            }
        }
    }
    Ok(ExcitationSplit { full, fluct })
}

/// Delta-gap excitation: unit entry on one edge.
pub fn voltage_gap(mesh: &TriangleMesh, edge: usize) -> Result<Array1<Complex64>, AssemblyError> {
    if edge >= mesh.n_edges() {
        return Err(AssemblyError::EdgeOutOfRange { index: edge, n_edges: mesh.n_edges() });
    }
    let mut e = Array1::zeros(mesh.n_edges());
    e[edge] = Complex64::new(1.0, 0.0);
    Ok(e)
}

/// Dump a dense complex block as row-major little-endian (re, im) f64 pairs,
/// with a JSON sidecar recording shape, wavenumber, and mesh hash.
pub fn dump_block(
    base: &Path,
    a: &Array2<Complex64>,
    k: f64,
    mesh_hash: &str,
) -> std::io::Result<()> {
    let mut bin = std::io::BufWriter::new(std::fs::File::create(base.with_extension("bin"))?);
    for z in a.iter() {
        bin.write_all(&z.re.to_le_bytes())?;
        bin.write_all(&z.im.to_le_bytes())?;
    }
    bin.flush()?;
    let sidecar = serde_json::json!({
        "rows": a.nrows(),
        "cols": a.ncols(),
        "k": k,
        "mesh_hash": mesh_hash,
        "layout": "row-major complex128 little-endian",
    });
    std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)
}
