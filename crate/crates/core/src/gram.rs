//! Gram matrices for the three basis families and the surface Laplacians.
//!
//! Bases: unnormalized RWG functions f_n attached to interior edges, nodal
//! hats lambda_v, and patch indicators p_c = 1/A_c on cell c. The dual-hat
//! family enters only through its closed-form mixed Gram against the patches;
//! it is never built geometrically.

use crate::mesh::TriangleMesh;
use crate::quadrature::TriangleRule;
use crate::sparse::Csr;
use crate::vec3::{self, Vec3};
use ndarray::Array2;
use std::collections::BTreeMap;

/// n x grad(lambda_i) for the three hats of cell `c`, a constant per cell.
pub fn rot_lambda(mesh: &TriangleMesh, c: usize) -> [Vec3; 3] {
    let p = mesh.cell_points(c);
    let inv2a = 1.0 / (2.0 * mesh.area(c));
    [
        vec3::scale(vec3::sub(p[1], p[2]), inv2a),
        vec3::scale(vec3::sub(p[2], p[0]), inv2a),
        vec3::scale(vec3::sub(p[0], p[1]), inv2a),
    ]
}

/// grad(lambda_i) within the plane of cell `c`.
pub fn grad_lambda(mesh: &TriangleMesh, c: usize) -> [Vec3; 3] {
    let n = mesh.normal(c);
    let rot = rot_lambda(mesh, c);
    [vec3::cross(rot[0], n), vec3::cross(rot[1], n), vec3::cross(rot[2], n)]
}

/// RWG Gram matrix (f_m, f_n), assembled cell by cell with a quadrature rule
/// of at least the given degree (the integrand is quadratic, so degree >= 2
/// is exact on flat cells).
pub fn gram_ff_with_degree(mesh: &TriangleMesh, degree: u32) -> Csr {
    let rule = TriangleRule::with_degree(degree);
    let n = mesh.n_edges();
    let mut triplets = Vec::with_capacity(9 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let pts = mesh.cell_points(c);
        let area = mesh.area(c);
        let ce = mesh.cell_edges(c);
        let quad = rule.on_triangle(&pts, area);
        for a in ce.iter() {
            for b in ce.iter() {
                let pa = mesh.vertices()[a.opp];
                let pb = mesh.vertices()[b.opp];
                let mut acc = 0.0;
                for (r, w) in &quad {
                    acc += w * vec3::dot(vec3::sub(*r, pa), vec3::sub(*r, pb));
                }
                let val = a.sign * b.sign * acc / (4.0 * area * area);
                triplets.push((a.edge, b.edge, val));
            }
        }
    }
    Csr::from_triplets(n, n, &triplets)
}

pub fn gram_ff(mesh: &TriangleMesh) -> Csr {
    gram_ff_with_degree(mesh, 5)
}

/// Nodal hat mass matrix (lambda_u, lambda_v). Per-cell block is
/// (A/12) * (1 + delta_uv), exact for flat cells.
pub fn gram_lambda(mesh: &TriangleMesh) -> Csr {
    let nv = mesh.n_vertices();
    let mut triplets = Vec::with_capacity(9 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let vs = mesh.cells()[c];
        let a12 = mesh.area(c) / 12.0;
        for i in 0..3 {
            for j in 0..3 {
                let val = if i == j { 2.0 * a12 } else { a12 };
                triplets.push((vs[i], vs[j], val));
            }
        }
    }
    Csr::from_triplets(nv, nv, &triplets)
}

/// Patch Gram matrix: diagonal with entries 1/A_c.
pub fn gram_pp(mesh: &TriangleMesh) -> Csr {
    let nc = mesh.n_cells();
    let triplets: Vec<_> = (0..nc).map(|c| (c, c, 1.0 / mesh.area(c))).collect();
    Csr::from_triplets(nc, nc, &triplets)
}

/// Mixed Gram between dual hats and patches, by the closed-form entries for
/// closed manifold meshes. With NoC(v) the number of cells at vertex v:
///   same cell:            (2/18) * (9/2 + sum over the cell's vertices of 1/NoC)
///   cells sharing an edge: (2/18) * (1/2 + 1/NoC(u) + 1/NoC(w)) for endpoints u, w
///   cells sharing vertex v only: (2/18) * 1/NoC(v)
/// Every column sums to one because the dual hats partition unity.
pub fn gram_dual_lambda_p(mesh: &TriangleMesh) -> Csr {
    let nc = mesh.n_cells();
    let noc = |v: usize| mesh.vertex_cells(v).len() as f64;
    let mut triplets = Vec::new();
    for m in 0..nc {
        let vm = mesh.cells()[m];
        // Neighbor cell -> vertices shared with m.
        let mut shared: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &v in &vm {
            for &c in mesh.vertex_cells(v) {
                shared.entry(c).or_default().push(v);
            }
        }
        for (mp, verts) in shared {
            let val = if mp == m {
                (2.0 / 18.0) * (4.5 + vm.iter().map(|&v| 1.0 / noc(v)).sum::<f64>())
            } else {
                match verts.len() {
                    1 => (2.0 / 18.0) / noc(verts[0]),
                    2 => (2.0 / 18.0) * (0.5 + 1.0 / noc(verts[0]) + 1.0 / noc(verts[1])),
                    _ => unreachable!("distinct cells share at most one edge on a manifold"),
                }
            };
            triplets.push((m, mp, val));
        }
    }
    Csr::from_triplets(nc, nc, &triplets)
}

/// Piecewise-linear stiffness matrix (grad lambda_u, grad lambda_v), the
/// cotangent Laplacian. Symmetric positive semidefinite with constants in the
/// null space, assembled exactly from per-cell constant gradients.
pub fn laplace_beltrami(mesh: &TriangleMesh) -> Csr {
    let nv = mesh.n_vertices();
    let mut triplets = Vec::with_capacity(9 * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let vs = mesh.cells()[c];
        let g = grad_lambda(mesh, c);
        let area = mesh.area(c);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((vs[i], vs[j], area * vec3::dot(g[i], g[j])));
            }
        }
    }
    Csr::from_triplets(nv, nv, &triplets)
}

/// Mass-weighted vertex areas m = G_lambda * 1, i.e. one third of the area
/// touching each vertex. This is the deflection direction for the modified
/// Laplacian and the modified loop-loop interaction matrix.
pub fn lambda_moment(mesh: &TriangleMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.n_vertices()];
    for c in 0..mesh.n_cells() {
        let third = mesh.area(c) / 3.0;
        for &v in &mesh.cells()[c] {
            m[v] += third;
        }
    }
    m
}

/// Deflected Laplacian: the stiffness matrix plus the rank-one term
/// (G_lambda 1)(G_lambda 1)^T that removes the constant null space. The
/// rank-one part is dense, so the result is returned dense.
pub fn deflected_laplacian(mesh: &TriangleMesh) -> Array2<f64> {
    let nv = mesh.n_vertices();
    let mut a = laplace_beltrami(mesh).to_dense();
    let m = lambda_moment(mesh);
    for i in 0..nv {
        for j in 0..nv {
            a[[i, j]] += m[i] * m[j];
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::generalized_eigvals_sym;
    use crate::mesh::{genus2_fixture, make_sphere, make_torus};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rayleigh_positive(m: &Csr, seed: u64) {
        let n = m.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut y = vec![0.0; n];
            m.matvec(&x, &mut y);
            let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(q > 0.0, "Rayleigh quotient {q}");
        }
    }

    fn symmetry_defect(m: &Csr) -> f64 {
        let d = m.to_dense();
        let mut worst: f64 = 0.0;
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                worst = worst.max((d[[i, j]] - d[[j, i]]).abs());
            }
        }
        worst
    }

    #[test]
    fn gram_ff_symmetric_definite_and_local() {
        let m = make_sphere(1.0, 1);
        let g = gram_ff(&m);
        assert!(symmetry_defect(&g) < 1e-15);
        rayleigh_positive(&g, 2);
        // Edges with no shared cell produce no entry.
        let d = g.to_dense();
        let e0 = &m.edges()[0];
        for (n, e) in m.edges().iter().enumerate() {
            let shares = [e.cell_plus, e.cell_minus]
                .iter()
                .any(|c| *c == e0.cell_plus || *c == e0.cell_minus);
            if !shares {
                assert_eq!(d[[0, n]], 0.0);
            }
        }
    }

    #[test]
    fn gram_ff_diagonal_matches_high_order_quadrature() {
        let m = make_torus(2.0, 0.5, 8, 4);
        let g = gram_ff(&m).to_dense();
        // Oracle: brute-force degree-11 quadrature of |f_n|^2 over both cells.
        for n in [0usize, 7, 23] {
            let e = &m.edges()[n];
            let mut oracle = 0.0;
            for (c, sign) in [(e.cell_plus, 1.0f64), (e.cell_minus, -1.0)] {
                let opp = if sign > 0.0 { e.opp_plus } else { e.opp_minus };
                let p = m.vertices()[opp];
                let area = m.area(c);
                for (r, w) in TriangleRule::with_degree(11).on_triangle(&m.cell_points(c), area) {
                    let f = vec3::scale(vec3::sub(r, p), sign / (2.0 * area));
                    oracle += w * vec3::dot(f, f);
                }
            }
            assert!(
                (g[[n, n]] - oracle).abs() < 1e-12 * oracle.abs(),
                "edge {n}: {} vs {oracle}",
                g[[n, n]]
            );
        }
    }

    #[test]
    fn gram_lambda_row_sums_and_total() {
        let m = make_sphere(1.0, 1);
        let g = gram_lambda(&m);
        let ones = vec![1.0; m.n_vertices()];
        let mut rows = vec![0.0; m.n_vertices()];
        g.matvec(&ones, &mut rows);
        for v in 0..m.n_vertices() {
            let touching: f64 = m.vertex_cells(v).iter().map(|&c| m.area(c)).sum();
            assert!((rows[v] - touching / 3.0).abs() < 1e-13);
        }
        let total: f64 = rows.iter().sum();
        assert!((total - m.total_area()).abs() < 1e-12);
        assert!(symmetry_defect(&g) < 1e-15);
        rayleigh_positive(&g, 3);
    }

    #[test]
    fn gram_lambda_eigenvalues_scale_like_h_squared() {
        let bounds: Vec<(f64, f64)> = (1..=2)
            .map(|level| {
                let m = make_sphere(1.0, level);
                let h = m.edge_stats().avg;
                let g = gram_lambda(&m).to_dense();
                let eigs =
                    generalized_eigvals_sym(&g, &Array2::eye(m.n_vertices())).unwrap();
                let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
                let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
                (min / (h * h), max / (h * h))
            })
            .collect();
        for k in 0..2 {
            let (a, b) = (bounds[0], bounds[1]);
            let (x, y) = if k == 0 { (a.0, b.0) } else { (a.1, b.1) };
            let ratio = if x > y { x / y } else { y / x };
            assert!(ratio < 2.0, "normalized eigenvalue drifted {ratio}x between levels");
        }
    }

    #[test]
    fn gram_pp_is_inverse_area_diagonal() {
        let m = make_torus(2.0, 0.5, 6, 4);
        let g = gram_pp(&m);
        assert_eq!(g.nnz(), m.n_cells());
        let d = g.to_dense();
        for c in 0..m.n_cells() {
            assert!((d[[c, c]] - 1.0 / m.area(c)).abs() < 1e-14 / m.area(c));
        }
    }

    #[test]
    fn dual_gram_valence_six_values() {
        // Every vertex of the structured torus grid has valence 6.
        let m = make_torus(2.0, 0.5, 16, 8);
        for v in 0..m.n_vertices() {
            assert_eq!(m.vertex_cells(v).len(), 6);
        }
        let g = gram_dual_lambda_p(&m).to_dense();
        let c0 = 0usize;
        assert!((g[[c0, c0]] - 5.0 / 9.0).abs() < 1e-15);
        let mut edge_adjacent = 0;
        let mut vertex_only = 0;
        for c in 0..m.n_cells() {
            if c == c0 {
                continue;
            }
            match m.shared_vertices(c0, c) {
                2 => {
                    assert!((g[[c0, c]] - 5.0 / 54.0).abs() < 1e-15);
                    edge_adjacent += 1;
                }
                1 => {
                    assert!((g[[c0, c]] - 1.0 / 54.0).abs() < 1e-15);
                    vertex_only += 1;
                }
                0 => assert_eq!(g[[c0, c]], 0.0),
                _ => unreachable!(),
            }
        }
        assert_eq!(edge_adjacent, 3);
        assert_eq!(vertex_only, 9);
    }

    #[test]
    fn dual_gram_columns_sum_to_one_on_all_fixtures() {
        for m in [make_sphere(1.0, 1), make_torus(1.5, 0.4, 8, 6), genus2_fixture()] {
            let g = gram_dual_lambda_p(&m);
            let ones = vec![1.0; m.n_cells()];
            let mut colsum = vec![0.0; m.n_cells()];
            g.transpose().matvec(&ones, &mut colsum);
            for (c, s) in colsum.iter().enumerate() {
                assert!((s - 1.0).abs() < 1e-14, "column {c} sums to {s}");
            }
            assert!(symmetry_defect(&g) < 1e-15);
        }
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let m = make_torus(2.0, 0.5, 8, 6);
        let lap = laplace_beltrami(&m);
        assert!(symmetry_defect(&lap) < 1e-12);
        let ones = vec![1.0; m.n_vertices()];
        let mut y = vec![0.0; m.n_vertices()];
        lap.matvec(&ones, &mut y);
        for v in y {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_laplacian_first_eigenvalue() {
        // Smallest nonzero eigenvalue of the Laplace-Beltrami operator on the
        // unit sphere is 2 (threefold degenerate), for the pencil (K, M).
        let m = make_sphere(1.0, 3);
        let k = laplace_beltrami(&m).to_dense();
        let g = gram_lambda(&m).to_dense();
        let eigs = generalized_eigvals_sym(&k, &g).unwrap();
        let mut sorted: Vec<f64> = eigs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(sorted[0].abs() < 1e-8, "constant mode {}", sorted[0]);
        for i in 1..=3 {
            assert!((sorted[i] - 2.0).abs() / 2.0 < 0.05, "eig {i}: {}", sorted[i]);
        }
    }

    #[test]
    fn deflected_laplacian_properties() {
        let m = make_sphere(1.0, 1);
        let nv = m.n_vertices();
        let lap = laplace_beltrami(&m).to_dense();
        let hat = deflected_laplacian(&m);

        // 1' Lhat 1 = (surface area)^2 since the stiffness part kills constants.
        let ones = ndarray::Array1::from_elem(nv, 1.0);
        let quad = ones.dot(&hat.dot(&ones));
        let area = m.total_area();
        assert!((quad - area * area).abs() < 1e-10 * area * area);

        // Agrees with the plain Laplacian on the mass-orthogonal complement.
        let mvec = ndarray::Array1::from_vec(lambda_moment(&m));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let mut x =
                ndarray::Array1::from_iter((0..nv).map(|_| rng.gen::<f64>() - 0.5));
            let shift = mvec.dot(&x) / mvec.dot(&ones);
            x -= &ones.mapv(|o| o * shift);
            assert!(mvec.dot(&x).abs() < 1e-12 * area);
            let a = x.dot(&hat.dot(&x));
            let b = x.dot(&lap.to_owned().dot(&x));
            assert!((a - b).abs() < 1e-10 * (a.abs() + b.abs()).max(1e-12));
        }

        // Positive definite: all pencil eigenvalues against identity positive.
        let eigs = generalized_eigvals_sym(&hat, &Array2::eye(nv)).unwrap();
        assert!(eigs.iter().all(|&e| e > 0.0));
    }
}
