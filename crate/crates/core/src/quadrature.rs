//! Symmetric Gauss quadrature rules on triangles.
//!
//! Rules are stored in barycentric coordinates with weights summing to one, so a
//! physical integral is `area * sum_i w_i f(p_i)`. Only rules with strictly
//! positive weights and strictly interior points are included: positivity keeps
//! assembled Gram matrices definite, and interior points let the same rules be
//! used as outer rules over singular-kernel inner integrals (whose integrands
//! are finite off the triangle boundary).

use crate::vec3::{self, Vec3};
use std::sync::OnceLock;

#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// Polynomial degree integrated exactly.
    pub degree: u32,
    /// Barycentric point coordinates, each summing to one.
    pub points: Vec<[f64; 3]>,
    /// Weights on the reference triangle, summing to one.
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// The smallest tabulated rule that integrates degree `d` exactly.
    /// Tabulated degrees: 1, 2, 5, 7, 11.
    pub fn with_degree(d: u32) -> &'static TriangleRule {
        let tables = tables();
        tables
            .iter()
            .find(|r| r.degree >= d)
            .unwrap_or_else(|| tables.last().expect("rule tables are non-empty"))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical quadrature points and weights on the triangle `tri`; weights
    /// include the triangle area.
    pub fn on_triangle(&self, tri: &[Vec3; 3], area: f64) -> Vec<(Vec3, f64)> {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| (vec3::bary(tri[0], tri[1], tri[2], p[0], p[1], p[2]), w * area))
            .collect()
    }
}

fn sym3(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let c = 1.0 - 2.0 * a;
    points.push([c, a, a]);
    points.push([a, c, a]);
    points.push([a, a, c]);
    weights.extend_from_slice(&[w, w, w]);
}

/// Gauss nodes and weights on [-1, 1] from a monic three-term recurrence
/// pi_{k+1} = (t - a_k) pi_k - b_k pi_{k-1}, with b_0 = mu0 (the measure's
/// total mass). Roots are found by interlacing bisection, weights by the
/// Christoffel formula; both are exact to rounding for the small n used here.
fn gauss_from_recurrence(n: usize, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let eval_monic = |k: usize, t: f64| -> f64 {
        let (mut pm, mut p) = (0.0, 1.0);
        for j in 0..k {
            let next = (t - a[j]) * p - if j == 0 { 0.0 } else { b[j] } * pm;
            pm = p;
            p = next;
        }
        p
    };

    // Roots of pi_k interlace with those of pi_{k-1}.
    let mut roots: Vec<f64> = Vec::new();
    for k in 1..=n {
        let mut brackets = Vec::with_capacity(k + 1);
        brackets.push(-1.0);
        brackets.extend_from_slice(&roots);
        brackets.push(1.0);
        let mut new_roots = Vec::with_capacity(k);
        for w in brackets.windows(2) {
            let (mut lo, mut hi) = (w[0], w[1]);
            let flo = eval_monic(k, lo);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if eval_monic(k, mid) * flo > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            new_roots.push(0.5 * (lo + hi));
        }
        roots = new_roots;
    }

    // w_i = 1 / sum_k p_k(x_i)^2 with orthonormal p_k.
    let weights = roots
        .iter()
        .map(|&x| {
            let mut pm = 0.0;
            let mut p = 1.0 / b[0].sqrt();
            let mut s = p * p;
            for k in 0..n - 1 {
                let next = ((x - a[k]) * p - if k == 0 { 0.0 } else { b[k].sqrt() } * pm) / b[k + 1].sqrt();
                pm = p;
                p = next;
                s += p * p;
            }
            1.0 / s
        })
        .collect();
    (roots, weights)
}

/// n-point Gauss-Legendre rule on [0, 1]; also reused by tests as an oracle.
pub fn legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let a = vec![0.0; n];
    let mut b = vec![2.0];
    for k in 1..n {
        let kf = k as f64;
        b.push(kf * kf / (4.0 * kf * kf - 1.0));
    }
    let (t, w) = gauss_from_recurrence(n, &a, &b);
    (t.iter().map(|&t| 0.5 * (1.0 + t)).collect(), w.iter().map(|&w| 0.5 * w).collect())
}

/// n-point Gauss-Jacobi rule for int_0^1 f(u) (1-u) du.
fn jacobi10_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(n);
    let mut b = vec![2.0];
    for k in 0..n {
        let kf = k as f64;
        a.push(-1.0 / ((2.0 * kf + 1.0) * (2.0 * kf + 3.0)));
        if k >= 1 {
            b.push(kf * (kf + 1.0) / ((2.0 * kf + 1.0) * (2.0 * kf + 1.0)));
        }
    }
    let (t, w) = gauss_from_recurrence(n, &a, &b);
    (t.iter().map(|&t| 0.5 * (1.0 + t)).collect(), w.iter().map(|&w| 0.25 * w).collect())
}

/// Conical product rule: n-point Jacobi in the first coordinate times
/// n-point Legendre along the collapsing one, exact through degree 2n-1.
/// All n^2 weights are positive and all points strictly interior.
fn conical(n: usize) -> TriangleRule {
    let (uj, wj) = jacobi10_01(n);
    let (vl, wl) = legendre_01(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = uj[i];
            let y = vl[j] * (1.0 - uj[i]);
            points.push([1.0 - x - y, x, y]);
            // Reference-triangle area is 1/2; stored weights sum to one.
            weights.push(2.0 * wj[i] * wl[j]);
        }
    }
    TriangleRule { degree: 2 * n as u32 - 1, points, weights }
}

fn tables() -> &'static [TriangleRule] {
    static TABLES: OnceLock<Vec<TriangleRule>> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut rules = Vec::new();

        rules.push(TriangleRule {
            degree: 1,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
        });

        {
            let mut points = Vec::new();
            let mut weights = Vec::new();
            sym3(&mut points, &mut weights, 1.0 / 6.0, 1.0 / 3.0);
            rules.push(TriangleRule { degree: 2, points, weights });
        }

        {
            // 7-point degree-5 rule.
            let mut points = vec![[1.0 / 3.0; 3]];
            let mut weights = vec![0.225];
            sym3(&mut points, &mut weights, 0.470_142_064_105_115, 0.132_394_152_788_506);
            sym3(&mut points, &mut weights, 0.101_286_507_323_456, 0.125_939_180_544_827);
            rules.push(TriangleRule { degree: 5, points, weights });
        }

        rules.push(conical(4)); // degree 7, 16 points
        rules.push(conical(6)); // degree 11, 36 points

        // Normalize weight sums to exactly one; tabulated entries carry ~1e-15
        // rounding that would otherwise leak into partition checks.
        for r in &mut rules {
            let s: f64 = r.weights.iter().sum();
            for w in &mut r.weights {
                *w /= s;
            }
        }
        rules
    })
}
