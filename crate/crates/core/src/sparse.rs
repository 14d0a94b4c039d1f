//! Minimal real CSR matrices and signed incidence maps.
//!
//! The solver only needs sparse storage for small fixed-pattern operators
//! (Gram matrices, graph Laplacians, incidence maps); everything dense or
//! complex lives in `ndarray`. Incidence maps with exactly one +1 and one -1
//! per row get a dedicated type so products between them can be verified in
//! integer arithmetic.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed, entries
    /// that cancel to exact zero are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Csr {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
        }
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut out =
            Csr { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), values: Vec::new() };
        let mut i = 0;
        while i < sorted.len() {
            let (r, c, mut v) = sorted[i];
            i += 1;
            while i < sorted.len() && sorted[i].0 == r && sorted[i].1 == c {
                v += sorted[i].2;
                i += 1;
            }
            if v != 0.0 {
                out.indices.push(c);
                out.values.push(v);
                out.indptr[r + 1] = out.indices.len();
            }
        }
        for r in 0..nrows {
            if out.indptr[r + 1] < out.indptr[r] {
                out.indptr[r + 1] = out.indptr[r];
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_c(&self, x: &Array1<Complex64>, y: &mut Array1<Complex64>) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += x[self.indices[k]] * self.values[k];
            }
            y[r] = acc;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Csr::from_triplets(self.ncols, self.nrows, &triplets)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                a[[r, c]] += v;
            }
        }
        a
    }

    /// Matrix Market coordinate format, general real, 1-based indices.
    pub fn write_matrix_market(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(f, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                writeln!(f, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Sparse map with exactly one +1 and one -1 per row: row `r` of the matrix is
/// `+1` at column `plus[r]` and `-1` at column `minus[r]`.
#[derive(Debug, Clone)]
pub struct SignedIncidence {
    ncols: usize,
    plus: Vec<usize>,
    minus: Vec<usize>,
}

impl SignedIncidence {
    pub fn new(ncols: usize, plus: Vec<usize>, minus: Vec<usize>) -> SignedIncidence {
        assert_eq!(plus.len(), minus.len());
        for (&p, &m) in plus.iter().zip(&minus) {
            assert!(p < ncols && m < ncols && p != m);
        }
        SignedIncidence { ncols, plus, minus }
    }

    pub fn nrows(&self) -> usize {
        self.plus.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn cols(&self, r: usize) -> (usize, usize) {
        (self.plus[r], self.minus[r])
    }

    /// y = M x
    pub fn apply(&self, x: &Array1<Complex64>) -> Array1<Complex64> {
        assert_eq!(x.len(), self.ncols);
        Array1::from_iter((0..self.nrows()).map(|r| x[self.plus[r]] - x[self.minus[r]]))
    }

    /// y = M^T x
    pub fn apply_t(&self, x: &Array1<Complex64>) -> Array1<Complex64> {
        assert_eq!(x.len(), self.nrows());
        let mut y = Array1::zeros(self.ncols);
        for r in 0..self.nrows() {
            y[self.plus[r]] += x[r];
            y[self.minus[r]] -= x[r];
        }
        y
    }

    pub fn apply_real(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows()).map(|r| x[self.plus[r]] - x[self.minus[r]]).collect()
    }

    /// Y = M X, column by column.
    pub fn apply_block(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut y = Array2::zeros((self.nrows(), x.ncols()));
        for r in 0..self.nrows() {
            let (p, m) = (self.plus[r], self.minus[r]);
            for j in 0..x.ncols() {
                y[[r, j]] = x[[p, j]] - x[[m, j]];
            }
        }
        y
    }

    /// Y = M^T X, column by column.
    pub fn apply_t_block(&self, x: &Array2<Complex64>) -> Array2<Complex64> {
        assert_eq!(x.nrows(), self.nrows());
        let mut y = Array2::zeros((self.ncols, x.ncols()));
        for r in 0..self.nrows() {
            let (p, m) = (self.plus[r], self.minus[r]);
            for j in 0..x.ncols() {
                let v = x[[r, j]];
                y[[p, j]] += v;
                y[[m, j]] -= v;
            }
        }
        y
    }

    pub fn apply_t_real(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows() {
            y[self.plus[r]] += x[r];
            y[self.minus[r]] -= x[r];
        }
        y
    }

    /// Integer entries of A^T B where both factors are signed incidence maps
    /// with the same row count. Returned as dense i64, so products like
    /// "transposed loop map times star map" can be checked for exact zero.
    pub fn transpose_product(&self, other: &SignedIncidence) -> Array2<i64> {
        assert_eq!(self.nrows(), other.nrows());
        let mut out = Array2::zeros((self.ncols, other.ncols));
        for r in 0..self.nrows() {
            let (ap, am) = self.cols(r);
            let (bp, bm) = other.cols(r);
            out[[ap, bp]] += 1;
            out[[ap, bm]] -= 1;
            out[[am, bp]] -= 1;
            out[[am, bm]] += 1;
        }
        out
    }

    /// A^T A as a real CSR graph Laplacian.
    pub fn gram(&self) -> Csr {
        let mut triplets = Vec::with_capacity(4 * self.nrows());
        for r in 0..self.nrows() {
            let (p, m) = self.cols(r);
            triplets.push((p, p, 1.0));
            triplets.push((m, m, 1.0));
            triplets.push((p, m, -1.0));
            triplets.push((m, p, -1.0));
        }
        Csr::from_triplets(self.ncols, self.ncols, &triplets)
    }

    pub fn to_csr(&self) -> Csr {
        let mut triplets = Vec::with_capacity(2 * self.nrows());
        for r in 0..self.nrows() {
            let (p, m) = self.cols(r);
            triplets.push((r, p, 1.0));
            triplets.push((r, m, -1.0));
        }
        Csr::from_triplets(self.nrows(), self.ncols, &triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = Csr::from_triplets(
            2,
            3,
            &[(0, 1, 2.0), (0, 1, 3.0), (1, 2, 1.0), (1, 2, -1.0), (0, 0, 4.0)],
        );
        assert_eq!(m.nnz(), 2);
        let d = m.to_dense();
        assert_eq!(d, array![[4.0, 5.0, 0.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = Csr::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, -3.0), (2, 1, 0.5)]);
        let x = [1.0, 2.0];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        assert_eq!(y, [1.0, 4.0, -2.0]);

        let xt = [1.0, 1.0, 1.0];
        let mut yt = [0.0; 2];
        m.transpose().matvec(&xt, &mut yt);
        assert_eq!(yt, [-2.0, 2.5]);
    }

    #[test]
    fn complex_matvec() {
        let m = Csr::from_triplets(2, 2, &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, -1.0)]);
        let x = array![Complex64::new(1.0, 1.0), Complex64::new(0.0, 2.0)];
        let mut y = Array1::zeros(2);
        m.matvec_c(&x, &mut y);
        assert_eq!(y[0], Complex64::new(2.0, 2.0));
        assert_eq!(y[1], Complex64::new(1.0, -1.0));
    }

    #[test]
    fn incidence_roundtrip_and_gram() {
        // Path graph on 3 nodes: edges (0,1), (1,2).
        let inc = SignedIncidence::new(3, vec![0, 1], vec![1, 2]);
        let x = [1.0, 10.0, 100.0];
        assert_eq!(inc.apply_real(&x), vec![-9.0, -90.0]);

        let lap = inc.gram().to_dense();
        assert_eq!(lap, array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]);

        // Laplacian annihilates constants.
        let mut y = [0.0; 3];
        inc.gram().matvec(&[5.0, 5.0, 5.0], &mut y);
        assert_eq!(y, [0.0, 0.0, 0.0]);

        let d = inc.to_csr().to_dense();
        assert_eq!(d, array![[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]);
    }

    #[test]
    fn integer_transpose_product() {
        let a = SignedIncidence::new(3, vec![0, 1], vec![1, 2]);
        let b = SignedIncidence::new(2, vec![0, 1], vec![1, 0]);
        let p = a.transpose_product(&b);
        // Row r of a contributes outer product of its signed columns.
        assert_eq!(p, array![[1, -1], [-2, 2], [1, -1]]);
    }

    #[test]
    fn matrix_market_output() {
        let m = Csr::from_triplets(2, 2, &[(0, 0, 1.5), (1, 0, -2.0)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtx");
        m.write_matrix_market(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
        assert!(text.contains("2 2 2"));
        assert!(text.contains("2 1 -2"));
    }
}
