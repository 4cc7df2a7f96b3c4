//! Sparse assembly buffers and a direct solver with residual checks.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Triplet buffer; duplicate entries are summed on conversion.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], block: &[f64]) {
        debug_assert_eq!(block.len(), rows.len() * cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                self.add(i, j, block[a * cols.len() + b]);
            }
        }
    }

    pub fn into_csr(mut self) -> CsrMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Square compressed-row matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|p| self.vals[p] * x[self.cols[p]])
                    .sum()
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(p) => self.vals[r.start + p],
            Err(_) => 0.0,
        }
    }

    /// Replaces row and column `i` by the identity (homogeneous constraint).
    pub fn constrain(&mut self, fixed: &[bool]) {
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[p];
                if fixed[i] || fixed[j] {
                    self.vals[p] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        // rows without a stored diagonal need one
        let missing: Vec<usize> = (0..self.n)
            .filter(|&i| fixed[i] && self.get(i, i) == 0.0)
            .collect();
        if !missing.is_empty() {
            let mut b = TripletBuilder::new(self.n);
            for i in 0..self.n {
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    b.add(i, self.cols[p], self.vals[p]);
                }
            }
            for i in missing {
                b.add(i, i, 1.0);
            }
            *self = b.into_csr();
        }
    }
}

/// Sparse LU factorisation of a CSR matrix.
pub struct DirectSolver {
    matrix: CsrMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    pub tolerance: f64,
    pub max_refinements: usize,
}

impl DirectSolver {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        let mut trips = Vec::with_capacity(matrix.vals.len());
        for i in 0..matrix.n {
            for p in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
                trips.push(Triplet::new(i, matrix.cols[p], matrix.vals[p]));
            }
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.n, matrix.n, &trips)
            .map_err(|e| Error::InvalidCoefficients(format!("sparse matrix build failed: {e:?}")))?;
        let lu = a.sp_lu().map_err(|_| Error::SolverFailure {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        Ok(DirectSolver {
            matrix,
            lu,
            tolerance: 1e-10,
            max_refinements: 3,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        self.lu.solve_in_place(&mut b);
        (0..rhs.len()).map(|i| b[(i, 0)]).collect()
    }

    /// Solves with iterative refinement; fails if the relative residual stays
    /// above the tolerance.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let bnorm = norm(rhs).max(f64::MIN_POSITIVE);
        let mut x = self.raw_solve(rhs);
        let mut res = f64::INFINITY;
        for it in 0..=self.max_refinements {
            let ax = self.matrix.matvec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            res = norm(&r) / bnorm;
            if !res.is_finite() {
                break;
            }
            if res <= self.tolerance || norm(rhs) == 0.0 {
                return Ok(x);
            }
            if it < self.max_refinements {
                let dx = self.raw_solve(&r);
                for (xi, d) in x.iter_mut().zip(dx) {
                    *xi += d;
                }
            }
        }
        Err(Error::SolverFailure {
            iterations: self.max_refinements,
            residual: res,
        })
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse of a small dense row-major matrix.
pub fn dense_inverse(n: usize, a: &[f64]) -> Vec<f64> {
    let m = Mat::<f64>::from_fn(n, n, |i, j| a[i * n + j]);
    let inv = m.partial_piv_lu().inverse();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    out
}

/// Solves a small dense row-major system.
pub fn dense_solve(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let m = Mat::<f64>::from_fn(n, n, |i, j| a[i * n + j]);
    let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    m.partial_piv_lu().solve_in_place(&mut rhs);
    (0..n).map(|i| rhs[(i, 0)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let mut b = TripletBuilder::new(3);
        for (i, j, v) in [(0, 0, 4.0), (0, 1, 1.0), (1, 1, 3.0), (2, 0, -1.0), (2, 2, 2.0), (2, 2, 0.5)] {
            b.add(i, j, v);
        }
        let s = DirectSolver::new(b.into_csr()).unwrap();
        let x = s.solve(&[1.0, 2.0, 3.0]).unwrap();
        let ax = s.matrix().matvec(&x);
        for (a, e) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn dense_inverse_roundtrip() {
        let a = [2.0, 1.0, 0.5, 3.0];
        let inv = dense_inverse(2, &a);
        let p = [
            a[0] * inv[0] + a[1] * inv[2],
            a[0] * inv[1] + a[1] * inv[3],
            a[2] * inv[0] + a[3] * inv[2],
            a[2] * inv[1] + a[3] * inv[3],
        ];
        for (v, e) in p.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((v - e).abs() < 1e-14);
        }
    }
}
