//! Compressed sparse rows plus the SPD solve path used by the geodesic stage.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Systems up to this size are factorized directly; larger ones use PCG.
pub const DIRECT_SOLVE_LIMIT: usize = 200_000;
pub const PCG_TOLERANCE: f64 = 1e-10;

/// Square sparse matrix in CSR form with sorted, unique column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Assemble from `(row, col, value)` triplets, summing duplicates in
    /// input order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1, i));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &i in &order {
            let (r, c, v) = triplets[i];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// `self + scale · diag(d)`.
    pub fn add_diagonal(&self, d: &[f64], scale: f64) -> Csr {
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(self.values.len() + self.n);
        for r in 0..self.n {
            trip.extend(self.row(r).map(|(c, v)| (r, c, v)));
            trip.push((r, r, scale * d[r]));
        }
        Csr::from_triplets(self.n, &trip)
    }

    /// `a · self + diag(d)`.
    pub fn scaled_plus_diagonal(&self, a: f64, d: &[f64]) -> Csr {
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(self.values.len() + self.n);
        for r in 0..self.n {
            trip.push((r, r, d[r]));
            trip.extend(self.row(r).map(|(c, v)| (r, c, a * v)));
        }
        Csr::from_triplets(self.n, &trip)
    }

    /// Principal submatrix over `keep` (indices in the new order).
    pub fn submatrix(&self, keep: &[usize]) -> Csr {
        let mut map = vec![usize::MAX; self.n];
        for (i, &k) in keep.iter().enumerate() {
            map[k] = i;
        }
        let mut trip = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            for (c, v) in self.row(k) {
                if map[c] != usize::MAX {
                    trip.push((i, map[c], v));
                }
            }
        }
        Csr::from_triplets(keep.len(), &trip)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual ‖Ax − b‖ / ‖b‖ (absolute when b = 0).
pub fn relative_residual(a: &Csr, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&r) / nb
    } else {
        norm(&r)
    }
}

enum Backend {
    Direct(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Pcg { inv_diag: Vec<f64> },
}

/// Factorized (or preconditioned) symmetric positive definite system.
pub struct SpdSolver {
    matrix: Csr,
    backend: Backend,
}

impl SpdSolver {
    pub fn new(matrix: Csr, stage: &'static str) -> Result<Self> {
        Self::with_limit(matrix, stage, DIRECT_SOLVE_LIMIT)
    }

    pub fn with_limit(matrix: Csr, stage: &'static str, direct_limit: usize) -> Result<Self> {
        let backend = if matrix.n <= direct_limit {
            faer::set_global_parallelism(faer::Par::Seq);
            let trip: Vec<Triplet<usize, usize, f64>> = (0..matrix.n)
                .flat_map(|r| matrix.row(r).map(move |(c, v)| Triplet::new(r, c, v)))
                .collect();
            let a = SparseColMat::<usize, f64>::try_new_from_triplets(matrix.n, matrix.n, &trip)
                .map_err(|e| Error::Operator(format!("{stage}: {e:?}")))?;
            let llt = a.sp_cholesky(Side::Lower).map_err(|_| Error::Solver {
                stage,
                residual: f64::NAN,
            })?;
            Backend::Direct(llt)
        } else {
            let inv_diag = matrix
                .diagonal()
                .iter()
                .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect();
            Backend::Pcg { inv_diag }
        };
        Ok(SpdSolver { matrix, backend })
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, Backend::Direct(_))
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64], stage: &'static str) -> Result<Vec<f64>> {
        let x = match &self.backend {
            Backend::Direct(llt) => {
                let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
                let sol = llt.solve(&rhs);
                (0..b.len()).map(|i| sol[(i, 0)]).collect()
            }
            Backend::Pcg { inv_diag } => pcg(&self.matrix, inv_diag, b),
        };
        let residual = relative_residual(&self.matrix, &x, b);
        if !residual.is_finite() || residual > 1e-8 {
            return Err(Error::Solver { stage, residual });
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients to `PCG_TOLERANCE` relative
/// residual.
fn pcg(a: &Csr, inv_diag: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let nb = norm(b);
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return x;
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..(10 * n).max(1000) {
        let ap = a.mul_vec(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= PCG_TOLERANCE * nb {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian_plus_identity(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 1.0));
            if i + 1 < n {
                t.push((i, i, 1.0));
                t.push((i + 1, i + 1, 1.0));
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        Csr::from_triplets(n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.values.len(), 2);
    }

    #[test]
    fn direct_and_pcg_agree() {
        let a = path_laplacian_plus_identity(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let direct = SpdSolver::new(a.clone(), "test").unwrap();
        let iterative = SpdSolver::with_limit(a, "test", 10).unwrap();
        assert!(direct.is_direct() && !iterative.is_direct());
        let x = direct.solve(&b, "test").unwrap();
        let y = iterative.solve(&b, "test").unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn direct_solve_is_bitwise_repeatable() {
        let a = path_laplacian_plus_identity(200);
        let b: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let x = SpdSolver::new(a.clone(), "t").unwrap().solve(&b, "t").unwrap();
        let y = SpdSolver::new(a, "t").unwrap().solve(&b, "t").unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn submatrix_drops_row_and_column() {
        let a = path_laplacian_plus_identity(4);
        let s = a.submatrix(&[0, 2, 3]);
        assert_eq!(s.n, 3);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 2), -1.0);
    }
}
