//! Compressed sparse row storage with a direct (faer LU) and an iterative
//! (ILU(0)-preconditioned BiCGSTAB) solver.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; duplicates are summed and
    /// columns sorted.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { n, indptr, indices, data }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = &self.indices[self.indptr[r]..self.indptr[r + 1]];
        cols.binary_search(&c).map(|k| self.data[self.indptr[r] + k]).unwrap_or(0.0)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for (c, v) in self.indices.iter().zip(&self.data) {
            col[*c] += v.abs();
        }
        col.into_iter().fold(0.0, f64::max)
    }

    fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.matvec(x);
        let r: f64 = ax.iter().zip(b).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        r / nb.max(f64::MIN_POSITIVE)
    }

    /// Cheap lower bound on the 1-norm condition number from one solve.
    fn condition_hint(&self, x: &[f64], b: &[f64]) -> f64 {
        let nx: f64 = x.iter().map(|v| v.abs()).sum();
        let nb: f64 = b.iter().map(|v| v.abs()).sum();
        self.norm1() * nx / nb.max(f64::MIN_POSITIVE)
    }
}

/// Sparse LU via faer.
pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.n;
    let mut trip = Vec::with_capacity(a.nnz());
    for r in 0..n {
        for (c, v) in a.row(r) {
            trip.push(Triplet::new(r, c, v));
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::Solver { reason: format!("LU factorization failed: {e:?}"), condition: f64::INFINITY })?;
    let rhs = faer::col::Col::from_fn(n, |i| b[i]);
    let sol = lu.solve(&rhs);
    let x: Vec<f64> = (0..n).map(|i| sol[i]).collect();
    check_solution(a, &x, b)
}

fn check_solution(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let res = a.relative_residual(x, b);
    if !x.iter().all(|v| v.is_finite()) || !(res < 1e-8) {
        return Err(Error::Solver {
            reason: format!("relative residual {res:.3e}"),
            condition: a.condition_hint(x, b),
        });
    }
    Ok(x.to_vec())
}

/// Incomplete LU with the sparsity of `a`, stored in place of `a`'s values.
struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for (r, d) in diag.iter_mut().enumerate() {
            for k in lu.indptr[r]..lu.indptr[r + 1] {
                if lu.indices[k] == r {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(Error::Solver { reason: format!("ILU(0): row {r} has no diagonal"), condition: f64::INFINITY });
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (lu.indptr[i], lu.indptr[i + 1]);
            for k in s..e {
                pos[lu.indices[k]] = k;
            }
            for k in s..e {
                let col = lu.indices[k];
                if col >= i {
                    break;
                }
                let piv = lu.data[diag[col]];
                if piv == 0.0 {
                    return Err(Error::Solver { reason: "ILU(0): zero pivot".into(), condition: f64::INFINITY });
                }
                lu.data[k] /= piv;
                let lik = lu.data[k];
                for q in diag[col] + 1..lu.indptr[col + 1] {
                    let p = pos[lu.indices[q]];
                    if p != usize::MAX {
                        lu.data[p] -= lik * lu.data[q];
                    }
                }
            }
            for k in s..e {
                pos[lu.indices[k]] = usize::MAX;
            }
        }
        Ok(Ilu0 { lu, diag })
    }

    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in self.lu.indptr[i]..self.diag[i] {
                s -= self.lu.data[k] * y[self.lu.indices[k]];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in self.diag[i] + 1..self.lu.indptr[i + 1] {
                s -= self.lu.data[k] * y[self.lu.indices[k]];
            }
            y[i] = s / self.lu.data[self.diag[i]];
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ILU(0)-preconditioned BiCGSTAB to relative residual `tol`.
pub fn solve_iterative(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let m = Ilu0::new(a)?;
    let nb = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if nb == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut restarts = 0;
    for _ in 0..max_iter {
        let mut rho_new = dot(&r_hat, &r);
        // Shadow residual orthogonal to the residual: restart from the current one.
        if rho_new.abs() <= 1e-30 * dot(&r, &r) {
            restarts += 1;
            if restarts > 50 {
                break;
            }
            r_hat = r.clone();
            rho_new = dot(&r_hat, &r);
            (rho, alpha, omega) = (1.0, 1.0, 1.0);
            v.fill(0.0);
            p.fill(0.0);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = m.apply(&p);
        v = a.matvec(&y);
        alpha = rho_new / dot(&r_hat, &v);
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if dot(&s, &s).sqrt() <= tol * nb {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return check_solution(a, &x, b);
        }
        let z = m.apply(&s);
        let t = a.matvec(&z);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho_new;
        if dot(&r, &r).sqrt() <= tol * nb {
            return check_solution(a, &x, b);
        }
        if !omega.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::Solver { reason: "BiCGSTAB did not converge".into(), condition: a.condition_hint(&x, b) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 4.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.5));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(n, rows)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_rows(2, vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)], vec![(1, 1.0)]]);
        assert_eq!(a.get(0, 1), 4.0);
        assert_eq!(a.get(0, 0), 2.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.row_nnz(0), 2);
    }

    #[test]
    fn direct_and_iterative_agree() {
        let a = tridiag(200);
        let b: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let x1 = solve_direct(&a, &b).unwrap();
        let x2 = solve_iterative(&a, &b, 1e-13, 500).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let a = tridiag(30);
        let b = vec![1.0; 30];
        let m = Ilu0::new(&a).unwrap();
        let x = m.apply(&b);
        assert!(a.relative_residual(&x, &b) < 1e-14);
    }

    #[test]
    fn singular_system_reports_error() {
        let a = CsrMatrix::from_rows(2, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(solve_direct(&a, &[1.0, 2.0]).is_err());
    }
}
