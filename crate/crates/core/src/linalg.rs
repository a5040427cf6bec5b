//! Compressed sparse rows, ILU(0) and preconditioned BiCGSTAB.
//!
//! Everything runs sequentially in a fixed order so results are bitwise
//! reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n × n` matrix from triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(i, j, _)) = t.iter().find(|&&(i, j, _)| i >= n || j >= n) {
            return Err(Error::Assembly(format!("entry ({i},{j}) outside a {n}x{n} matrix")));
        }
        if let Some(&(i, j, v)) = t.iter().find(|e| !e.2.is_finite()) {
            return Err(Error::Assembly(format!("non-finite entry {v} at ({i},{j})")));
        }
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, row_ptr, col, val })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            y[i] = s;
        }
    }

    /// Copy with the off-diagonal entries of column `p` removed. After a
    /// row has been pinned to the identity this restores symmetry without
    /// changing the solution (the pinned value is zero).
    pub fn without_column(&self, p: usize) -> Result<Self> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j != p || i == p {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(self.n, t)
    }

    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        self.mul_vec(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    }
}

/// Incomplete LU factorization with the sparsity of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::Assembly(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.col[k]] = k;
            }
            for k in start..end {
                let j = lu.col[k];
                if j >= i {
                    break;
                }
                let pivot = lu.val[diag[j]];
                let factor = lu.val[k] / pivot;
                lu.val[k] = factor;
                for kk in diag[j] + 1..lu.row_ptr[j + 1] {
                    let p = pos[lu.col[kk]];
                    if p != usize::MAX {
                        lu.val[p] -= factor * lu.val[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.col[k]] = usize::MAX;
            }
            let d = lu.val[diag[i]];
            if !(d.abs() > 1e-300) || !d.is_finite() {
                return Err(Error::Assembly(format!("zero pivot in row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        let n = lu.n;
        for i in 0..n {
            let mut s = r[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.val[k] * z[lu.col[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.val[k] * z[lu.col[k]];
            }
            z[i] = s / lu.val[self.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual `‖b − Ax‖ / ‖b‖`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Normwise backward error below which a symmetric solve is accepted even
/// if the relative residual target is below the attainable accuracy (large
/// coefficient contrast or strong cancellation in the right-hand side).
const BACKWARD_FLOOR: f64 = 1e3 * f64::EPSILON;

/// `‖b − Ax‖ / (‖A‖_∞ ‖x‖ + ‖b‖)` from the relative residual `rel`.
fn backward_error(a: &CsrMatrix, x: &[f64], bnorm: f64, rel: f64) -> f64 {
    let anorm = (0..a.n)
        .map(|i| a.row(i).map(|(_, v)| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    rel * bnorm / (anorm * norm(x) + bnorm)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A factorized system ready for repeated solves.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    precond: Ilu0,
}

impl LinearSystem {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        let precond = Ilu0::new(&matrix)?;
        Ok(Self { matrix, precond })
    }

    /// Preconditioned conjugate gradients starting from `x`, for symmetric
    /// positive definite matrices (ILU(0) of a symmetric matrix is a
    /// symmetric preconditioner).
    pub fn solve_symmetric(&self, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
        let a = &self.matrix;
        let n = a.n;
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(SolveStats {
                iterations: 0,
                residual: 0.0,
            });
        }
        let mut r = a.residual(x, b);
        let mut z = vec![0.0; n];
        self.precond.apply(&r, &mut z);
        let mut p = z.clone();
        let mut q = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let mut rel = norm(&r) / bnorm;
        let mut it = 0;
        while rel > opts.rel_tol && it < opts.max_iter {
            it += 1;
            a.mul_vec(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            rel = norm(&r) / bnorm;
            if rel <= opts.rel_tol {
                r = a.residual(x, b);
                rel = norm(&r) / bnorm;
                if rel <= opts.rel_tol || backward_error(a, x, bnorm, rel) <= BACKWARD_FLOOR {
                    break;
                }
            }
            self.precond.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rel = norm(&a.residual(x, b)) / bnorm;
        if !(rel <= opts.rel_tol || backward_error(a, x, bnorm, rel) <= BACKWARD_FLOOR) {
            return Err(Error::Stagnation {
                iterations: it,
                residual: rel,
            });
        }
        Ok(SolveStats {
            iterations: it,
            residual: rel,
        })
    }

    /// Right-preconditioned BiCGSTAB starting from `x`.
    pub fn solve(&self, b: &[f64], x: &mut [f64], opts: &SolverOptions) -> Result<SolveStats> {
        let a = &self.matrix;
        let n = a.n;
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(SolveStats {
                iterations: 0,
                residual: 0.0,
            });
        }
        let accept = |x: &[f64], rel: f64| rel <= opts.rel_tol || backward_error(a, x, bnorm, rel) <= BACKWARD_FLOOR;
        let mut total = 0;
        let mut r = a.residual(x, b);
        let mut rel = norm(&r) / bnorm;
        let (mut p, mut v, mut s, mut t) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut ph, mut sh) = (vec![0.0; n], vec![0.0; n]);
        // Restart loop guards against breakdown.
        'restart: while !accept(x, rel) && total < opts.max_iter {
            let r0 = r.clone();
            let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            while total < opts.max_iter {
                total += 1;
                let rho_new = dot(&r0, &r);
                if rho_new.abs() < 1e-300 * bnorm * bnorm || omega == 0.0 {
                    r = a.residual(x, b);
                    rel = norm(&r) / bnorm;
                    continue 'restart;
                }
                let beta = (rho_new / rho) * (alpha / omega);
                rho = rho_new;
                for i in 0..n {
                    p[i] = r[i] + beta * (p[i] - omega * v[i]);
                }
                self.precond.apply(&p, &mut ph);
                a.mul_vec(&ph, &mut v);
                let den = dot(&r0, &v);
                if den == 0.0 {
                    r = a.residual(x, b);
                    rel = norm(&r) / bnorm;
                    continue 'restart;
                }
                alpha = rho / den;
                for i in 0..n {
                    s[i] = r[i] - alpha * v[i];
                }
                if norm(&s) / bnorm <= opts.rel_tol {
                    for i in 0..n {
                        x[i] += alpha * ph[i];
                    }
                    r = a.residual(x, b);
                    rel = norm(&r) / bnorm;
                    if accept(x, rel) {
                        break 'restart;
                    }
                    continue 'restart;
                }
                self.precond.apply(&s, &mut sh);
                a.mul_vec(&sh, &mut t);
                let tt = dot(&t, &t);
                omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
                for i in 0..n {
                    x[i] += alpha * ph[i] + omega * sh[i];
                    r[i] = s[i] - omega * t[i];
                }
                rel = norm(&r) / bnorm;
                if !rel.is_finite() {
                    return Err(Error::Stagnation {
                        iterations: total,
                        residual: rel,
                    });
                }
                if rel <= opts.rel_tol {
                    // Confirm with the true residual.
                    r = a.residual(x, b);
                    rel = norm(&r) / bnorm;
                    if accept(x, rel) {
                        break 'restart;
                    }
                    continue 'restart;
                }
            }
        }
        if !accept(x, rel) {
            return Err(Error::Stagnation {
                iterations: total,
                residual: rel,
            });
        }
        Ok(SolveStats {
            iterations: total,
            residual: rel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t).unwrap()
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0), (1, 1, 1.0)]).unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.nnz(), 3);
        assert!(CsrMatrix::from_triplets(1, vec![(0, 1, 1.0)]).is_err());
    }

    #[test]
    fn ilu_is_exact_for_tridiagonal() {
        let a = laplace_1d(20, 0.1);
        let ilu = Ilu0::new(&a).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; 20];
        a.mul_vec(&x, &mut b);
        let mut z = vec![0.0; 20];
        ilu.apply(&b, &mut z);
        for (zi, xi) in z.iter().zip(&x) {
            assert!((zi - xi).abs() < 1e-12);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let n = 200;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -1.7));
            }
            if i + 1 < n {
                t.push((i, i + 1, -0.3));
            }
            t.push((i, (i * 7 + 3) % n, -0.2));
        }
        let a = CsrMatrix::from_triplets(n, t).unwrap();
        let sys = LinearSystem::new(a.clone()).unwrap();
        let b: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let mut x = vec![0.0; n];
        let opts = SolverOptions {
            rel_tol: 1e-12,
            max_iter: 1000,
        };
        let st = sys.solve(&b, &mut x, &opts).unwrap();
        assert!(st.residual <= 1e-12);
        let r = a.residual(&x, &b);
        assert!(norm(&r) / norm(&b) <= 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sys = LinearSystem::new(laplace_1d(5, 0.0)).unwrap();
        let mut x = vec![1.0; 5];
        sys.solve(&[0.0; 5], &mut x, &SolverOptions::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
