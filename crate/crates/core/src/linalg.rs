//! Sparse matrices and the linear solvers behind the Newton and Picard iterations.
//!
//! The direct path hands the matrix to faer's sparse LU; the iterative path is
//! a restarted GMRES with a block-Jacobi preconditioner.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square CSR matrix; duplicate triplets are summed.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> SparseMatrix {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            debug_assert!(r < n && c < n);
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
        SparseMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.col_idx[a..b].binary_search(&c) {
            Ok(i) => self.values[a + i],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// Replaces row `r` by the unit row `e_r`.
    pub fn set_unit_row(&mut self, r: usize) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        for i in a..b {
            self.values[i] = if self.col_idx[i] == r { 1.0 } else { 0.0 };
        }
        if !self.col_idx[a..b].contains(&r) {
            // Rebuild with the diagonal entry present.
            let mut t: Vec<(usize, usize, f64)> = (0..self.n)
                .flat_map(|row| self.row(row).map(move |(c, v)| (row, c, v)).collect::<Vec<_>>())
                .collect();
            t.push((r, r, 1.0));
            *self = SparseMatrix::from_triplets(self.n, t);
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<Triplet<usize, usize, f64>> = (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| Triplet::new(r, c, v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.n, self.n, &t)
            .map_err(|e| Error::Singular(format!("matrix construction: {e:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LinearSolver {
    /// Sparse LU factorization.
    #[default]
    Direct,
    /// Restarted GMRES, right-preconditioned by inverted diagonal blocks.
    Gmres { restart: usize, max_iter: usize, rel_tol: f64, block: usize },
}

impl LinearSolver {
    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != a.dim() {
            return Err(Error::SizeMismatch("linear system".into()));
        }
        match *self {
            LinearSolver::Direct => solve_direct(a, b),
            LinearSolver::Gmres { restart, max_iter, rel_tol, block } => {
                gmres(a, b, restart, max_iter, rel_tol, block)
            }
        }
    }
}

pub fn solve_direct(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let m = a.to_faer()?;
    let lu = m.sp_lu().map_err(|e| Error::Singular(format!("LU factorization: {e:?}")))?;
    let rhs = faer::Col::<f64>::from_fn(b.len(), |i| b[i]);
    let x = lu.solve(&rhs);
    let x: Vec<f64> = (0..b.len()).map(|i| x[i]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("LU solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Inverses of the `block × block` diagonal blocks (identity where singular).
struct BlockJacobi {
    block: usize,
    inv: Vec<Vec<f64>>,
}

impl BlockJacobi {
    fn new(a: &SparseMatrix, block: usize) -> BlockJacobi {
        let nb = a.dim().div_ceil(block);
        let inv = (0..nb)
            .map(|ib| {
                let lo = ib * block;
                let size = block.min(a.dim() - lo);
                let mut m = vec![0.0; size * size];
                for i in 0..size {
                    for (c, v) in a.row(lo + i) {
                        if c >= lo && c < lo + size {
                            m[i * size + (c - lo)] = v;
                        }
                    }
                }
                invert_dense(&m, size).unwrap_or_else(|| {
                    let mut id = vec![0.0; size * size];
                    (0..size).for_each(|i| id[i * size + i] = 1.0);
                    id
                })
            })
            .collect();
        BlockJacobi { block, inv }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (ib, inv) in self.inv.iter().enumerate() {
            let lo = ib * self.block;
            let size = (inv.len() as f64).sqrt() as usize;
            for i in 0..size {
                y[lo + i] = (0..size).map(|j| inv[i * size + j] * x[lo + j]).sum();
            }
        }
        y
    }
}

/// Gauss-Jordan inversion with partial pivoting of a small row-major matrix.
fn invert_dense(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = vec![0.0; n * n];
    (0..n).for_each(|i| inv[i * n + i] = 1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        for j in 0..n {
            a.swap(col * n + j, piv * n + j);
            inv.swap(col * n + j, piv * n + j);
        }
        let d = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        a[i * n + j] -= f * a[col * n + j];
                        inv[i * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gmres(a: &SparseMatrix, b: &[f64], restart: usize, max_iter: usize, rel_tol: f64, block: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let pre = BlockJacobi::new(a, block.max(1));
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let restart = restart.max(1);
    let mut total = 0;
    let mut tmp = vec![0.0; n];
    loop {
        a.matvec_into(&x, &mut tmp);
        let r: Vec<f64> = b.iter().zip(&tmp).map(|(b, ax)| b - ax).collect();
        let beta = norm2(&r);
        if beta <= rel_tol * bnorm {
            return Ok(x);
        }
        if total >= max_iter {
            return Err(Error::LinearSolver(format!("GMRES stopped at relative residual {:e}", beta / bnorm)));
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..restart {
            total += 1;
            let z = pre.apply(&basis[j]);
            a.matvec_into(&z, &mut tmp);
            let mut w = tmp.clone();
            for (i, v) in basis.iter().enumerate() {
                let hij: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
                h[i][j] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let wn = norm2(&w);
            h[j + 1][j] = wn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            (cs[j], sn[j]) = if d == 0.0 { (1.0, 0.0) } else { (h[j][j] / d, h[j + 1][j] / d) };
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= rel_tol * bnorm || wn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // Back substitution for the Krylov coefficients.
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let s: f64 = g[i] - ((i + 1)..used).map(|k| h[i][k] * y[k]).sum::<f64>();
            y[i] = s / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (k, yk) in y.iter().enumerate() {
            update.iter_mut().zip(&basis[k]).for_each(|(u, v)| *u += yk * v);
        }
        let update = pre.apply(&update);
        x.iter_mut().zip(&update).for_each(|(xi, ui)| *xi += ui);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolver("GMRES diverged".into()));
        }
    }
}
