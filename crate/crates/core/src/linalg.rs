//! Least-squares kernels.
//!
//! [`SparseQr`] reduces a row-compressed design to an upper-triangular
//! factor with Givens rotations, one row at a time, so the tall trend design
//! never has to be materialized densely. Columns are eliminated in order of
//! increasing fill (sparsest first), which keeps the hour-of-week blocks
//! private to their own rows. The minimum-norm solution is then read off an
//! SVD of the small triangular factor.

use nalgebra::{DMatrix, DVector};

use crate::features::DesignMatrix;

/// Result of a minimum-norm least-squares solve.
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub beta: Vec<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

/// Row-wise Givens QR of `[X | y]`.
pub struct SparseQr {
    p: usize,
    /// Column position of each original column in elimination order.
    position: Vec<usize>,
    /// Original column of each elimination position.
    column_at: Vec<usize>,
    /// Row-major upper-triangular factor, `p` rows of width `p + 1` (last = Q'y).
    r: Vec<f64>,
    filled: Vec<bool>,
    work: Vec<f64>,
}

impl SparseQr {
    /// Prepare a factorization for `design`, choosing the elimination order.
    pub fn for_design(design: &DesignMatrix) -> Self {
        let p = design.cols();
        let counts = design.column_counts();
        let mut column_at: Vec<usize> = (0..p).collect();
        column_at.sort_by_key(|&j| (counts[j], j));
        let mut position = vec![0; p];
        for (pos, &j) in column_at.iter().enumerate() {
            position[j] = pos;
        }
        Self {
            p,
            position,
            column_at,
            r: vec![0.0; p * (p + 1)],
            filled: vec![false; p],
            work: vec![0.0; p + 1],
        }
    }

    /// Rotate one observation into the factor.
    pub fn add_row(&mut self, idx: &[u32], vals: &[f64], y: f64) {
        let p = self.p;
        let w = &mut self.work;
        let mut first = p;
        for (&c, &v) in idx.iter().zip(vals) {
            let pos = self.position[c as usize];
            w[pos] = v;
            first = first.min(pos);
        }
        w[p] = y;
        let width = p + 1;
        for k in first..p {
            let b = w[k];
            if b == 0.0 {
                continue;
            }
            let row = &mut self.r[k * width..(k + 1) * width];
            if !self.filled[k] {
                row[k..].copy_from_slice(&w[k..]);
                self.filled[k] = true;
                w[k..].iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            let a = row[k];
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            row[k] = h;
            w[k] = 0.0;
            for (rj, wj) in row[k + 1..].iter_mut().zip(w[k + 1..].iter_mut()) {
                let (rv, wv) = (*rj, *wj);
                *rj = c * rv + s * wv;
                *wj = c * wv - s * rv;
            }
        }
        w[p] = 0.0;
    }

    /// Minimum-norm solution with singular values below `rcond * s_max` treated as zero.
    pub fn solve_min_norm(&self, rcond: f64) -> LstsqSolution {
        let p = self.p;
        let width = p + 1;
        let r = DMatrix::from_fn(p, p, |i, j| if j >= i { self.r[i * width + j] } else { 0.0 });
        let qty = DVector::from_fn(p, |i, _| self.r[i * width + p]);
        let svd = r.svd(true, true);
        let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let cutoff = rcond * s_max;
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let uty = u.transpose() * &qty;
        let mut z = DVector::zeros(p);
        let mut rank = 0;
        for (i, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff && s > 0.0 {
                z[i] = uty[i] / s;
                rank += 1;
            }
        }
        let beta_perm = v_t.transpose() * z;
        let mut beta = vec![0.0; p];
        for (pos, &j) in self.column_at.iter().enumerate() {
            beta[j] = beta_perm[pos];
        }
        let mut singular_values: Vec<f64> = svd.singular_values.iter().cloned().collect();
        singular_values.sort_by(|a, b| b.total_cmp(a));
        LstsqSolution { beta, rank, singular_values }
    }
}

/// Minimum-norm least squares `argmin ||y - X b||` via orthogonal decomposition.
pub fn lstsq(design: &DesignMatrix, y: &[f64], rcond: f64) -> LstsqSolution {
    let mut qr = SparseQr::for_design(design);
    for i in 0..design.rows() {
        let (idx, vals) = design.row(i);
        qr.add_row(idx, vals, y[i]);
    }
    qr.solve_min_norm(rcond)
}

/// Weighted Gram matrix `X' W X` and `X' W y` accumulated over stored entries.
pub fn weighted_normal_equations(
    design: &DesignMatrix,
    weights: &[f64],
    y: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = design.cols();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..design.rows() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let (idx, vals) = design.row(i);
        for (a, (&ca, &va)) in idx.iter().zip(vals).enumerate() {
            let wa = w * va;
            rhs[ca as usize] += wa * y[i];
            for (&cb, &vb) in idx[a..].iter().zip(&vals[a..]) {
                gram[(ca as usize, cb as usize)] += wa * vb;
            }
        }
    }
    // Entries were accumulated into whichever triangle the column order hit.
    for i in 0..p {
        for j in (i + 1)..p {
            let s = gram[(i, j)] + gram[(j, i)];
            gram[(i, j)] = s;
            gram[(j, i)] = s;
        }
    }
    (gram, rhs)
}
