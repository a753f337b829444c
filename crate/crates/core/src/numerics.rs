//! Dense matrices and the least-squares solver behind every fit.
//!
//! The solver is a two-phase Householder scheme. Tall systems are first
//! reduced with a blocked, unpivoted QR to an `n x n` triangle (same singular
//! values, same minimizer); the triangle then goes through QR with column
//! pivoting, which is where rank is decided. Rank-deficient problems are
//! finished with a complete orthogonal decomposition so the returned
//! coefficients are the minimum-norm minimizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold on `|R_ii| / |R_00|` below which a pivot is dropped.
pub const RANK_TOLERANCE: f64 = 1e-12;

const PANEL_WIDTH: usize = 32;

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::Dimension {
                    context: "matrix column",
                    expected: rows,
                    found: c.len(),
                });
            }
            for (i, &v) in c.iter().enumerate() {
                m.data[i * m.cols + j] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("matvec operand", self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Aᵀ y`.
    pub fn transpose_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("transpose_matvec operand", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn to_col_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// Diagnostics from [`solve_lsq`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsqReport {
    /// Euclidean residual `‖A x_k − b_k‖` per right-hand side.
    pub residual_norms: Vec<f64>,
    /// Frobenius norm over all right-hand sides.
    pub residual_norm: f64,
    pub rank_estimate: usize,
    pub cols: usize,
    pub rank_deficient: bool,
    /// `|R_00| / |R_rr|` over the retained pivots.
    pub condition_estimate: Option<f64>,
}

/// Least-squares solve of `A X ≈ B`, one column of `X` per column of `B`.
///
/// All right-hand sides are carried through the same sequence of
/// reflections, so a multi-column solve is bitwise identical to solving the
/// columns one at a time.
pub fn solve_lsq(a: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, LsqReport)> {
    check_dim("right-hand side rows", a.rows, b.rows)?;
    if !a.is_finite() {
        return Err(Error::NonFinite("least-squares matrix".into()));
    }
    if !b.is_finite() {
        return Err(Error::NonFinite("least-squares right-hand side".into()));
    }
    let (m, n, k) = (a.rows, a.cols, b.cols);
    if m < n {
        log::warn!("underdetermined least-squares system ({m} rows < {n} columns); returning minimum-norm solution");
    }

    let mut cols = a.to_col_major();
    let mut rhs = b.to_col_major();

    // Phase 1: tall reduction to an n x n triangle.
    let (tri, tri_rows, mut c, c_rows) = if m > n && n > 0 {
        householder_qr_blocked(&mut cols, m, n, &mut rhs, k);
        let mut tri = vec![0.0; n * n];
        for j in 0..n {
            tri[j * n..j * n + j + 1].copy_from_slice(&cols[j * m..j * m + j + 1]);
        }
        let mut c = vec![0.0; n * k];
        for q in 0..k {
            c[q * n..(q + 1) * n].copy_from_slice(&rhs[q * m..q * m + n]);
        }
        (tri, n, c, n)
    } else {
        (cols, m, rhs, m)
    };

    // Phase 2: column-pivoted QR of the reduced matrix.
    let mut r = tri;
    let piv = pivoted_qr(&mut r, tri_rows, n, &mut c, c_rows, k);
    let rank = piv.rank;

    let mut x = DenseMatrix::zeros(n, k);
    if rank > 0 {
        let solutions: Vec<Vec<f64>> = if rank == n {
            (0..k)
                .map(|q| back_substitute(&r, tri_rows, n, &c[q * c_rows..q * c_rows + n]))
                .collect()
        } else {
            min_norm_solve(&r, tri_rows, n, rank, &c, c_rows, k)
        };
        for (q, sol) in solutions.iter().enumerate() {
            for (jj, &v) in sol.iter().enumerate() {
                x.set(piv.perm[jj], q, v);
            }
        }
    }

    let mut residual_norms = Vec::with_capacity(k);
    for q in 0..k {
        let xq = x.column_vec(q);
        let ax = a.matvec(&xq)?;
        let rn = (0..m)
            .map(|i| {
                let d = ax[i] - b.get(i, q);
                d * d
            })
            .sum::<f64>()
            .sqrt();
        residual_norms.push(rn);
    }
    let residual_norm = residual_norms.iter().map(|v| v * v).sum::<f64>().sqrt();
    let condition_estimate = if rank > 0 {
        let first = r[0].abs();
        let last = r[(rank - 1) * tri_rows + rank - 1].abs();
        Some(first / last)
    } else {
        None
    };
    let report = LsqReport {
        residual_norms,
        residual_norm,
        rank_estimate: rank,
        cols: n,
        rank_deficient: rank < n,
        condition_estimate,
    };
    if report.rank_deficient {
        log::debug!("least-squares matrix rank-deficient: rank {rank} of {n}");
    }
    Ok((x, report))
}

/// Optimality defect `max_j |(Aᵀ(b − A x))_j|`. Zero (up to roundoff) exactly
/// at least-squares minimizers.
pub fn residual_orthogonality(a: &DenseMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("residual_orthogonality coefficients", a.cols, x.len())?;
    check_dim("residual_orthogonality right-hand side", a.rows, b.len())?;
    let ax = a.matvec(x)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let g = a.transpose_matvec(&r)?;
    Ok(g.iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Scale used to normalize the optimality defect: `‖A‖∞ ‖b‖∞`.
pub fn optimality_scale(a: &DenseMatrix, b: &[f64]) -> f64 {
    a.norm_inf() * b.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn norm2(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

/// Householder vector for `x` in place: on return `x[0] = beta` (the new
/// diagonal entry) and `x[1..]` holds the reflector tail with implicit
/// leading 1. Returns `tau`.
fn make_reflector(x: &mut [f64]) -> f64 {
    let alpha = x[0];
    let tail = norm2(&x[1..]);
    if tail == 0.0 {
        return 0.0;
    }
    let mut beta = alpha.hypot(tail);
    if alpha >= 0.0 {
        beta = -beta;
    }
    let tau = (beta - alpha) / beta;
    let scale = 1.0 / (alpha - beta);
    for v in &mut x[1..] {
        *v *= scale;
    }
    x[0] = beta;
    tau
}

/// Apply `I − tau v vᵀ` (with `v = [1; tail]`) to `y`.
#[inline]
fn apply_reflector(tail: &[f64], tau: f64, y: &mut [f64]) {
    if tau == 0.0 {
        return;
    }
    let (y0, yt) = y.split_first_mut().expect("nonempty column");
    let w = tau * (*y0 + dot(tail, yt));
    *y0 -= w;
    axpy(-w, tail, yt);
}

/// Unpivoted blocked Householder QR of a column-major `m x n` matrix
/// (`m > n`); reflectors are applied to the `k` right-hand sides as well.
fn householder_qr_blocked(a: &mut [f64], m: usize, n: usize, rhs: &mut [f64], k: usize) {
    let mut taus = vec![0.0; n];
    let mut p = 0;
    while p < n {
        let pe = (p + PANEL_WIDTH).min(n);
        // Factor the panel.
        for j in p..pe {
            let (head, rest) = a.split_at_mut((j + 1) * m);
            let col = &mut head[j * m + j..];
            taus[j] = make_reflector(col);
            let tail: &[f64] = &col[1..];
            for jj in j + 1..pe {
                let target = &mut rest[(jj - j - 1) * m + j..(jj - j) * m];
                apply_reflector(tail, taus[j], target);
            }
        }
        // Update trailing columns and right-hand sides with the whole panel.
        let (panel_part, trailing) = a.split_at_mut(pe * m);
        let panel: &[f64] = panel_part;
        let taus_ref = &taus;
        let update = |col: &mut [f64]| {
            for j in p..pe {
                let tail = &panel[j * m + j + 1..(j + 1) * m];
                apply_reflector(tail, taus_ref[j], &mut col[j..]);
            }
        };
        trailing.par_chunks_mut(m).for_each(update);
        rhs[..k * m].par_chunks_mut(m).for_each(update);
        p = pe;
    }
}

struct Pivoting {
    perm: Vec<usize>,
    rank: usize,
}

/// Column-pivoted Householder QR (Businger–Golub with LAPACK-style norm
/// downdating) of a column-major `m x n` matrix. Stops at the first pivot
/// whose magnitude falls below `RANK_TOLERANCE · |R_00|`.
fn pivoted_qr(
    a: &mut [f64],
    m: usize,
    n: usize,
    rhs: &mut [f64],
    rhs_rows: usize,
    k: usize,
) -> Pivoting {
    let steps = m.min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut vn1: Vec<f64> = (0..n).map(|j| norm2(&a[j * m..(j + 1) * m])).collect();
    let mut vn2 = vn1.clone();
    let tol3z = f64::EPSILON.sqrt();
    let mut r00 = 0.0;
    let mut rank = 0;

    for i in 0..steps {
        let mut pvt = i;
        for j in i + 1..n {
            if vn1[j] > vn1[pvt] {
                pvt = j;
            }
        }
        if pvt != i {
            for r in 0..m {
                a.swap(pvt * m + r, i * m + r);
            }
            perm.swap(pvt, i);
            vn1[pvt] = vn1[i];
            vn2[pvt] = vn2[i];
        }

        let col = &mut a[i * m + i..(i + 1) * m];
        let tau = make_reflector(col);
        let diag = col[0].abs();
        if i == 0 {
            r00 = diag;
        }
        if diag == 0.0 || diag <= RANK_TOLERANCE * r00 {
            break;
        }
        rank = i + 1;

        let (head, rest) = a.split_at_mut((i + 1) * m);
        let tail: &[f64] = &head[i * m + i + 1..(i + 1) * m];
        rest[..(n - i - 1) * m]
            .par_chunks_mut(m)
            .for_each(|c| apply_reflector(tail, tau, &mut c[i..]));
        rhs[..k * rhs_rows]
            .par_chunks_mut(rhs_rows)
            .for_each(|c| apply_reflector(tail, tau, &mut c[i..m]));

        for j in i + 1..n {
            if vn1[j] != 0.0 {
                let ratio = a[j * m + i].abs() / vn1[j];
                let temp = (1.0 - ratio * ratio).max(0.0);
                let temp2 = temp * (vn1[j] / vn2[j]).powi(2);
                if temp2 <= tol3z {
                    vn1[j] = if i + 1 < m {
                        norm2(&a[j * m + i + 1..(j + 1) * m])
                    } else {
                        0.0
                    };
                    vn2[j] = vn1[j];
                } else {
                    vn1[j] *= temp.sqrt();
                }
            }
        }
    }
    Pivoting { perm, rank }
}

/// Solve `R x = c` for upper-triangular `n x n` leading block of a
/// column-major matrix with leading dimension `ld`.
fn back_substitute(r: &[f64], ld: usize, n: usize, c: &[f64]) -> Vec<f64> {
    let mut x = c[..n].to_vec();
    for i in (0..n).rev() {
        x[i] /= r[i * ld + i];
        let xi = x[i];
        let col = &r[i * ld..i * ld + i];
        axpy(-xi, col, &mut x[..i]);
    }
    x
}

/// Minimum-norm solutions of `[R11 R12] x = c` through a QR factorization
/// of the transposed trapezoid.
fn min_norm_solve(
    r: &[f64],
    ld: usize,
    n: usize,
    rank: usize,
    c: &[f64],
    c_rows: usize,
    k: usize,
) -> Vec<Vec<f64>> {
    // Mᵀ, n x rank, column-major: column i of Mᵀ is row i of the trapezoid.
    let mut mt = vec![0.0; n * rank];
    for i in 0..rank {
        for j in i..n {
            mt[i * n + j] = r[j * ld + i];
        }
    }
    let mut taus = vec![0.0; rank];
    for i in 0..rank {
        let (head, rest) = mt.split_at_mut((i + 1) * n);
        let col = &mut head[i * n + i..];
        taus[i] = make_reflector(col);
        let tail: &[f64] = &col[1..];
        for jj in i + 1..rank {
            apply_reflector(tail, taus[i], &mut rest[(jj - i - 1) * n + i..(jj - i) * n]);
        }
    }
    (0..k)
        .map(|q| {
            let cq = &c[q * c_rows..q * c_rows + rank];
            // Tᵀ y = c with T upper triangular (stored in mt).
            let mut y = vec![0.0; n];
            for i in 0..rank {
                let mut s = cq[i];
                for j in 0..i {
                    s -= mt[i * n + j] * y[j];
                }
                y[i] = s / mt[i * n + i];
            }
            for i in (0..rank).rev() {
                let tail = &mt[i * n + i + 1..(i + 1) * n];
                apply_reflector(tail, taus[i], &mut y[i..]);
            }
            y
        })
        .collect()
}
