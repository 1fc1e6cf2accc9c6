//! Dense complex linear algebra: matrix exponentials, exponential actions,
//! Hermitian eigenvalues, and small helpers used throughout the crate.
//!
//! Everything here is plain `ndarray` + `num_complex`; matrix products go
//! through `matrixmultiply`'s zgemm.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Result, SimError};

pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMat {
    Array2::from_diag_elem(n, cr(1.0))
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|x| x.conj())
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Max column sum of absolute values.
pub fn one_norm(a: &CMat) -> f64 {
    let mut max = 0.0_f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|x| x.norm()).sum();
        max = max.max(s);
    }
    max
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

/// ln(n!) table, `table[n] = ln(n!)`.
pub fn ln_factorial_table(n_max: usize) -> Vec<f64> {
    let mut t = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        t[n] = t[n - 1] + (n as f64).ln();
    }
    t
}

/// Solve A X = B by LU with partial pivoting. A is consumed.
pub fn lu_solve(mut a: CMat, mut b: CMat) -> Result<CMat> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(SimError::DimensionMismatch {
            expected: n,
            got: b.nrows(),
        });
    }
    let m = b.ncols();
    for col in 0..n {
        let mut pmax = 0.0;
        let mut prow = col;
        for row in col..n {
            let v = a[[row, col]].norm();
            if v > pmax {
                pmax = v;
                prow = row;
            }
        }
        if pmax == 0.0 {
            return Err(SimError::Domain("singular matrix in lu_solve".into()));
        }
        if prow != col {
            for j in 0..n {
                a.swap([col, j], [prow, j]);
            }
            for j in 0..m {
                b.swap([col, j], [prow, j]);
            }
        }
        let pivot = a[[col, col]];
        for row in col + 1..n {
            let factor = a[[row, col]] / pivot;
            if factor == cr(0.0) {
                continue;
            }
            for j in col + 1..n {
                let v = a[[col, j]];
                a[[row, j]] -= factor * v;
            }
            for j in 0..m {
                let v = b[[col, j]];
                b[[row, j]] -= factor * v;
            }
            a[[row, col]] = cr(0.0);
        }
    }
    let mut x = CMat::zeros((n, m));
    for col in (0..n).rev() {
        for j in 0..m {
            let mut sum = b[[col, j]];
            for k in col + 1..n {
                sum -= a[[col, k]] * x[[k, j]];
            }
            x[[col, j]] = sum / a[[col, col]];
        }
    }
    Ok(x)
}

/// Padé(13,13) coefficients (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Largest 1-norm accepted by [`expm`]; beyond this the squaring phase
/// would need more than ~46 doublings and accuracy degrades.
pub const EXPM_NORM_BOUND: f64 = 4e14;

/// Matrix exponential by scaling-and-squaring with Padé(13) core.
pub fn expm(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(SimError::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if n == 0 {
        return Ok(CMat::zeros((0, 0)));
    }
    let norm = one_norm(a);
    if !norm.is_finite() || norm > EXPM_NORM_BOUND {
        return Err(SimError::Overflow {
            norm,
            bound: EXPM_NORM_BOUND,
        });
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let a_s = a.mapv(|x| x / cr((s as f64).exp2()));

    let eye = identity(n);
    let a2 = a_s.dot(&a_s);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let w1 = &a6 * cr(PADE13[13]) + &a4 * cr(PADE13[11]) + &a2 * cr(PADE13[9]);
    let w2 = w1.dot(&a6)
        + &a6 * cr(PADE13[7])
        + &a4 * cr(PADE13[5])
        + &a2 * cr(PADE13[3])
        + &eye * cr(PADE13[1]);
    let u = a_s.dot(&w2);
    let v1 = &a6 * cr(PADE13[12]) + &a4 * cr(PADE13[10]) + &a2 * cr(PADE13[8]);
    let v = v1.dot(&a6)
        + &a6 * cr(PADE13[6])
        + &a4 * cr(PADE13[4])
        + &a2 * cr(PADE13[2])
        + &eye * cr(PADE13[0]);

    let mut r = lu_solve(&v - &u, &v + &u)?;
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Sparse complex matrix in CSR form, for exponential actions and
/// generator applications where the operator is banded.
#[derive(Debug, Clone)]
pub struct SparseCMat {
    pub dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseCMat {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        entries.sort_by_key(|(i, j, _)| (*i, *j));
        let mut merged: Vec<(usize, usize, C64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            if let Some(last) = merged.last_mut() {
                if last.0 == i && last.1 == j {
                    last.2 += v;
                    continue;
                }
            }
            merged.push((i, j, v));
        }
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(merged.len());
        let mut vals = Vec::with_capacity(merged.len());
        let mut row = 0usize;
        for (i, j, v) in merged {
            while row < i {
                row += 1;
                row_ptr[row] = col_idx.len();
            }
            col_idx.push(j);
            vals.push(v);
        }
        while row < dim {
            row += 1;
            row_ptr[row] = col_idx.len();
        }
        SparseCMat {
            dim,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn from_dense(a: &CMat, drop_tol: f64) -> Self {
        let n = a.nrows();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = a[[i, j]];
                if v.norm() > drop_tol {
                    col_idx.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseCMat {
            dim: n,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn one_norm(&self) -> f64 {
        let mut col_sums = vec![0.0_f64; self.dim];
        for (j, v) in self.col_idx.iter().zip(&self.vals) {
            col_sums[*j] += v.norm();
        }
        col_sums.into_iter().fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &CVec) -> CVec {
        let mut y = CVec::zeros(self.dim);
        for i in 0..self.dim {
            let mut acc = cr(0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
        y
    }

    /// y += scale * (A x)
    pub fn matvec_acc(&self, x: &CVec, scale: C64, y: &mut CVec) {
        for i in 0..self.dim {
            let mut acc = cr(0.0);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            y[i] += scale * acc;
        }
    }

    pub fn scale(&mut self, s: C64) {
        for v in &mut self.vals {
            *v *= s;
        }
    }

    /// A . X for dense X.
    pub fn left_mul_dense(&self, x: &CMat) -> CMat {
        let (n, m) = (self.dim, x.ncols());
        let mut out = CMat::zeros((n, m));
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.vals[k];
                let j = self.col_idx[k];
                let src = x.row(j);
                let mut dst = out.row_mut(i);
                for (d, s) in dst.iter_mut().zip(src.iter()) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// X . A for dense X.
    pub fn right_mul_dense(&self, x: &CMat) -> CMat {
        let (n, m) = (x.nrows(), self.dim);
        let mut out = CMat::zeros((n, m));
        for j in 0..self.dim {
            for k in self.row_ptr[j]..self.row_ptr[j + 1] {
                let v = self.vals[k];
                let col = self.col_idx[k];
                for i in 0..n {
                    out[[i, col]] += x[[i, j]] * v;
                }
            }
        }
        out
    }
}

/// Compute `exp(A) v` without forming `exp(A)`: scale A by 2^-s so the
/// norm is O(1), apply a truncated Taylor series, and repeat 2^s times.
///
/// Accurate to roughly `tol` relative to the intermediate norms; for
/// strongly contractive generators intermediate decay limits what is
/// recoverable, as with any f64 propagator.
pub fn expm_action(a: &SparseCMat, v: &CVec, tol: f64) -> CVec {
    let norm = a.one_norm();
    let s = if norm > 1.0 {
        norm.log2().ceil() as u32
    } else {
        0
    };
    let steps = 1u64 << s.min(63);
    let scale = cr(1.0 / steps as f64);
    let mut x = v.clone();
    for _ in 0..steps {
        let mut acc = x.clone();
        let mut term = x.clone();
        for k in 1..=60u32 {
            let mut next = CVec::zeros(a.dim);
            a.matvec_acc(&term, scale / cr(k as f64), &mut next);
            term = next;
            acc += &term;
            let tnorm: f64 = term.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let anorm: f64 = acc.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if tnorm <= tol * anorm.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        x = acc;
    }
    x
}

/// Eigenvalues of a Hermitian matrix by cyclic complex Jacobi sweeps.
///
/// The input is Hermitized symmetrically first; only eigenvalues are
/// produced. Ascending order.
pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    jacobi_hermitian(a, false).0
}

/// Eigenvalues (ascending) and eigenvectors (as columns, same order) of
/// a Hermitian matrix.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    let (ev, vecs) = jacobi_hermitian(a, true);
    (ev, vecs.expect("vectors requested"))
}

fn jacobi_hermitian(a: &CMat, want_vectors: bool) -> (Vec<f64>, Option<CMat>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigensolver needs a square matrix");
    if n == 0 {
        return (vec![], if want_vectors { Some(CMat::zeros((0, 0))) } else { None });
    }
    let mut m = (a + &dagger(a)).mapv(|x| x * cr(0.5));
    let mut vecs = if want_vectors { Some(identity(n)) } else { None };
    let scale = one_norm(&m).max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() < tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                let napq = apq.norm();
                if napq < 1e-300 {
                    continue;
                }
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                // Phase that makes the pivot real, then a real rotation.
                let omega = apq / cr(napq);
                let tau = (aqq - app) / (2.0 * napq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cth = 1.0 / (1.0 + t * t).sqrt();
                let sth = t * cth;
                // col_p' = c*col_p - s*conj(omega)*col_q,
                // col_q' = s*omega*col_p + c*col_q
                let so = cr(sth) * omega;
                let soc = cr(sth) * omega.conj();
                for i in 0..n {
                    let aip = m[[i, p]];
                    let aiq = m[[i, q]];
                    m[[i, p]] = cr(cth) * aip - soc * aiq;
                    m[[i, q]] = so * aip + cr(cth) * aiq;
                }
                for j in 0..n {
                    let apj = m[[p, j]];
                    let aqj = m[[q, j]];
                    m[[p, j]] = cr(cth) * apj - so * aqj;
                    m[[q, j]] = soc * apj + cr(cth) * aqj;
                }
                if let Some(v) = vecs.as_mut() {
                    for i in 0..n {
                        let vip = v[[i, p]];
                        let viq = v[[i, q]];
                        v[[i, p]] = cr(cth) * vip - soc * viq;
                        v[[i, q]] = so * vip + cr(cth) * viq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = m.diag().iter().map(|x| x.re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let ev: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let vecs = vecs.map(|v| {
        let mut sorted = CMat::zeros((n, n));
        for (new, &old) in order.iter().enumerate() {
            sorted.column_mut(new).assign(&v.column(old));
        }
        sorted
    });
    (ev, vecs)
}

/// Project the Hermitian operator `sum_i w_i |v_i><v_i|` (signed weights
/// allowed) onto an orthonormal basis of the span of its vectors, built
/// by modified Gram-Schmidt with reorthogonalization. Returns the small
/// Hermitian representation.
///
/// Differencing large nearly-equal states this way costs one linear
/// projection instead of a quadratic Gram cancellation, so distances
/// down to ~1e-14 of the state scale remain resolvable.
pub fn lowrank_project(terms: &[(f64, CVec)]) -> CMat {
    let r = terms.len();
    if r == 0 {
        return CMat::zeros((0, 0));
    }
    let dim = terms[0].1.len();
    let mut basis: Vec<CVec> = Vec::with_capacity(r);
    let mut coords: Vec<Vec<C64>> = Vec::with_capacity(r);
    for (_, v) in terms {
        let mut resid = v.clone();
        let mut coord = vec![cr(0.0); basis.len()];
        for _pass in 0..2 {
            for (bi, b) in basis.iter().enumerate() {
                let overlap: C64 = b.iter().zip(resid.iter()).map(|(x, y)| x.conj() * y).sum();
                coord[bi] += overlap;
                resid = resid - b.mapv(|z| z * overlap);
            }
        }
        let rnorm: f64 = resid.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let vnorm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if rnorm > 1e-14 * vnorm.max(1e-300) && rnorm > 0.0 {
            coord.push(cr(rnorm));
            basis.push(resid.mapv(|z| z / cr(rnorm)));
        }
        coords.push(coord);
        let _ = dim;
    }
    let nb = basis.len();
    let mut small = CMat::zeros((nb, nb));
    for ((w, _), coord) in terms.iter().zip(&coords) {
        for i in 0..coord.len() {
            for j in 0..coord.len() {
                small[[i, j]] += cr(*w) * coord[i] * coord[j].conj();
            }
        }
    }
    small
}

/// Eigenvalues of `sum_i w_i |v_i><v_i|` on the span of its vectors.
pub fn lowrank_eigenvalues(terms: &[(f64, CVec)]) -> Vec<f64> {
    eigvalsh(&lowrank_project(terms))
}

/// Trace distance between two states given in weighted rank-1 form,
/// without materializing either as a dense matrix.
pub fn lowrank_trace_distance(a: &[(f64, CVec)], b: &[(f64, CVec)]) -> f64 {
    let mut terms: Vec<(f64, CVec)> = Vec::with_capacity(a.len() + b.len());
    terms.extend(a.iter().cloned());
    terms.extend(b.iter().map(|(w, v)| (-w, v.clone())));
    0.5 * lowrank_eigenvalues(&terms)
        .into_iter()
        .map(f64::abs)
        .sum::<f64>()
}

/// Frobenius norm of `sum_i w_i |v_i><v_i|` in rank form.
pub fn lowrank_frobenius(terms: &[(f64, CVec)]) -> f64 {
    frobenius(&lowrank_project(terms))
}

/// Spectral norm by power iteration on A†A.
pub fn spectral_norm(a: &CMat) -> f64 {
    let n = a.ncols();
    if n == 0 {
        return 0.0;
    }
    let ad = dagger(a);
    let mut v = CVec::from_elem(n, cr(1.0 / (n as f64).sqrt()));
    // fixed deterministic perturbation to avoid unlucky orthogonality
    for (i, x) in v.iter_mut().enumerate() {
        *x += c(0.0, 1e-3 * ((i % 7) as f64 - 3.0));
    }
    let mut lam = 0.0_f64;
    for _ in 0..200 {
        let w = ad.dot(&a.dot(&v));
        let nw = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nw == 0.0 {
            return 0.0;
        }
        let next = w.mapv(|z| z / cr(nw));
        let new_lam = nw;
        let done = (new_lam - lam).abs() <= 1e-12 * new_lam.max(1e-300);
        v = next;
        lam = new_lam;
        if done {
            break;
        }
    }
    lam.sqrt()
}

/// Trace distance between Hermitian matrices: half the sum of the
/// absolute eigenvalues of the difference.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let d = a - b;
    0.5 * eigvalsh(&d).into_iter().map(f64::abs).sum::<f64>()
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess, Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
