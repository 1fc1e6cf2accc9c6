//! Truncated joint Hilbert space of a two-level atom and a single field
//! mode, its standard operators, and reference states.
//!
//! Joint-space ordering: atom factor first, field factor second, so
//! `index = atom_index * n_fock + fock_index` with atom index 0 = |g>,
//! 1 = |e>. All lifted operators follow this convention.

use ndarray::linalg::kron;
use num_complex::Complex64 as C64;

use crate::error::{Result, SimError};
use crate::linalg::{self, c, cr, dagger, expm, identity, ln_factorial_table, CMat, CVec};
use crate::params::{margin_levels, SystemParams};

/// Field-space annihilation operator `a` with `<n-1|a|n> = sqrt(n)`.
pub fn annihilator_field(n_fock: usize) -> CMat {
    let mut a = CMat::zeros((n_fock, n_fock));
    for n in 1..n_fock {
        a[[n - 1, n]] = cr((n as f64).sqrt());
    }
    a
}

/// Joint-space annihilation operator `a (x) 1_atom`.
pub fn make_annihilator(params: &SystemParams) -> CMat {
    kron(&identity(2), &annihilator_field(params.n_fock))
}

/// Field-space number operator `a^dag a`.
pub fn number_field(n_fock: usize) -> CMat {
    let mut n = CMat::zeros((n_fock, n_fock));
    for k in 0..n_fock {
        n[[k, k]] = cr(k as f64);
    }
    n
}

/// Atomic lowering operator and the Pauli set, both as bare 2x2 blocks
/// and lifted to the joint space, plus the change of basis between
/// {|g>, |e>} and the sigma_y eigenbasis {|+>, |->}.
pub struct AtomicOps {
    /// sigma = |g><e| on the joint space.
    pub sigma: CMat,
    pub sigma_x: CMat,
    pub sigma_y: CMat,
    pub sigma_z: CMat,
    /// 2x2 atomic blocks (same order).
    pub sigma2: CMat,
    pub sigma_x2: CMat,
    pub sigma_y2: CMat,
    pub sigma_z2: CMat,
    /// Columns are |+> and |-> in {|g>, |e>} coordinates.
    pub pm_basis: CMat,
    n_fock: usize,
}

/// Build the atomic operator set lifted onto a joint space with
/// `n_fock` field levels. sigma_x = sigma^dag + sigma,
/// sigma_y = i(sigma^dag - sigma), sigma_z = i sigma_y sigma_x.
pub fn make_atomic_ops(n_fock: usize) -> AtomicOps {
    let mut sigma2 = CMat::zeros((2, 2));
    sigma2[[0, 1]] = cr(1.0); // |g><e|
    let sigma_x2 = &dagger(&sigma2) + &sigma2;
    let sigma_y2 = (&dagger(&sigma2) - &sigma2).mapv(|x| x * c(0.0, 1.0));
    let sigma_z2 = sigma_y2.dot(&sigma_x2).mapv(|x| x * c(0.0, 1.0));
    let inv_sqrt2 = cr(1.0 / 2.0_f64.sqrt());
    let mut pm = CMat::zeros((2, 2));
    pm[[0, 0]] = inv_sqrt2; // |+> = (|g> + i|e>)/sqrt(2)
    pm[[1, 0]] = c(0.0, 1.0) * inv_sqrt2;
    pm[[0, 1]] = inv_sqrt2; // |-> = (|g> - i|e>)/sqrt(2)
    pm[[1, 1]] = c(0.0, -1.0) * inv_sqrt2;
    let eye_f = identity(n_fock);
    AtomicOps {
        sigma: kron(&sigma2, &eye_f),
        sigma_x: kron(&sigma_x2, &eye_f),
        sigma_y: kron(&sigma_y2, &eye_f),
        sigma_z: kron(&sigma_z2, &eye_f),
        sigma2,
        sigma_x2,
        sigma_y2,
        sigma_z2,
        pm_basis: pm,
        n_fock,
    }
}

impl AtomicOps {
    /// Joint change-of-basis matrix: columns are the |+/-> (x) |n> basis
    /// expressed in bare coordinates.
    pub fn pm_transform(&self) -> CMat {
        kron(&self.pm_basis, &identity(self.n_fock))
    }

    /// Express a joint operator in the |+/-> basis: T^dag O T. In that
    /// basis rows/cols [0, n_fock) belong to the sigma_y = +1 block.
    pub fn to_pm(&self, op: &CMat) -> CMat {
        let t = self.pm_transform();
        dagger(&t).dot(op).dot(&t)
    }

    /// Inverse of [`AtomicOps::to_pm`].
    pub fn from_pm(&self, op_pm: &CMat) -> CMat {
        let t = self.pm_transform();
        t.dot(op_pm).dot(&dagger(&t))
    }
}

/// Split a pm-basis joint operator into its four n_fock-dim blocks
/// [(+,+), (+,-), (-,+), (-,-)].
pub fn pm_blocks(op_pm: &CMat, n_fock: usize) -> [CMat; 4] {
    let s = n_fock;
    [
        op_pm.slice(ndarray::s![0..s, 0..s]).to_owned(),
        op_pm.slice(ndarray::s![0..s, s..2 * s]).to_owned(),
        op_pm.slice(ndarray::s![s..2 * s, 0..s]).to_owned(),
        op_pm.slice(ndarray::s![s..2 * s, s..2 * s]).to_owned(),
    ]
}

/// Assemble a pm-basis joint operator from per-block matrices.
pub fn from_pm_blocks(blocks: &[CMat; 4], n_fock: usize) -> CMat {
    let s = n_fock;
    let mut out = CMat::zeros((2 * s, 2 * s));
    out.slice_mut(ndarray::s![0..s, 0..s]).assign(&blocks[0]);
    out.slice_mut(ndarray::s![0..s, s..2 * s]).assign(&blocks[1]);
    out.slice_mut(ndarray::s![s..2 * s, 0..s]).assign(&blocks[2]);
    out.slice_mut(ndarray::s![s..2 * s, s..2 * s]).assign(&blocks[3]);
    out
}

/// Interaction Hamiltonian H_int = ig(a^dag sigma - a sigma^dag) on the
/// joint space.
pub fn h_int(params: &SystemParams) -> CMat {
    let a = make_annihilator(params);
    let at = make_atomic_ops(params.n_fock);
    (dagger(&a).dot(&at.sigma) - a.dot(&dagger(&at.sigma))).mapv(|x| x * c(0.0, params.g))
}

/// Slow part H_0 = -g (a^dag + a) sigma_y / 2.
pub fn h0(params: &SystemParams) -> CMat {
    let a = make_annihilator(params);
    let at = make_atomic_ops(params.n_fock);
    (&dagger(&a) + &a).dot(&at.sigma_y).mapv(|x| x * cr(-params.g / 2.0))
}

/// Fast part H_1 = ig (a^dag - a) sigma_x / 2, with H_int = H_0 + H_1.
pub fn h1(params: &SystemParams) -> CMat {
    let a = make_annihilator(params);
    let at = make_atomic_ops(params.n_fock);
    (&dagger(&a) - &a).dot(&at.sigma_x).mapv(|x| x * c(0.0, params.g / 2.0))
}

/// Truncated coherent field state. Amplitudes are built in log space,
/// renormalized after truncation; the pre-normalization leakage
/// `1 - sum |c_n|^2` is returned alongside.
pub struct CoherentState {
    /// Field-space amplitudes, renormalized to unit norm.
    pub amps: CVec,
    /// Truncation leakage before renormalization.
    pub leakage: f64,
}

/// Build |amp> on the field factor. Errors if the truncation margin
/// `|amp|^2 + 6|amp| + 10 <= n_fock` is violated or leakage exceeds tol.
pub fn coherent_state(amp: C64, params: &SystemParams) -> Result<CoherentState> {
    let n_fock = params.n_fock;
    let need = margin_levels(amp.norm());
    if (n_fock as f64) < need {
        return Err(SimError::Truncation(format!(
            "coherent amplitude |amp| = {:.3} needs {:.0} Fock levels, have {}",
            amp.norm(),
            need.ceil(),
            n_fock
        )));
    }
    let mut amps = CVec::zeros(n_fock);
    if amp == cr(0.0) {
        amps[0] = cr(1.0);
        return Ok(CoherentState { amps, leakage: 0.0 });
    }
    let lnf = ln_factorial_table(n_fock);
    let ln_amp = amp.norm().ln();
    let phase = amp.arg();
    let a2 = amp.norm_sqr();
    let mut total = 0.0;
    for n in 0..n_fock {
        let lt = -a2 / 2.0 + (n as f64) * ln_amp - 0.5 * lnf[n];
        if lt > -700.0 {
            let mag = lt.exp();
            amps[n] = C64::from_polar(mag, phase * n as f64);
            total += mag * mag;
        }
    }
    let leakage = (1.0 - total).max(0.0);
    if leakage > params.tol {
        return Err(SimError::Truncation(format!(
            "coherent-state leakage {:.3e} exceeds tol {:.1e}",
            leakage, params.tol
        )));
    }
    let norm = total.sqrt();
    amps.mapv_inplace(|x| x / cr(norm));
    Ok(CoherentState { amps, leakage })
}

/// Columns of the displacement operator D(c) restricted to the first
/// `ncols` number states: column n holds D(c)|n> in the bare Fock basis.
/// Built by the recurrence D(c)|n+1> = (a^dag - conj(c)) D(c)|n> / sqrt(n+1)
/// seeded with the coherent column D(c)|0> = |c>.
pub fn displaced_number_columns(c0: C64, n_fock: usize, ncols: usize, tol: f64) -> Result<CMat> {
    let params = SystemParams::with_fock_override(0.0, 1.0, 0.0, cr(0.0), n_fock.max(2), tol)?;
    // margin check against the top column's reach
    let reach = c0.norm() + (ncols as f64).sqrt();
    if margin_levels(reach) > n_fock as f64 {
        return Err(SimError::Truncation(format!(
            "displaced columns reach {:.1} needs {:.0} levels, have {}",
            reach,
            margin_levels(reach).ceil(),
            n_fock
        )));
    }
    let mut params = params;
    params.n_fock = n_fock;
    let coh = coherent_state(c0, &params)?;
    let mut cols = CMat::zeros((n_fock, ncols));
    cols.column_mut(0).assign(&coh.amps);
    let cconj = c0.conj();
    for n in 0..ncols.saturating_sub(1) {
        let prev = cols.column(n).to_owned();
        let mut next = CVec::zeros(n_fock);
        for m in 1..n_fock {
            next[m] = cr((m as f64).sqrt()) * prev[m - 1];
        }
        for m in 0..n_fock {
            next[m] -= cconj * prev[m];
        }
        next.mapv_inplace(|x| x / cr(((n + 1) as f64).sqrt()));
        cols.column_mut(n + 1).assign(&next);
    }
    Ok(cols)
}

/// Tensor a 2-component atomic vector with a field vector,
/// atom factor first.
pub fn joint_vector(atom: [C64; 2], field: &CVec) -> CVec {
    let n = field.len();
    let mut v = CVec::zeros(2 * n);
    for (i, &amp) in atom.iter().enumerate() {
        if amp != cr(0.0) {
            for k in 0..n {
                v[i * n + k] = amp * field[k];
            }
        }
    }
    v
}

/// |+> and |-> atomic coefficient pairs in {|g>, |e>} coordinates.
pub fn pm_atom_vectors() -> ([C64; 2], [C64; 2]) {
    let s = 1.0 / 2.0_f64.sqrt();
    ([cr(s), c(0.0, s)], [cr(s), c(0.0, -s)])
}

/// exp(A t) with the overflow guard from [`linalg::expm`].
pub fn matrix_exponential(a: &CMat, t: f64) -> Result<CMat> {
    expm(&a.mapv(|x| x * cr(t)))
}

/// A normalized pure state on the joint space.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub amps: CVec,
}

impl StateVector {
    pub fn new(amps: CVec, tol: f64) -> Result<Self> {
        let norm: f64 = amps.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tol {
            return Err(SimError::Domain(format!(
                "state vector norm {norm} differs from 1 beyond tol"
            )));
        }
        Ok(StateVector { amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }
}

/// Hermitian, unit-trace, positive-semidefinite state on the joint space.
///
/// Validating constructors run the full invariant check (including a
/// Hermitian eigensolve); hot loops use [`DensityMatrix::wrap`] and
/// validate at checkpoints instead.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub mat: CMat,
}

impl DensityMatrix {
    /// Validate Hermiticity, unit trace and positivity within `tol`.
    pub fn new(mat: CMat, tol: f64) -> Result<Self> {
        let dm = DensityMatrix { mat };
        dm.validate(tol)?;
        Ok(dm)
    }

    /// Wrap without validating. The caller is responsible for invariants.
    pub fn wrap(mat: CMat) -> Self {
        DensityMatrix { mat }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let herm = linalg::frobenius(&(&self.mat - &dagger(&self.mat)));
        if herm > tol {
            return Err(SimError::Domain(format!(
                "hermiticity residual {herm:.3e} > tol"
            )));
        }
        let tr = linalg::trace(&self.mat);
        if (tr - cr(1.0)).norm() > tol {
            return Err(SimError::Domain(format!("trace {tr} differs from 1")));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < -tol {
            return Err(SimError::Domain(format!(
                "negative eigenvalue {min_ev:.3e} below -tol"
            )));
        }
        Ok(())
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let n = psi.dim();
        let mut mat = CMat::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                mat[[i, j]] = psi.amps[i] * psi.amps[j].conj();
            }
        }
        DensityMatrix { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.mat)
    }

    pub fn purity(&self) -> f64 {
        self.mat.dot(&self.mat).diag().iter().map(|x| x.re).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let ev = linalg::eigvalsh(&self.mat);
        ev.first().copied().unwrap_or(0.0)
    }

    /// Expectation value tr(rho O).
    pub fn expect(&self, op: &CMat) -> C64 {
        // tr(rho O) = sum_ij rho_ij O_ji
        let mut acc = cr(0.0);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += self.mat[[i, j]] * op[[j, i]];
            }
        }
        acc
    }

    /// Trace distance to another state: half the sum of the absolute
    /// eigenvalues of the difference.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        linalg::trace_distance(&self.mat, &other.mat)
    }

    /// Symmetrize and renormalize the trace; used by integrators
    /// between steps to suppress drift.
    pub fn rehermitize(&mut self) {
        let h = (&self.mat + &dagger(&self.mat)).mapv(|x| x * cr(0.5));
        let tr = linalg::trace(&h).re;
        self.mat = h.mapv(|x| x / cr(tr));
    }
}
