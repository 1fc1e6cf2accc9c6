//! Unconditional Lindblad evolution, the analytic steady state, and the
//! fast-oscillation residual diagnostic X(t).

use ndarray::linalg::kron;
use num_complex::Complex64 as C64;

use crate::error::{Result, SimError};
use crate::hilbert::{
    annihilator_field, coherent_state, h_int, joint_vector, make_annihilator, make_atomic_ops,
    pm_atom_vectors, DensityMatrix,
};
use crate::linalg::{c, cr, dagger, expm, gauss_legendre, identity, spectral_norm, CMat, SparseCMat};
use crate::params::SystemParams;

/// Cached sparse operators of the master-equation right-hand side
/// `L rho = [-i H_int + E(a^dag - a), rho] + (gamma/2)(2 a rho a^dag - a^dag a rho - rho a^dag a)`.
pub struct LindbladGenerator {
    pub params: SystemParams,
    /// K = -i H_int + E(a^dag - a); enters as [K, rho].
    k_op: SparseCMat,
    a_op: SparseCMat,
    a_dag: SparseCMat,
    /// diagonal of a^dag a
    number_diag: Vec<f64>,
}

impl LindbladGenerator {
    pub fn new(params: &SystemParams) -> Self {
        let a = make_annihilator(params);
        let hint = h_int(params);
        let k = hint.mapv(|x| x * c(0.0, -1.0)) + (&dagger(&a) - &a).mapv(|x| x * cr(params.drive));
        let nf = params.n_fock;
        let mut number_diag = vec![0.0; 2 * nf];
        for atom in 0..2 {
            for n in 0..nf {
                number_diag[atom * nf + n] = n as f64;
            }
        }
        LindbladGenerator {
            params: *params,
            k_op: SparseCMat::from_dense(&k, 1e-300),
            a_op: SparseCMat::from_dense(&a, 1e-300),
            a_dag: SparseCMat::from_dense(&dagger(&a), 1e-300),
            number_diag,
        }
    }

    /// L rho.
    pub fn rhs(&self, rho: &CMat) -> CMat {
        let dim = rho.nrows();
        assert_eq!(dim, self.k_op.dim, "generator/state dimension mismatch");
        let gamma = self.params.gamma;
        // [K, rho]
        let mut out = self.k_op.left_mul_dense(rho) - self.k_op.right_mul_dense(rho);
        // gamma a rho a^dag
        let arho = self.a_op.left_mul_dense(rho);
        out = out + self.a_dag.right_mul_dense(&arho).mapv(|x| x * cr(gamma));
        // -(gamma/2)(n rho + rho n)
        for i in 0..dim {
            let ni = self.number_diag[i];
            for j in 0..dim {
                out[[i, j]] -= cr(gamma / 2.0 * (ni + self.number_diag[j])) * rho[[i, j]];
            }
        }
        out
    }
}

/// `L rho` for a caller-held generator; errors on dimension mismatch.
pub fn lindblad_rhs(rho: &CMat, gen: &LindbladGenerator) -> Result<CMat> {
    if rho.nrows() != gen.params.joint_dim() || rho.ncols() != gen.params.joint_dim() {
        return Err(SimError::DimensionMismatch {
            expected: gen.params.joint_dim(),
            got: rho.nrows(),
        });
    }
    Ok(gen.rhs(rho))
}

/// Result of a fixed-step integration.
pub struct EvolveOutcome {
    pub rho: DensityMatrix,
    /// Largest |tr rho - 1| observed before each renormalization.
    pub max_trace_drift: f64,
    /// Largest Hermiticity residual observed before re-Hermitization.
    pub max_herm_drift: f64,
    /// Frobenius distance to a half-step integration of the same
    /// interval, when requested.
    pub step_halving_err: Option<f64>,
}

/// Classical fixed-step RK4 integration of the master equation, with the
/// state re-Hermitized ((rho + rho^dag)/2) and trace-renormalized each
/// step.
pub fn evolve_unconditional(
    rho0: &DensityMatrix,
    dt_total: f64,
    dt_step: f64,
    gen: &LindbladGenerator,
    estimate_error: bool,
) -> Result<EvolveOutcome> {
    let p = &gen.params;
    let dt_max = 0.02 / p.g.max(p.gamma);
    if dt_step > dt_max {
        return Err(SimError::StepSize(format!(
            "dt_step = {dt_step} exceeds 0.02/max(g, gamma) = {dt_max:.3e}"
        )));
    }
    let (rho, td, hd) = rk4_run(&rho0.mat, dt_total, dt_step, gen);
    let step_halving_err = if estimate_error {
        let (rho_half, _, _) = rk4_run(&rho0.mat, dt_total, dt_step / 2.0, gen);
        Some(crate::linalg::frobenius(&(&rho - &rho_half)))
    } else {
        None
    };
    Ok(EvolveOutcome {
        rho: DensityMatrix::wrap(rho),
        max_trace_drift: td,
        max_herm_drift: hd,
        step_halving_err,
    })
}

fn rk4_run(rho0: &CMat, dt_total: f64, dt_step: f64, gen: &LindbladGenerator) -> (CMat, f64, f64) {
    let n_steps = (dt_total / dt_step).round().max(0.0) as usize;
    let mut rho = rho0.clone();
    let mut max_trace_drift = 0.0_f64;
    let mut max_herm_drift = 0.0_f64;
    for _ in 0..n_steps {
        let k1 = gen.rhs(&rho);
        let k2 = gen.rhs(&(&rho + &k1.mapv(|x| x * cr(dt_step / 2.0))));
        let k3 = gen.rhs(&(&rho + &k2.mapv(|x| x * cr(dt_step / 2.0))));
        let k4 = gen.rhs(&(&rho + &k3.mapv(|x| x * cr(dt_step))));
        rho = rho
            + (k1 + k2.mapv(|x| x * cr(2.0)) + k3.mapv(|x| x * cr(2.0)) + k4)
                .mapv(|x| x * cr(dt_step / 6.0));
        let tr: C64 = rho.diag().sum();
        max_trace_drift = max_trace_drift.max((tr - cr(1.0)).norm());
        let herm = crate::linalg::frobenius(&(&rho - &dagger(&rho)));
        max_herm_drift = max_herm_drift.max(herm);
        rho = (&rho + &dagger(&rho)).mapv(|x| x * cr(0.5));
        let tr2: f64 = rho.diag().iter().map(|z| z.re).sum();
        rho.mapv_inplace(|x| x / cr(tr2));
    }
    (rho, max_trace_drift, max_herm_drift)
}

/// The analytic steady state
/// `rho_ss = 1/2 (|alpha><alpha| (x) |+><+| + |alpha*><alpha*| (x) |-><-|)`
/// with alpha = (2E + ig)/gamma.
pub fn build_rho_ss(params: &SystemParams) -> Result<DensityMatrix> {
    let alpha = params.alpha();
    let cp = coherent_state(alpha, params)?;
    let cm = coherent_state(alpha.conj(), params)?;
    let (plus, minus) = pm_atom_vectors();
    let v1 = joint_vector(plus, &cp.amps);
    let v2 = joint_vector(minus, &cm.amps);
    let dim = params.joint_dim();
    let mut mat = CMat::zeros((dim, dim));
    for v in [&v1, &v2] {
        for i in 0..dim {
            for j in 0..dim {
                mat[[i, j]] += cr(0.5) * v[i] * v[j].conj();
            }
        }
    }
    Ok(DensityMatrix::wrap(mat))
}

/// The fast-oscillation operator
/// `2 X(t) = g (a^dag - a - i g sigma_y t)(sigma_x cos[g t (a^dag + a)] - sigma_z sin[g t (a^dag + a)])`,
/// whose neglect turns the exact smooth propagator into the
/// sigma_y-diagonal approximation.
pub fn rwa_operator(t: f64, params: &SystemParams) -> Result<CMat> {
    let nf = params.n_fock;
    let g = params.g;
    let a = annihilator_field(nf);
    let s_field = &dagger(&a) + &a;
    // cos/sin of the Hermitian g t (a^dag + a) via one unitary exponential
    let u = expm(&s_field.mapv(|x| x * c(0.0, g * t)))?;
    let ud = dagger(&u);
    let cos_m = (&u + &ud).mapv(|x| x * cr(0.5));
    let sin_m = (&u - &ud).mapv(|x| x * c(0.0, -0.5));
    let at = make_atomic_ops(nf);
    let eye2 = identity(2);
    let lhs = kron(&eye2, &(&dagger(&a) - &a))
        + kron(&at.sigma_y2, &identity(nf)).mapv(|x| x * c(0.0, -g * t));
    let rhs = kron(&at.sigma_x2, &cos_m) - kron(&at.sigma_z2, &sin_m);
    Ok(lhs.dot(&rhs).mapv(|x| x * cr(g / 2.0)))
}

/// Spectral norm of X(t) and of the running time average
/// `(1/T) \int_0^T X(s) ds` with T = t, the latter by Gauss-Legendre
/// quadrature. The average decays with g T; the instantaneous norm does
/// not.
pub fn rwa_residual(t: f64, params: &SystemParams) -> Result<(f64, f64)> {
    if params.g == 0.0 || t == 0.0 {
        let x = rwa_operator(t, params)?;
        let n = spectral_norm(&x);
        return Ok((n, n));
    }
    let x_t = rwa_operator(t, params)?;
    let norm_t = spectral_norm(&x_t);
    let (nodes, weights) = gauss_legendre(48);
    let dim = params.joint_dim();
    let mut avg = CMat::zeros((dim, dim));
    for (xq, wq) in nodes.iter().zip(&weights) {
        let xs = rwa_operator(t * xq, params)?;
        avg = avg + xs.mapv(|v| v * cr(*wq));
    }
    // nodes/weights are on [0,1]; the 1/T and the T of the substitution cancel
    Ok((norm_t, spectral_norm(&avg)))
}
