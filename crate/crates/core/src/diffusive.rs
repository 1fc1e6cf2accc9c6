//! The continuous-homodyne limit: stochastic master equation for the
//! conditional state and the simulated difference photocurrent.
//!
//! The conditional density matrix obeys
//!
//! ```text
//! d rho_c = L rho_c dt
//!         + sqrt(gamma eta) (e^{-i phi} a rho_c + e^{i phi} rho_c a^dag
//!           - tr[rho_c (e^{-i phi} a + e^{i phi} a^dag)] rho_c) dW,
//! ```
//!
//! integrated by Euler-Maruyama with explicit re-Hermitization and trace
//! renormalization per step. The difference photocurrent, in units of
//! the (large) local-oscillator amplitude, is
//! `I_-/|beta| = gamma eta tr[rho_c(e^{i phi} a^dag + e^{-i phi} a)] + sqrt(gamma eta) xi`
//! with xi = dW/dt manufactured from the same Gaussian increment that
//! drives the state update.
//!
//! At unit efficiency the flow preserves purity; ensembles run a
//! pure-state unraveling of the same equation, which is what makes
//! 2000-trajectory martingale checks affordable.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dynamics::LindbladGenerator;
use crate::error::{Result, SimError};
use crate::hilbert::{make_annihilator, DensityMatrix};
use crate::jumps::StateRoots;
use crate::linalg::{c, cr, dagger, trace, CMat, CVec, SparseCMat};
use crate::params::SystemParams;

/// Configuration of a homodyne-limit run.
#[derive(Debug, Clone, Copy)]
pub struct SMEConfig {
    /// Local-oscillator phase (radians).
    pub phi: f64,
    /// Detection efficiency, in (0, 1].
    pub eta: f64,
    /// Euler-Maruyama step.
    pub dt: f64,
    /// Ensemble size.
    pub n_traj: usize,
    /// RNG seed; trajectory i uses stream i.
    pub seed: u64,
}

impl SMEConfig {
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(SimError::Domain(format!(
                "eta = {} outside (0, 1]",
                self.eta
            )));
        }
        if self.dt * params.gamma > 0.05 || self.dt > 0.02 / params.g.max(params.gamma) {
            return Err(SimError::StepSize(format!(
                "dt = {} too large for gamma = {}, g = {}",
                self.dt, params.gamma, params.g
            )));
        }
        Ok(())
    }
}

/// Dense-state SME stepper: caches the measurement operator alongside
/// the Lindblad generator.
pub struct SmeStepper {
    pub gen: LindbladGenerator,
    meas: SparseCMat,
    meas_dag: SparseCMat,
    root_rate: f64,
}

impl SmeStepper {
    pub fn new(cfg: &SMEConfig, params: &SystemParams) -> Result<Self> {
        cfg.validate(params)?;
        let a = make_annihilator(params);
        let meas = a.mapv(|x| x * C64::from_polar(1.0, -cfg.phi));
        Ok(SmeStepper {
            gen: LindbladGenerator::new(params),
            meas: SparseCMat::from_dense(&meas, 1e-300),
            meas_dag: SparseCMat::from_dense(&dagger(&meas), 1e-300),
            root_rate: (params.gamma * cfg.eta).sqrt(),
        })
    }

    /// The stochastic bracket e^{-i phi} a rho + e^{i phi} rho a^dag
    /// - tr[...] rho; traceless by construction.
    pub fn measurement_bracket(&self, rho: &CMat) -> CMat {
        let lhs = self.meas.left_mul_dense(rho);
        let rhs = self.meas_dag.right_mul_dense(rho);
        let sum = lhs + rhs;
        let tr = trace(&sum);
        sum - rho.mapv(|x| x * tr)
    }

    /// One Euler-Maruyama update; `dw` is the Gaussian increment with
    /// variance dt supplied by the caller.
    pub fn step(&self, rho: &CMat, dw: f64, dt: f64) -> CMat {
        let drift = self.gen.rhs(rho);
        let noise = self.measurement_bracket(rho);
        let mut out =
            rho + &drift.mapv(|x| x * cr(dt)) + noise.mapv(|x| x * cr(self.root_rate * dw));
        // re-Hermitize and renormalize
        out = (&out + &dagger(&out)).mapv(|x| x * cr(0.5));
        let tr: f64 = out.diag().iter().map(|z| z.re).sum();
        out.mapv(|x| x / cr(tr))
    }

    /// Photocurrent sample in units of |beta|:
    /// gamma eta tr[rho(e^{i phi} a^dag + e^{-i phi} a)] + sqrt(gamma eta) xi.
    pub fn photocurrent(&self, rho: &CMat, xi: f64) -> f64 {
        let lhs = self.meas.left_mul_dense(rho);
        let mean: f64 = lhs.diag().iter().map(|z| z.re).sum::<f64>() * 2.0;
        self.root_rate * self.root_rate * mean + self.root_rate * xi
    }
}

/// One Euler-Maruyama update of the conditional density matrix (spec
/// surface over [`SmeStepper`]).
pub fn sme_step(
    rho_c: &DensityMatrix,
    dw: f64,
    cfg: &SMEConfig,
    gen_params: &SystemParams,
) -> Result<DensityMatrix> {
    let stepper = SmeStepper::new(cfg, gen_params)?;
    Ok(DensityMatrix::wrap(stepper.step(&rho_c.mat, dw, cfg.dt)))
}

/// Photocurrent sample for a state and noise value xi = dW/dt.
pub fn photocurrent_sample(
    rho_c: &DensityMatrix,
    xi: f64,
    cfg: &SMEConfig,
    params: &SystemParams,
) -> Result<f64> {
    let stepper = SmeStepper::new(cfg, params)?;
    Ok(stepper.photocurrent(&rho_c.mat, xi))
}

/// A dense-state trajectory with checkpointed states and photocurrent
/// series. Checkpoints land every `stride` steps (and at the end).
pub struct SmeTrajectory {
    pub checkpoints: Vec<(f64, DensityMatrix)>,
    pub photocurrent: Vec<f64>,
}

/// Integrate one seeded trajectory of the dense SME.
pub fn sme_trajectory(
    rho0: &DensityMatrix,
    t_total: f64,
    stride: usize,
    cfg: &SMEConfig,
    params: &SystemParams,
) -> Result<SmeTrajectory> {
    let stepper = SmeStepper::new(cfg, params)?;
    let n_steps = (t_total / cfg.dt).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut rho = rho0.mat.clone();
    let mut checkpoints = Vec::new();
    let mut photocurrent = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        let dw = z * cfg.dt.sqrt();
        photocurrent.push(stepper.photocurrent(&rho, dw / cfg.dt));
        rho = stepper.step(&rho, dw, cfg.dt);
        if (step + 1) % stride.max(1) == 0 || step + 1 == n_steps {
            checkpoints.push((
                (step + 1) as f64 * cfg.dt,
                DensityMatrix::wrap(rho.clone()),
            ));
        }
    }
    Ok(SmeTrajectory {
        checkpoints,
        photocurrent,
    })
}

/// Pure-state unraveling of the same equation at eta = 1:
/// `d psi = [K - C^dag C / 2 + (x/2) C - x^2/8] psi dt + (C - x/2) psi dW`
/// with C = sqrt(gamma) e^{-i phi} a and x = <C + C^dag>.
pub struct PureSmeStepper {
    k_op: SparseCMat,
    c_op: SparseCMat,
    cdc_half: SparseCMat,
}

impl PureSmeStepper {
    pub fn new(cfg: &SMEConfig, params: &SystemParams) -> Result<Self> {
        cfg.validate(params)?;
        if (cfg.eta - 1.0).abs() > 1e-12 {
            return Err(SimError::Domain(
                "pure-state unraveling requires eta = 1".into(),
            ));
        }
        let a = make_annihilator(params);
        let hint = crate::hilbert::h_int(params);
        let k = hint.mapv(|x| x * c(0.0, -1.0))
            + (&dagger(&a) - &a).mapv(|x| x * cr(params.drive));
        let c_op = a.mapv(|x| x * (C64::from_polar(1.0, -cfg.phi) * cr(params.gamma.sqrt())));
        let cdc_half = dagger(&c_op).dot(&c_op).mapv(|x| x * cr(0.5));
        Ok(PureSmeStepper {
            k_op: SparseCMat::from_dense(&k, 1e-300),
            c_op: SparseCMat::from_dense(&c_op, 1e-300),
            cdc_half: SparseCMat::from_dense(&cdc_half, 1e-300),
        })
    }

    pub fn step(&self, psi: &CVec, dw: f64, dt: f64) -> CVec {
        let cpsi = self.c_op.matvec(psi);
        // x = <C + C^dag> = 2 Re <psi|C|psi>
        let x = 2.0
            * psi
                .iter()
                .zip(cpsi.iter())
                .map(|(p, cp)| (p.conj() * cp).re)
                .sum::<f64>();
        let mut dpsi = self.k_op.matvec(psi);
        dpsi = dpsi - self.cdc_half.matvec(psi);
        dpsi = dpsi + cpsi.mapv(|z| z * cr(x / 2.0));
        dpsi = dpsi - psi.mapv(|z| z * cr(x * x / 8.0));
        let noise = &cpsi - &psi.mapv(|z| z * cr(x / 2.0));
        let mut out = psi + &dpsi.mapv(|z| z * cr(dt)) + noise.mapv(|z| z * cr(dw));
        let norm: f64 = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        out.mapv_inplace(|z| z / cr(norm));
        out
    }
}

/// Ensemble mean of the eta = 1 pure-state unraveling at the requested
/// checkpoint times. The initial mixture is sampled per trajectory from
/// the root weights, so the ensemble mean converges to the unconditional
/// evolution of the full mixture.
pub fn sme_ensemble_mean(
    rho0: &StateRoots,
    checkpoints: &[f64],
    cfg: &SMEConfig,
    params: &SystemParams,
) -> Result<Vec<DensityMatrix>> {
    let stepper = PureSmeStepper::new(cfg, params)?;
    let dim = rho0.dim();
    let total_w: f64 = rho0.roots.iter().map(|(w, v)| {
        w * v.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }).sum();
    let mut sorted_times = checkpoints.to_vec();
    sorted_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let step_targets: Vec<usize> = sorted_times
        .iter()
        .map(|t| (t / cfg.dt).round() as usize)
        .collect();
    let n_steps = *step_targets.last().unwrap_or(&0);

    let partials: Vec<Vec<CMat>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|traj| {
            let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
            rng.set_stream(traj as u64);
            // sample the initial pure branch from the mixture
            let u: f64 = rand::Rng::random(&mut rng);
            let mut acc = 0.0;
            let mut psi = rho0.roots[0].1.clone();
            for (w, v) in &rho0.roots {
                let wn = w * v.iter().map(|z| z.norm_sqr()).sum::<f64>() / total_w;
                acc += wn;
                if u <= acc {
                    psi = v.clone();
                    break;
                }
            }
            let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            psi.mapv_inplace(|z| z / cr(norm));
            let mut outs: Vec<CMat> = Vec::with_capacity(step_targets.len());
            let mut target_idx = 0;
            for step in 0..=n_steps {
                while target_idx < step_targets.len() && step_targets[target_idx] == step {
                    let mut outer = CMat::zeros((dim, dim));
                    for i in 0..dim {
                        for j in 0..dim {
                            outer[[i, j]] = psi[i] * psi[j].conj();
                        }
                    }
                    outs.push(outer);
                    target_idx += 1;
                }
                if step == n_steps {
                    break;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                psi = stepper.step(&psi, z * cfg.dt.sqrt(), cfg.dt);
            }
            outs
        })
        .collect();

    let mut means = Vec::with_capacity(step_targets.len());
    for ci in 0..step_targets.len() {
        let mut mean = CMat::zeros((dim, dim));
        for p in &partials {
            mean = mean + &p[ci];
        }
        means.push(DensityMatrix::wrap(
            mean.mapv(|x| x / cr(cfg.n_traj as f64)),
        ));
    }
    Ok(means)
}
