//! Measurement unraveling in the photocount picture: jump operators,
//! the Lemma-1 consistency residual, the time-ordered Dyson oracle, and
//! Monte Carlo sampling of photocount records.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::disentangle::n0_generator;
use crate::dynamics::LindbladGenerator;
use crate::error::{Result, SimError};
use crate::hilbert::{make_annihilator, DensityMatrix};
use crate::linalg::{
    cr, expm, expm_action, frobenius, gauss_legendre, identity, CMat, CVec, SparseCMat,
};
use crate::params::SystemParams;

/// Ordered detector labels over an interval, optionally with jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotocountRecord {
    /// Detector indices, each 1 or 2, in order of detection.
    pub labels: Vec<u8>,
    /// Interval length in 1/gamma units.
    pub dt_total: f64,
    /// Jump times, strictly increasing in (0, dt_total), when tracked.
    pub times: Option<Vec<f64>>,
}

impl PhotocountRecord {
    pub fn new(labels: Vec<u8>, dt_total: f64) -> Result<Self> {
        let rec = PhotocountRecord {
            labels,
            dt_total,
            times: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_times(labels: Vec<u8>, dt_total: f64, times: Vec<f64>) -> Result<Self> {
        let rec = PhotocountRecord {
            labels,
            dt_total,
            times: Some(times),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_total >= 0.0) {
            return Err(SimError::Domain("dt_total must be >= 0".into()));
        }
        if self.labels.iter().any(|&k| k != 1 && k != 2) {
            return Err(SimError::Domain("detector labels must be 1 or 2".into()));
        }
        if let Some(times) = &self.times {
            if times.len() != self.labels.len() {
                return Err(SimError::Domain(
                    "jump times and labels must have equal length".into(),
                ));
            }
            let mut prev = 0.0;
            for &t in times {
                if !(t > prev && t < self.dt_total) {
                    return Err(SimError::Domain(
                        "jump times must be strictly increasing within (0, dt_total)".into(),
                    ));
                }
                prev = t;
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }
}

/// A conditional state with the probability (density) of its record.
#[derive(Debug, Clone)]
pub struct ConditionalResult {
    pub rho_c: DensityMatrix,
    /// Record probability; may underflow to 0 for long records, in which
    /// case `log_weight` remains meaningful.
    pub weight: f64,
    pub log_weight: f64,
    pub record: PhotocountRecord,
}

/// Jump operator C_k = sqrt(gamma/2) e^{i pi (k-1)/2} [a + (-1)^k beta]
/// on the joint space.
pub fn jump_operator(k: u8, params: &SystemParams) -> Result<CMat> {
    if k != 1 && k != 2 {
        return Err(SimError::Domain(format!(
            "detector label k = {k} not in {{1, 2}}"
        )));
    }
    let a = make_annihilator(params);
    let sign = if k == 1 { -1.0 } else { 1.0 };
    let shift = identity(params.joint_dim()).mapv(|x| x * (params.beta * cr(sign)));
    let phase = crate::disentangle::jump_phase(k) * cr((params.gamma / 2.0).sqrt());
    Ok((a + shift).mapv(|x| x * phase))
}

/// The superoperator J_k rho = C_k rho C_k^dag.
pub fn apply_jump(ck: &CMat, rho: &CMat) -> CMat {
    ck.dot(rho).dot(&ck.t().mapv(|x| x.conj()))
}

/// || S_0(tau) rho - (1 + tau (L - J_1 - J_2)) rho ||_F, which must scale
/// as O(tau^2) for the jump/smooth split to solve the master equation.
///
/// N0(tau) is applied by exponential actions on the columns (tau is
/// small, so a handful of Taylor terms per column suffice).
pub fn lemma1_residual(tau: f64, rho: &CMat, params: &SystemParams) -> Result<f64> {
    let mut gen0 = crate::disentangle::n0_generator_sparse(params);
    gen0.scale(cr(tau));
    let dim = rho.nrows();
    if dim != params.joint_dim() {
        return Err(SimError::DimensionMismatch {
            expected: params.joint_dim(),
            got: dim,
        });
    }
    // N0(tau) rho
    let mut left = CMat::zeros((dim, dim));
    for j in 0..dim {
        let col = rho.column(j).to_owned();
        left.column_mut(j).assign(&expm_action(&gen0, &col, 1e-14));
    }
    // (N0 rho) N0^dag: act on the rows via the conjugated generator
    let mut smooth = CMat::zeros((dim, dim));
    let left_conj = left.mapv(|x| x.conj());
    for i in 0..dim {
        let row = left_conj.row(i).to_owned();
        smooth
            .row_mut(i)
            .assign(&expm_action(&gen0, &row, 1e-14).mapv(|x| x.conj()));
    }
    let gen = LindbladGenerator::new(params);
    let mut lin = gen.rhs(rho);
    for k in [1u8, 2] {
        let ck = jump_operator(k, params)?;
        lin = lin - apply_jump(&ck, rho);
    }
    let first_order = rho + &lin.mapv(|x| x * cr(tau));
    Ok(frobenius(&(&smooth - &first_order)))
}

/// Log-log slope of `lemma1_residual` over a geometric tau grid.
pub fn lemma1_slope(taus: &[f64], rho: &CMat, params: &SystemParams) -> Result<f64> {
    let mut xs = Vec::with_capacity(taus.len());
    let mut ys = Vec::with_capacity(taus.len());
    for &tau in taus {
        let r = lemma1_residual(tau, rho, params)?;
        xs.push(tau.ln());
        ys.push(r.ln());
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// How segments are propagated inside the Dyson integral.
pub trait ConditionalEvolver: Sync {
    fn dim(&self) -> usize;
    /// Apply the smooth propagator over `tau` to a state vector.
    fn segment(&self, v: &CVec, tau: f64) -> CVec;
    /// Apply the jump operator C_k to a state vector.
    fn jump(&self, k: u8, v: &CVec) -> CVec;
}

/// Bare-frame evolver backed by a sparse generator and exponential
/// actions. `exact` selects the N0 generator (full coupling) over the
/// sigma_y-diagonal N generator.
pub struct BareEvolver {
    gen: SparseCMat,
    jumps: [SparseCMat; 2],
    tol: f64,
}

impl BareEvolver {
    pub fn new(params: &SystemParams, exact: bool) -> Result<Self> {
        let gen = if exact {
            crate::disentangle::n0_generator_sparse(params)
        } else {
            crate::disentangle::n_generator_sparse(params)
        };
        Ok(BareEvolver {
            gen,
            jumps: [jump_operator_sparse(1, params)?, jump_operator_sparse(2, params)?],
            tol: 1e-13,
        })
    }
}

/// Sparse joint-space jump operator C_k.
pub fn jump_operator_sparse(k: u8, params: &SystemParams) -> Result<SparseCMat> {
    if k != 1 && k != 2 {
        return Err(SimError::Domain(format!(
            "detector label k = {k} not in {{1, 2}}"
        )));
    }
    let nf = params.n_fock;
    let phase = crate::disentangle::jump_phase(k) * cr((params.gamma / 2.0).sqrt());
    let shift = params.beta * cr(if k == 1 { -1.0 } else { 1.0 });
    let mut tri: Vec<(usize, usize, num_complex::Complex64)> = Vec::with_capacity(4 * nf);
    for atom in 0..2 {
        for n in 0..nf {
            let i = atom * nf + n;
            if n > 0 {
                tri.push((i - 1, i, phase * cr((n as f64).sqrt())));
            }
            if shift != cr(0.0) {
                tri.push((i, i, phase * shift));
            }
        }
    }
    Ok(SparseCMat::from_triplets(2 * nf, tri))
}

impl ConditionalEvolver for BareEvolver {
    fn dim(&self) -> usize {
        self.gen.dim
    }

    fn segment(&self, v: &CVec, tau: f64) -> CVec {
        if tau == 0.0 {
            return v.clone();
        }
        let scaled = scale_sparse(&self.gen, tau);
        expm_action(&scaled, v, self.tol)
    }

    fn jump(&self, k: u8, v: &CVec) -> CVec {
        self.jumps[(k - 1) as usize].matvec(v)
    }
}

pub(crate) fn scale_sparse(a: &SparseCMat, s: f64) -> SparseCMat {
    let mut out = a.clone();
    out.scale(cr(s));
    out
}

/// Weighted rank-1 decomposition of a density matrix, the working
/// representation of the Dyson oracle and the trajectory sampler.
#[derive(Debug, Clone)]
pub struct StateRoots {
    /// (weight, vector) pairs: rho = sum_r w_r |v_r><v_r|.
    pub roots: Vec<(f64, CVec)>,
}

impl StateRoots {
    pub fn from_pure(v: CVec) -> Self {
        StateRoots {
            roots: vec![(1.0, v)],
        }
    }

    pub fn from_mixture(roots: Vec<(f64, CVec)>) -> Self {
        StateRoots { roots }
    }

    pub fn dim(&self) -> usize {
        self.roots.first().map(|(_, v)| v.len()).unwrap_or(0)
    }

    /// Dense rho = sum_r w_r |v_r><v_r|.
    pub fn to_dense(&self) -> CMat {
        let n = self.dim();
        let mut rho = CMat::zeros((n, n));
        for (w, v) in &self.roots {
            accumulate_outer(&mut rho, *w, v);
        }
        rho
    }

    pub fn trace(&self) -> f64 {
        self.roots
            .iter()
            .map(|(w, v)| w * v.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }
}

pub(crate) fn accumulate_outer(rho: &mut CMat, w: f64, v: &CVec) {
    let n = v.len();
    for i in 0..n {
        let wi = cr(w) * v[i];
        if wi.norm_sqr() == 0.0 {
            continue;
        }
        for j in 0..n {
            rho[[i, j]] += wi * v[j].conj();
        }
    }
}

/// Budget on quad_points^m for the nested quadrature.
const DYSON_COST_BUDGET: f64 = 1e6;

/// Evaluate the time-ordered Dyson integral for one record by
/// tensor-product Gauss-Legendre quadrature mapped onto the ordered
/// simplex 0 < t_1 < ... < t_m < dt_total, keeping the result as a
/// weighted branch-vector list (rank form).
///
/// The record probability is the sum of w ||v||^2 over branches.
pub fn dyson_branches<E: ConditionalEvolver>(
    rho0: &StateRoots,
    labels: &[u8],
    dt_total: f64,
    quad_points: usize,
    evolver: &E,
) -> Result<Vec<(f64, CVec)>> {
    let m = labels.len();
    if m > 3 {
        return Err(SimError::Cost(format!(
            "record length m = {m} exceeds the m <= 3 oracle limit"
        )));
    }
    if m > 0 && quad_points < 8 {
        return Err(SimError::Domain("quad_points must be >= 8".into()));
    }
    if (quad_points as f64).powi(m as i32) > DYSON_COST_BUDGET {
        return Err(SimError::Cost(format!(
            "quad_points^m = {}^{m} exceeds budget {DYSON_COST_BUDGET:.0}",
            quad_points
        )));
    }
    if m == 0 {
        return Ok(rho0
            .roots
            .iter()
            .map(|(w, v)| (*w, evolver.segment(v, dt_total)))
            .collect());
    }
    let (nodes, weights) = gauss_legendre(quad_points);
    // iterated substitution t_m = dt x_m, t_p = t_{p+1} x_p with
    // Jacobian dt * prod_{p=2..m} t_p
    let mut tuples: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut idx = vec![0usize; m];
    loop {
        let mut times = vec![0.0; m];
        let mut jac = dt_total;
        let mut upper = dt_total;
        for p in (0..m).rev() {
            times[p] = upper * nodes[idx[p]];
            if p > 0 {
                jac *= times[p];
            }
            upper = times[p];
        }
        let mut wq = 1.0;
        for &i in &idx {
            wq *= weights[i];
        }
        tuples.push((times, wq * jac));
        let mut carry = 0;
        while carry < m {
            idx[carry] += 1;
            if idx[carry] < quad_points {
                break;
            }
            idx[carry] = 0;
            carry += 1;
        }
        if carry == m {
            break;
        }
    }
    let branches: Vec<(f64, CVec)> = tuples
        .par_iter()
        .flat_map_iter(|(times, factor)| {
            rho0.roots.iter().map(move |(w, v)| {
                let mut branch = evolver.segment(v, times[0]);
                for p in 0..m {
                    branch = evolver.jump(labels[p], &branch);
                    let next_t = if p + 1 < m { times[p + 1] } else { dt_total };
                    branch = evolver.segment(&branch, next_t - times[p]);
                }
                (w * factor, branch)
            })
        })
        .collect();
    Ok(branches)
}

/// Dense form of the Dyson integral: unnormalized conditional state and
/// its trace.
pub fn dyson_oracle_roots<E: ConditionalEvolver>(
    rho0: &StateRoots,
    labels: &[u8],
    dt_total: f64,
    quad_points: usize,
    evolver: &E,
) -> Result<(f64, CMat)> {
    let branches = dyson_branches(rho0, labels, dt_total, quad_points, evolver)?;
    let n = evolver.dim();
    let mut acc = CMat::zeros((n, n));
    for (w, v) in &branches {
        accumulate_outer(&mut acc, *w, v);
    }
    let p: f64 = acc.diag().iter().map(|z| z.re).sum();
    Ok((p, acc))
}

/// Dyson-expansion conditional state for a labels-only record.
///
/// `use_exact` selects the exact propagator N0 over the approximate N
/// between jumps. The returned weight is the record probability
/// p(k_1..k_m; dt); rho_c is the normalized integral.
pub fn dyson_oracle(
    rho0: &StateRoots,
    labels: &[u8],
    dt_total: f64,
    quad_points: usize,
    params: &SystemParams,
    use_exact: bool,
) -> Result<ConditionalResult> {
    let evolver = BareEvolver::new(params, use_exact)?;
    let (p, acc) = dyson_oracle_roots(rho0, labels, dt_total, quad_points, &evolver)?;
    if p <= 0.0 || !p.is_finite() {
        return Err(SimError::ZeroProbability(p));
    }
    let rho_c = DensityMatrix::wrap(acc.mapv(|x| x / cr(p)));
    Ok(ConditionalResult {
        rho_c,
        weight: p,
        log_weight: p.ln(),
        record: PhotocountRecord::new(labels.to_vec(), dt_total)?,
    })
}

/// Outcome of a sampled trajectory.
pub struct SampledTrajectory {
    pub record: PhotocountRecord,
    pub final_state: StateRoots,
    /// Sum of log norm factors absorbed at each renormalization.
    pub log_weight: f64,
}

/// One smooth step: a precomputed sparsified propagator for modest
/// dimensions, or on-the-fly exponential action for large ones.
enum SmoothStep {
    Precomputed(SparseCMat),
    /// Generator already scaled by dt_step.
    Action(SparseCMat),
}

impl SmoothStep {
    fn apply(&self, v: &CVec) -> CVec {
        match self {
            SmoothStep::Precomputed(m) => m.matvec(v),
            SmoothStep::Action(gen_dt) => expm_action(gen_dt, v, 1e-13),
        }
    }
}

/// Dimension above which the smooth step switches from a precomputed
/// dense-then-sparsified exponential to per-step exponential actions.
const PRECOMPUTE_DIM_LIMIT: usize = 1100;

/// Context for repeated trajectory sampling: the smooth-step propagator
/// and sparse jump operators.
pub struct TrajectorySampler {
    smooth: SmoothStep,
    jumps: [SparseCMat; 2],
    dt_step: f64,
    pub dt_total: f64,
    n_steps: usize,
}

impl TrajectorySampler {
    pub fn new(dt_total: f64, dt_step: f64, params: &SystemParams) -> Result<Self> {
        if dt_step > 0.02 / params.g.max(params.gamma) {
            return Err(SimError::StepSize(format!(
                "dt_step = {dt_step} exceeds 0.02/max(g, gamma)"
            )));
        }
        let alpha = params.alpha().norm_sqr();
        let rate = params.gamma * (alpha + params.beta.norm_sqr());
        if rate * dt_step > 0.2 {
            return Err(SimError::StepSize(format!(
                "jump probability per step {:.3} not << 1",
                rate * dt_step
            )));
        }
        let smooth = if params.joint_dim() <= PRECOMPUTE_DIM_LIMIT {
            let gen = n0_generator(params);
            let n0_step = expm(&gen.mapv(|x| x * cr(dt_step)))?;
            // the short-time propagator is banded to machine precision
            SmoothStep::Precomputed(SparseCMat::from_dense(&n0_step, 1e-15))
        } else {
            let mut gen = crate::disentangle::n0_generator_sparse(params);
            gen.scale(cr(dt_step));
            SmoothStep::Action(gen)
        };
        Ok(TrajectorySampler {
            smooth,
            jumps: [jump_operator_sparse(1, params)?, jump_operator_sparse(2, params)?],
            dt_step,
            dt_total,
            n_steps: (dt_total / dt_step).round() as usize,
        })
    }

    /// Sample one photocount record; deterministic in `seed`/`stream`.
    pub fn sample(&self, rho0: &StateRoots, seed: u64, stream: u64) -> SampledTrajectory {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut roots = rho0.clone();
        let mut labels = Vec::new();
        let mut times = Vec::new();
        let mut log_weight = 0.0;
        for step in 0..self.n_steps {
            // jump probabilities from the current state
            let mut p = [0.0f64; 2];
            for (ki, pk) in p.iter_mut().enumerate() {
                *pk = self.dt_step
                    * roots
                        .roots
                        .iter()
                        .map(|(w, v)| {
                            let jv = self.jumps[ki].matvec(v);
                            w * jv.iter().map(|z| z.norm_sqr()).sum::<f64>()
                        })
                        .sum::<f64>();
            }
            let u: f64 = rng.random();
            if u < p[0] + p[1] {
                let k = if u < p[0] { 1u8 } else { 2u8 };
                let mut norm = 0.0;
                for (w, v) in roots.roots.iter_mut() {
                    *v = self.jumps[(k - 1) as usize].matvec(v);
                    norm += *w * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
                log_weight += norm.ln() + self.dt_step.ln();
                let scale = cr(1.0 / norm.sqrt());
                for (_, v) in roots.roots.iter_mut() {
                    v.mapv_inplace(|z| z * scale);
                }
                labels.push(k);
                times.push((step as f64 + 0.5) * self.dt_step);
            } else {
                let mut norm = 0.0;
                for (w, v) in roots.roots.iter_mut() {
                    *v = self.smooth.apply(v);
                    norm += *w * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
                }
                log_weight += norm.ln();
                let scale = cr(1.0 / norm.sqrt());
                for (_, v) in roots.roots.iter_mut() {
                    v.mapv_inplace(|z| z * scale);
                }
            }
        }
        SampledTrajectory {
            record: PhotocountRecord {
                labels,
                dt_total: self.dt_total,
                times: Some(times),
            },
            final_state: roots,
            log_weight,
        }
    }
}

/// Sample one record in the bare frame (spec surface).
pub fn sample_record(
    rho0: &StateRoots,
    dt_total: f64,
    dt_step: f64,
    seed: u64,
    params: &SystemParams,
) -> Result<(PhotocountRecord, DensityMatrix)> {
    let sampler = TrajectorySampler::new(dt_total, dt_step, params)?;
    let traj = sampler.sample(rho0, seed, 0);
    let dense = traj.final_state.to_dense();
    let tr: f64 = dense.diag().iter().map(|z| z.re).sum();
    Ok((
        traj.record,
        DensityMatrix::wrap(dense.mapv(|x| x / cr(tr))),
    ))
}

/// Ensemble of conditional trajectories: mean final state plus each
/// trajectory's record and final roots (for bootstrap statistics).
pub struct EnsembleOutcome {
    pub mean: DensityMatrix,
    pub finals: Vec<StateRoots>,
    pub jump_counts: Vec<usize>,
}

/// Run `n_traj` independent trajectories (stream = trajectory index) and
/// average the final conditional states.
pub fn sample_ensemble(
    sampler: &TrajectorySampler,
    rho0: &StateRoots,
    n_traj: usize,
    seed: u64,
) -> EnsembleOutcome {
    let results: Vec<(StateRoots, usize)> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let t = sampler.sample(rho0, seed, i as u64);
            let count = t.record.count();
            (t.final_state, count)
        })
        .collect();
    let n = rho0.dim();
    let mut mean = CMat::zeros((n, n));
    for (roots, _) in &results {
        let tr = roots.trace();
        for (w, v) in &roots.roots {
            accumulate_outer(&mut mean, w / (tr * n_traj as f64), v);
        }
    }
    EnsembleOutcome {
        mean: DensityMatrix::wrap(mean),
        jump_counts: results.iter().map(|(_, c)| *c).collect(),
        finals: results.into_iter().map(|(r, _)| r).collect(),
    }
}

/// Two-sample Kolmogorov-Smirnov statistic on integer samples.
pub fn ks_statistic(a: &[usize], b: &[usize]) -> f64 {
    let max = a.iter().chain(b.iter()).copied().max().unwrap_or(0);
    let mut cdf_a = 0.0;
    let mut cdf_b = 0.0;
    let mut ks: f64 = 0.0;
    for v in 0..=max {
        cdf_a += a.iter().filter(|&&x| x == v).count() as f64 / a.len() as f64;
        cdf_b += b.iter().filter(|&&x| x == v).count() as f64 / b.len() as f64;
        ks = ks.max((cdf_a - cdf_b).abs());
    }
    ks
}

/// rho_ss in root form: equal mixture of |alpha>|+> and |alpha*>|->.
pub fn rho_ss_roots(params: &SystemParams) -> Result<StateRoots> {
    let alpha = params.alpha();
    let cp = crate::hilbert::coherent_state(alpha, params)?;
    let cm = crate::hilbert::coherent_state(alpha.conj(), params)?;
    let (plus, minus) = crate::hilbert::pm_atom_vectors();
    let v1 = crate::hilbert::joint_vector(plus, &cp.amps);
    let v2 = crate::hilbert::joint_vector(minus, &cm.amps);
    Ok(StateRoots::from_mixture(vec![(0.5, v1), (0.5, v2)]))
}

/// Convenience: vacuum (x) |g> root state.
pub fn vacuum_ground(params: &SystemParams) -> StateRoots {
    let mut v: CVec = Array1::zeros(params.joint_dim());
    v[0] = cr(1.0);
    StateRoots::from_pure(v)
}
