//! Subcommand implementations.

use std::process::ExitCode;

use cqed_homodyne::conditional::{
    self, block_trace_lambdas, eigenvalue_pair, eigenvalue_ratio, lemma2_scalar_residual,
    real_beta_invariance, smooth_on_steady,
};
use cqed_homodyne::diffusive::{sme_ensemble_mean, sme_trajectory, SMEConfig};
use cqed_homodyne::disentangle::{
    build_n_block, column_residual, comparable_cols, corollary_residual, factorize_m,
    materialize_block, theorem1_residual, theorem2_residual,
};
use cqed_homodyne::dynamics::{build_rho_ss, evolve_unconditional, LindbladGenerator};
use cqed_homodyne::error::SimError;
use cqed_homodyne::hilbert::DensityMatrix;
use cqed_homodyne::io::{self, InitialState, OutputFormat, RunManifest, Series};
use cqed_homodyne::jumps::{self, rho_ss_roots, TrajectorySampler};
use cqed_homodyne::linalg::cr;
use cqed_homodyne::SystemParams;
use num_complex::Complex64 as C64;

use crate::observables::{series_columns, series_row, ObservableSet};
use crate::report::{render_json, render_table, CheckResult};
use crate::{write_text, Ctx};

type CmdResult = Result<ExitCode, SimError>;

fn params_of(ctx: &Ctx) -> Result<SystemParams, SimError> {
    ctx.config.params.build()
}

fn manifest(ctx: &Ctx, command: &str, params: &SystemParams, seed: Option<u64>) -> RunManifest {
    let leakage = cqed_homodyne::hilbert::coherent_state(params.alpha(), params)
        .map(|c| c.leakage)
        .unwrap_or(f64::NAN);
    RunManifest {
        command: command.into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        effective_seed: seed,
        n_fock_effective: params.n_fock,
        coherent_leakage: leakage,
        config: ctx.config.clone(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs()),
    }
}

fn write_series(ctx: &Ctx, name: &str, series: &Series) -> Result<(), SimError> {
    match ctx.format {
        OutputFormat::Csv => write_text(&ctx.out_dir, &format!("{name}.csv"), &series.to_csv()),
        OutputFormat::Json => {
            let value = serde_json::json!({
                "columns": series.columns,
                "rows": series.rows,
            });
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| SimError::Config(format!("series serialize: {e}")))?;
            write_text(&ctx.out_dir, &format!("{name}.json"), &text)
        }
    }
}

pub fn cmd_verify(ctx: &Ctx) -> CmdResult {
    let mut params = params_of(ctx)?;
    // amplitude-grade identity checks need slack beyond the bare margin
    if ctx.config.params.n_fock.is_none() {
        params.n_fock = cqed_homodyne::params::margin_levels(params.alpha().norm() + 4.0)
            .ceil() as usize;
    }
    let vcfg = ctx.config.verify.clone().unwrap_or(io::VerifyConfig {
        checks: vec![],
        tolerance: None,
    });
    let tol_override = vcfg.tolerance;
    let mut results: Vec<CheckResult> = Vec::new();
    let wanted = |name: &str| vcfg.checks.is_empty() || vcfg.checks.iter().any(|c| c == name);
    let tol = |default: f64| tol_override.unwrap_or(default);

    if wanted("theorem1") {
        results.push(run_check("theorem1", tol(1e-8), || {
            let mut worst = (0.0f64, 0usize);
            for t in [0.1, 0.5] {
                for sign in [1.0, -1.0] {
                    let (r, cols) = theorem1_residual(t, sign, &params)?;
                    if cols == 0 {
                        return Err(SimError::Truncation(format!(
                            "theorem1: no comparable columns at t = {t}"
                        )));
                    }
                    if r > worst.0 {
                        worst = (r, cols);
                    }
                }
            }
            Ok((worst.0, format!("max over t in {{0.1, 0.5}}, cols >= {}", worst.1)))
        }));
    }
    if wanted("theorem2") {
        results.push(run_check("theorem2", tol(1e-8), || {
            let mut worst = 0.0f64;
            for t in [0.1, 0.4] {
                for k in [1u8, 2] {
                    for sign in [1.0, -1.0] {
                        let (r, cols) = theorem2_residual(k, t, sign, &params)?;
                        if cols == 0 {
                            return Err(SimError::Truncation(format!(
                                "theorem2: no comparable columns at t = {t}"
                            )));
                        }
                        worst = worst.max(r);
                    }
                }
            }
            Ok((worst, "both detectors, both blocks".into()))
        }));
    }
    if wanted("corollary") {
        results.push(run_check("corollary", tol(1e-8), || {
            let mut worst = 0.0f64;
            for t in [0.1, 0.3] {
                for sign in [1.0, -1.0] {
                    let (r, cols) = corollary_residual(t, sign, &params)?;
                    if cols == 0 {
                        return Err(SimError::Truncation(format!(
                            "corollary: no comparable columns at t = {t}"
                        )));
                    }
                    worst = worst.max(r);
                }
            }
            Ok((worst, "e^{-i H_0 t} factorization".into()))
        }));
    }
    if wanted("lemma1") {
        results.push(run_check("lemma1", tol(0.1), || {
            let rho = build_rho_ss(&params)?.mat;
            let taus: Vec<f64> = (0..7)
                .map(|i| 1e-4 * 100.0f64.powf(i as f64 / 6.0))
                .collect();
            let slope = jumps::lemma1_slope(&taus, &rho, &params)?;
            Ok(((slope - 2.0).abs(), format!("slope {slope:.4} vs 2")))
        }));
    }
    if wanted("lemma2") {
        results.push(run_check("lemma2", tol(1e-6), || {
            let chk = smooth_on_steady(1.0, &params)?;
            let scalar = lemma2_scalar_residual(1.0, &params);
            Ok((
                chk.residual.max(scalar / 1e-8),
                format!(
                    "sandwich residual {:.2e} ({} steps), scalar {scalar:.2e}",
                    chk.residual, chk.composed_steps
                ),
            ))
        }));
    }
    if wanted("real-beta") {
        results.push(run_check("real-beta", tol(1e-9), || {
            let mut p = params;
            p.beta = cr(0.7);
            let chk = real_beta_invariance(&[1, 2, 1], 0.5, &p)?;
            Ok((
                chk.trace_distance.max(chk.scalar_form_rel_err),
                format!(
                    "distance {:.2e}, scalar-form {:.2e}",
                    chk.trace_distance, chk.scalar_form_rel_err
                ),
            ))
        }));
    }
    if wanted("eigenratio") {
        results.push(run_check("eigenratio", tol(1e-10), || {
            let mut p = params;
            p.beta = C64::new(0.0, 1.0);
            let mut worst = 0.0f64;
            for labels in [vec![2u8], vec![2, 2], vec![1, 2]] {
                let r = eigenvalue_ratio(&labels, 0.4, &p)?;
                let (l1, l2) = block_trace_lambdas(&labels, 0.4, &p)?;
                worst = worst.max((r - l1 / l2).abs() / r);
            }
            Ok((worst, "formula vs block traces".into()))
        }));
    }
    if wanted("semigroup") {
        results.push(run_check("semigroup", tol(1e-8), || {
            let n_a = build_n_block(0.3, 1.0, &params);
            let n_b = build_n_block(0.4, 1.0, &params);
            let n_ab = build_n_block(0.7, 1.0, &params);
            let prod = n_a.dot(&n_b);
            let fp = factorize_m(0.7, &params);
            let block = materialize_block(
                fp.z1,
                params.gamma * 0.7 / 2.0,
                fp.z2_plus,
                fp.z3_plus,
                params.n_fock,
            );
            let reach = factorize_m(0.4, &params).reach(params.gamma)
                + factorize_m(0.3, &params).reach(params.gamma);
            let cols = comparable_cols(reach, &block, &params);
            if cols == 0 {
                return Err(SimError::Truncation(
                    "semigroup: no comparable columns".into(),
                ));
            }
            let r = column_residual(&prod, &n_ab, cols);
            Ok((r, format!("N(0.3)N(0.4) vs N(0.7), {cols} cols")))
        }));
    }
    if wanted("dyson-consistency") {
        results.push(run_check("dyson-consistency", tol(1e-8), || {
            let roots = rho_ss_roots(&params)?;
            let rho0 = DensityMatrix::wrap(roots.to_dense());
            let engine = conditional::conditional_state(&rho0, &[2], 0.2, &params)?;
            let oracle = jumps::dyson_oracle(&roots, &[2], 0.2, 32, &params, false)?;
            let dw = (engine.weight - oracle.weight).abs() / oracle.weight;
            let dr = cqed_homodyne::linalg::frobenius(
                &(&engine.rho_c.mat - &oracle.rho_c.mat),
            );
            Ok((dw.max(dr), "closed form vs quadrature, m = 1".into()))
        }));
    }

    let table = render_table(&results);
    print!("{table}");
    write_text(&ctx.out_dir, "verify_report.json", &render_json(&results)?)?;
    write_text(
        &ctx.out_dir,
        "verify_manifest.json",
        &manifest(ctx, "verify", &params, None).to_json()?,
    )?;
    if results.iter().all(|r| r.pass) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn run_check<F>(name: &str, tolerance: f64, f: F) -> CheckResult
where
    F: FnOnce() -> Result<(f64, String), SimError>,
{
    match f() {
        Ok((residual, detail)) => CheckResult::new(name, residual, tolerance, detail),
        Err(e) => CheckResult {
            name: name.to_string(),
            residual: f64::INFINITY,
            tolerance,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn initial_state(params: &SystemParams, which: InitialState) -> Result<DensityMatrix, SimError> {
    match which {
        InitialState::Steady => build_rho_ss(params),
        InitialState::VacuumGround => {
            let mut mat =
                cqed_homodyne::linalg::CMat::zeros((params.joint_dim(), params.joint_dim()));
            mat[[0, 0]] = cr(1.0);
            Ok(DensityMatrix::wrap(mat))
        }
    }
}

pub fn cmd_evolve(ctx: &Ctx) -> CmdResult {
    let params = params_of(ctx)?;
    let ev = ctx
        .config
        .evolve
        .clone()
        .ok_or_else(|| SimError::Config("missing [evolve] section".into()))?;
    let gen = LindbladGenerator::new(&params);
    let obs = ObservableSet::new(&params);
    let mut series = Series::new(series_columns(false));
    let mut rho = initial_state(&params, ev.rho0)?;
    series.push(series_row(0.0, &obs.measure(&rho), None));
    let n_steps = (ev.t_total / ev.dt).round() as usize;
    let stride = ev.stride.max(1);
    let mut done = 0usize;
    while done < n_steps {
        let chunk = stride.min(n_steps - done);
        let out = evolve_unconditional(&rho, chunk as f64 * ev.dt, ev.dt, &gen, false)?;
        rho = out.rho;
        done += chunk;
        series.push(series_row(done as f64 * ev.dt, &obs.measure(&rho), None));
    }
    let halving = if ev.estimate_error && n_steps > 0 {
        let full = evolve_unconditional(
            &initial_state(&params, ev.rho0)?,
            ev.t_total,
            ev.dt / 2.0,
            &gen,
            false,
        )?;
        Some(cqed_homodyne::linalg::frobenius(&(&rho.mat - &full.rho.mat)))
    } else {
        None
    };
    write_series(ctx, "evolve_series", &series)?;
    let mut man = manifest(ctx, "evolve", &params, None);
    if let Some(h) = halving {
        man.command = format!("evolve (step-halving error {h:.3e})");
    }
    write_text(&ctx.out_dir, "evolve_manifest.json", &man.to_json()?)?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_sample(ctx: &Ctx) -> CmdResult {
    let params = params_of(ctx)?;
    let sc = ctx
        .config
        .sample
        .clone()
        .ok_or_else(|| SimError::Config("missing [sample] section".into()))?;
    let seed = ctx.seed_override.unwrap_or(sc.seed);
    let sampler = TrajectorySampler::new(sc.t_total, sc.dt, &params)?;
    let roots = rho_ss_roots(&params)?;
    let mut records_json = Vec::with_capacity(sc.n_traj);
    let mut summary = Series::new(vec![
        "traj".into(),
        "n_counts".into(),
        "log_weight".into(),
    ]);
    for i in 0..sc.n_traj {
        let traj = sampler.sample(&roots, seed, i as u64);
        summary.push(vec![
            i as f64,
            traj.record.count() as f64,
            traj.log_weight,
        ]);
        let entries: Vec<serde_json::Value> = traj
            .record
            .labels
            .iter()
            .zip(traj.record.times.as_ref().unwrap())
            .map(|(&k, &t)| serde_json::json!({"k": k, "t": t}))
            .collect();
        records_json.push(serde_json::Value::Array(entries));
    }
    let records_text = serde_json::to_string_pretty(&serde_json::Value::Array(records_json))
        .map_err(|e| SimError::Config(format!("records serialize: {e}")))?;
    write_text(&ctx.out_dir, "records.json", &records_text)?;
    write_series(ctx, "sample_summary", &summary)?;
    write_text(
        &ctx.out_dir,
        "sample_manifest.json",
        &manifest(ctx, "sample", &params, Some(seed)).to_json()?,
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_conditional(ctx: &Ctx) -> CmdResult {
    let params = params_of(ctx)?;
    let cc = ctx
        .config
        .conditional
        .clone()
        .ok_or_else(|| SimError::Config("missing [conditional] section".into()))?;
    let labels: Vec<u8> = match (&cc.record, &cc.record_file) {
        (Some(labels), None) => labels.clone(),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| SimError::Config(format!("read {path}: {e}")))?;
            io::record_from_json(&text, cc.dt_total)?.labels
        }
        _ => unreachable!("validated at parse"),
    };
    let rho0 = build_rho_ss(&params)?;
    let res = conditional::conditional_state(&rho0, &labels, cc.dt_total, &params)?;
    let obs = ObservableSet::new(&params);
    // lambda columns apply for purely imaginary nonzero beta
    let lambda_applicable = params.beta.re == 0.0 && params.beta.im != 0.0 && params.g != 0.0;
    let mut columns = series_columns(lambda_applicable);
    if lambda_applicable {
        columns.push("lambda1_formula".into());
    }
    columns.push("weight".into());
    let mut series = Series::new(columns);
    let mut row = series_row(cc.dt_total, &obs.measure(&res.rho_c), None);
    if lambda_applicable {
        let (l1, _) = block_trace_lambdas(&labels, cc.dt_total, &params)?;
        let (f1, _) = eigenvalue_pair(&labels, cc.dt_total, &params)?;
        row.push(l1);
        row.push(f1);
    }
    row.push(res.weight);
    series.push(row);
    write_series(ctx, "conditional", &series)?;
    write_text(
        &ctx.out_dir,
        "conditional_manifest.json",
        &manifest(ctx, "conditional", &params, None).to_json()?,
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_sme(ctx: &Ctx) -> CmdResult {
    let params = params_of(ctx)?;
    let sc = ctx
        .config
        .sme
        .clone()
        .ok_or_else(|| SimError::Config("missing [sme] section".into()))?;
    let seed = ctx.seed_override.unwrap_or(sc.seed);
    let cfg = SMEConfig {
        phi: sc.phi,
        eta: sc.eta,
        dt: sc.dt,
        n_traj: sc.n_traj,
        seed,
    };
    let rho0 = build_rho_ss(&params)?;
    let traj = sme_trajectory(&rho0, sc.t_total, sc.stride, &cfg, &params)?;
    let obs = ObservableSet::new(&params);
    let mut series = Series::new(series_columns(false));
    series.push(series_row(0.0, &obs.measure(&rho0), None));
    for (t, state) in &traj.checkpoints {
        series.push(series_row(*t, &obs.measure(state), None));
    }
    write_series(ctx, "sme_series", &series)?;
    let mut current = Series::new(vec!["time".into(), "i_minus".into()]);
    for (i, val) in traj.photocurrent.iter().enumerate() {
        current.push(vec![i as f64 * sc.dt, *val]);
    }
    write_series(ctx, "sme_photocurrent", &current)?;
    if sc.n_traj > 1 {
        if (sc.eta - 1.0).abs() > 1e-12 {
            return Err(SimError::Config(
                "sme ensemble runs require eta = 1 (pure-state unraveling)".into(),
            ));
        }
        let roots = rho_ss_roots(&params)?;
        let times: Vec<f64> = traj.checkpoints.iter().map(|(t, _)| *t).collect();
        let means = sme_ensemble_mean(&roots, &times, &cfg, &params)?;
        let mut mean_series = Series::new(series_columns(false));
        for (t, state) in times.iter().zip(&means) {
            mean_series.push(series_row(*t, &obs.measure(state), None));
        }
        write_series(ctx, "sme_mean", &mean_series)?;
    }
    write_text(
        &ctx.out_dir,
        "sme_manifest.json",
        &manifest(ctx, "sme", &params, Some(seed)).to_json()?,
    )?;
    Ok(ExitCode::SUCCESS)
}
