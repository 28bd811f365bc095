//! Subcommand bodies. Each writes its artifacts under the experiment's
//! output directory and prints a short summary.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use prior_transport::gauss_bridge::{
    hj_residual_gaussian, initial_riccati, moment_flow, pi_zero_explicit, riccati_flow, tube_probes, BridgePolicy,
};
use prior_transport::io;
use prior_transport::omt::{
    self, cell_centers, displacement_interp, lift_map, monotone_map_1d, quadratic_cost, reduce_marginals,
    transport_cost, GridDensity, TransportMap1D, TransportPlan,
};
use prior_transport::sampler::{ensemble_stats, simulate_gauss_bridge};
use prior_transport::sinkhorn::{
    build_kernel, entropic_interpolation, fortet_solve, marginal_residuals, zero_noise_sweep, FortetOptions,
    SweepOptions,
};
use prior_transport::{Error, TransitionTable};

use crate::config::Experiment;
use crate::error::CliError;

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io { context: format!("creating {}", dir.display()), source: e })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io { context: format!("writing {}", path.display()), source: e })
}

fn eps_label(eps: f64) -> String {
    format!("eps{eps}")
}

fn table(exp: &Experiment) -> Result<TransitionTable, CliError> {
    TransitionTable::build(&exp.system, exp.steps).map_err(CliError::from_validation)
}

fn fmt_row(m: &DMatrix<f64>) -> String {
    prior_transport::linalg::row_major(m).iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

pub fn gramian(exp: &Experiment) -> Result<(), CliError> {
    let tbl = table(exp)?;
    write(&exp.out, "gramian.csv", &io::gramian_csv(&tbl))?;
    println!("lambda_min(M(1,0)) = {}", tbl.lambda_min_m10());
    println!("M(1,0) = {}", fmt_row(tbl.m10()));
    println!("Phi(1,0) = {}", fmt_row(tbl.phi10()));
    Ok(())
}

fn simulate(exp: &Experiment, tbl: &TransitionTable, eps: f64, policy: &BridgePolicy) -> Result<(), CliError> {
    let (s0, _) = exp.gaussian()?;
    let ens = simulate_gauss_bridge(policy, s0, eps, exp.paths, tbl.steps(), exp.seed)?;
    let stats = ensemble_stats(&ens);
    write(&exp.out, &format!("paths_{}.csv", eps_label(eps)), &io::paths_csv(&ens))?;
    if let Ok(stats) = stats {
        write(&exp.out, &format!("stats_{}.csv", eps_label(eps)), &io::stats_csv(&stats))?;
    }
    Ok(())
}

pub fn gauss_bridge(exp: &Experiment) -> Result<(), CliError> {
    let (s0, s1) = exp.gaussian()?;
    let tbl = table(exp)?;
    for &eps in exp.epsilons()? {
        let policy = BridgePolicy::solve(&tbl, eps, s0, s1)?;
        let flow = moment_flow(&tbl, &policy, s0, s1)?;
        write(&exp.out, &format!("flow_{}.csv", eps_label(eps)), &io::flow_csv(&flow, &policy))?;
        if exp.paths > 0 {
            simulate(exp, &tbl, eps, &policy)?;
        }
        println!(
            "eps={eps}: n(1) = [{}], Sigma(1) = [{}]",
            flow.means.last().unwrap().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "),
            fmt_row(flow.covs.last().unwrap())
        );
    }
    Ok(())
}

pub fn sample_paths(exp: &Experiment) -> Result<(), CliError> {
    let (s0, s1) = exp.gaussian()?;
    if exp.paths == 0 {
        return Err(CliError::Config("sample-paths needs paths > 0".into()));
    }
    let tbl = table(exp)?;
    for &eps in exp.epsilons()? {
        let policy = BridgePolicy::solve(&tbl, eps, s0, s1)?;
        simulate(exp, &tbl, eps, &policy)?;
        println!("eps={eps}: {} paths written", exp.paths);
    }
    Ok(())
}

/// Evaluation grid covering [lo, hi] with `n` cells.
fn span_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let pad = 0.5 * (hi - lo).max(1e-9) / n as f64;
    cell_centers(lo - pad, hi + pad, n)
}

struct Displacement {
    map: TransportMap1D,
    frames: Vec<(f64, omt::Interpolant)>,
}

fn displacement(exp: &Experiment, tbl: &TransitionTable) -> Result<Displacement, CliError> {
    let (r0, r1) = exp.densities()?;
    let map = omt::omt_map(tbl, r0, r1)?;
    if !map.is_monotone() {
        return Err(CliError::Numerical(Error::InvalidInput("computed transport map is not nondecreasing".into())));
    }
    let mut frames = Vec::with_capacity(exp.times.len());
    for &t in &exp.times {
        frames.push((t, displacement_interp(tbl, &map, r0, t, r0.points())?));
    }
    let lo = frames.iter().flat_map(|(_, f)| f.particles.iter()).cloned().fold(f64::INFINITY, f64::min);
    let hi = frames.iter().flat_map(|(_, f)| f.particles.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let eval = span_grid(lo, hi, exp.grid);
    for (_, frame) in frames.iter_mut() {
        frame.density = omt::deposit(&frame.particles, &frame.masses, &eval)?;
    }
    Ok(Displacement { map, frames })
}

pub fn omt1d(exp: &Experiment) -> Result<(), CliError> {
    let (r0, _) = exp.densities()?;
    let tbl = table(exp)?;
    let disp = displacement(exp, &tbl)?;
    write(&exp.out, "map.csv", &io::map_csv(&disp.map))?;
    let densities: Vec<(f64, GridDensity)> = disp.frames.iter().map(|(t, f)| (*t, f.density.clone())).collect();
    write(&exp.out, "flow.csv", &io::density_flow_csv(&densities))?;
    let mut particles = String::from("particle_id,t,x,mass\n");
    for (t, frame) in &disp.frames {
        for (i, (x, m)) in frame.particles.iter().zip(&frame.masses).enumerate() {
            particles.push_str(&format!("{i},{},{},{}\n", io::fmt_f64(*t), io::fmt_f64(*x), io::fmt_f64(*m)));
        }
    }
    write(&exp.out, "particles.csv", &particles)?;
    let cost = transport_cost(&tbl, TransportPlan::Map(&disp.map), r0)?;
    println!("transport cost = {cost}");
    Ok(())
}

fn positive_epsilons(exp: &Experiment) -> Result<&[f64], CliError> {
    let eps = exp.epsilons()?;
    if eps.iter().any(|e| *e <= 0.0) {
        return Err(CliError::Config("Sinkhorn bridges need every epsilon > 0".into()));
    }
    Ok(eps)
}

fn with_eps(eps: f64, e: Error) -> CliError {
    match e {
        Error::NotConverged { .. } => CliError::Numerical(Error::InvalidInput(format!("eps={eps}: {e}"))),
        other => CliError::Numerical(other),
    }
}

pub fn sinkhorn(exp: &Experiment) -> Result<(), CliError> {
    let (r0, r1) = exp.densities()?;
    let tbl = table(exp)?;
    let opts = FortetOptions { tol: exp.tol, max_iter: exp.max_iter, warm_start: None };
    let disp = displacement(exp, &tbl)?;
    let eval_base = disp.frames.first().map(|(_, f)| f.density.points().to_vec()).unwrap_or_default();
    for &eps in positive_epsilons(exp)? {
        let kernel = build_kernel(&tbl, eps, r0.points(), r1.points(), 0.0, 1.0)?;
        let pair = fortet_solve(&kernel, r0, r1, &opts).map_err(|e| with_eps(eps, e))?;
        let label = eps_label(eps);
        write(&exp.out, &format!("coupling_{label}.csv"), &io::coupling_csv(&pair.coupling(&kernel)))?;
        write(&exp.out, &format!("potentials_{label}.csv"), &io::potentials_csv(&pair))?;
        write(&exp.out, &format!("trace_{label}.csv"), &io::trace_csv(&pair))?;
        let margin = 4.0 * (eps * tbl.m10()[(0, 0)]).sqrt();
        let lo = eval_base.first().copied().unwrap_or(0.0) - margin;
        let hi = eval_base.last().copied().unwrap_or(1.0) + margin;
        let eval = span_grid(lo, hi, exp.grid);
        let mut frames = Vec::with_capacity(exp.times.len());
        for &t in &exp.times {
            frames.push((t, entropic_interpolation(&tbl, &pair, r0, r1, t, &eval)?));
        }
        write(&exp.out, &format!("interp_{label}.csv"), &io::density_flow_csv(&frames))?;
        println!("eps={eps}: {} iterations, residual {:.3e}", pair.iterations, pair.residual);
    }
    Ok(())
}

pub fn sweep(exp: &Experiment) -> Result<(), CliError> {
    let (r0, r1) = exp.densities()?;
    let tbl = table(exp)?;
    let eps = positive_epsilons(exp)?;
    let opts = SweepOptions { tol: exp.tol, max_iter: exp.max_iter, ..SweepOptions::default() };
    let (rows, _) = zero_noise_sweep(&tbl, r0, r1, eps, &opts)?;
    write(&exp.out, "sweep.csv", &io::sweep_csv(&rows))?;
    println!("{:>12} {:>18} {:>18}", "epsilon", "coupling_distance", "flow_distance");
    for r in &rows {
        println!("{:>12} {:>18.6e} {:>18.6e}", r.epsilon, r.coupling_distance, r.flow_distance);
    }
    Ok(())
}

struct CheckRow {
    name: String,
    value: f64,
    limit: f64,
    pass: bool,
}

fn below(name: String, value: f64, limit: f64) -> CheckRow {
    CheckRow { pass: value < limit, name, value, limit }
}

fn gaussian_checks(exp: &Experiment, tbl: &TransitionTable, rows: &mut Vec<CheckRow>) -> Result<(), CliError> {
    let (s0, s1) = exp.gaussian()?;
    let eps_list = if exp.epsilon.is_empty() { vec![0.0] } else { exp.epsilon.clone() };
    for eps in eps_list {
        let policy = BridgePolicy::solve(tbl, eps, s0, s1)?;
        let flow = moment_flow(tbl, &policy, s0, s1)?;
        let err = (flow.means.last().unwrap() - &s1.mean).amax().max((flow.covs.last().unwrap() - &s1.cov).amax());
        rows.push(below(format!("endpoint_error_eps{eps}"), err, 1e-5));
    }
    let pi0 = initial_riccati(tbl, 0.0, s0, s1)?;
    let flow0 = riccati_flow(tbl, 0.0, &pi0)?;
    let mut gap: f64 = 0.0;
    for (k, &t) in tbl.grid().iter().enumerate().skip(1) {
        gap = gap.max((pi_zero_explicit(tbl, s0, s1, t)? - &flow0.pi_flow()[k]).amax());
    }
    rows.push(below("riccati_explicit_vs_flow".into(), gap, 1e-5));
    if s0.dim() <= 3 {
        let policy = BridgePolicy::solve(tbl, 0.0, s0, s1)?;
        let flow = moment_flow(tbl, &policy, s0, s1)?;
        let probes = tube_probes(&flow, 21, 21, 3.0);
        rows.push(below("hj_residual".into(), hj_residual_gaussian(&policy, &probes), 1e-4));
    }
    Ok(())
}

fn grid_checks(exp: &Experiment, tbl: &TransitionTable, rows: &mut Vec<CheckRow>) -> Result<(), CliError> {
    let (r0, r1) = exp.densities()?;
    let (h0, h1) = reduce_marginals(tbl, r0, r1)?;
    let t_hat = monotone_map_1d(&h0, &h1)?;
    let map = lift_map(tbl, &t_hat)?;
    rows.push(CheckRow { name: "map_monotone".into(), value: f64::from(map.is_monotone() as u8), limit: 1.0, pass: map.is_monotone() });
    let cell = r0.masses().iter().chain(r1.masses().iter()).cloned().fold(0.0, f64::max);
    let push = map.source().iter().zip(map.target()).map(|(x, y)| (r1.cdf(*y) - r0.cdf(*x)).abs()).fold(0.0, f64::max);
    rows.push(CheckRow { name: "pushforward_cdf".into(), value: push, limit: 2.0 * cell, pass: push <= 2.0 * cell });
    let gap = (transport_cost(tbl, TransportPlan::Map(&map), r0)? - quadratic_cost(&h0, &t_hat)?).abs();
    rows.push(below("reduced_cost_gap".into(), gap, 1e-8));
    let opts = FortetOptions { tol: exp.tol, max_iter: exp.max_iter, warm_start: None };
    for &eps in exp.epsilon.iter().filter(|e| **e > 0.0) {
        let kernel = build_kernel(tbl, eps, r0.points(), r1.points(), 0.0, 1.0)?;
        let pair = fortet_solve(&kernel, r0, r1, &opts).map_err(|e| with_eps(eps, e))?;
        let (a, b) = marginal_residuals(&pair.coupling(&kernel), r0, r1)?;
        rows.push(CheckRow { name: format!("sinkhorn_marginals_eps{eps}"), value: a.max(b), limit: exp.tol, pass: a.max(b) < exp.tol });
    }
    Ok(())
}

/// Runs the residual and property checks that apply to the configured
/// marginals. Fails with a numerical error if any check fails.
pub fn check(exp: &Experiment) -> Result<(), CliError> {
    let tbl = table(exp)?;
    let mut rows = vec![CheckRow {
        name: "lambda_min_m10".into(),
        value: tbl.lambda_min_m10(),
        limit: prior_transport::linsys::CONTROLLABILITY_TOL,
        pass: tbl.lambda_min_m10() > prior_transport::linsys::CONTROLLABILITY_TOL,
    }];
    match exp.marginals {
        crate::config::Marginals::Gaussian(..) => gaussian_checks(exp, &tbl, &mut rows)?,
        crate::config::Marginals::Grid(..) => grid_checks(exp, &tbl, &mut rows)?,
    }
    let mut csv = String::from("name,value,limit,pass\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.name, io::fmt_f64(r.value), io::fmt_f64(r.limit), r.pass));
        println!("{} {} = {:.3e} (limit {:.1e})", if r.pass { "ok  " } else { "FAIL" }, r.name, r.value, r.limit);
    }
    write(&exp.out, "check.csv", &csv)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::Numerical(Error::InvalidInput(format!("{failed} check(s) failed"))));
    }
    Ok(())
}
