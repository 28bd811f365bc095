//! Discrete Schrödinger bridges for the linear-system kernel.
//!
//! Potentials are stored as logarithms of function values on the grids, so
//! the coupling mass on cell pair (i, j) is
//! h₀ᵢ φ̂₀(xᵢ) q^ε(0,xᵢ,1,yⱼ) φ₁(yⱼ) h₁ⱼ with hₖ the cell widths. All
//! scalings run in the log domain.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::omt::{self, cell_centers, DiscreteCoupling, GridDensity, TransportMap1D};
use crate::linsys::TransitionTable;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// log q^ε for a scalar Gaussian transition with mean `phi·x`, variance `eps·m`.
fn log_gauss(phi: f64, m: f64, eps: f64, x: f64, y: f64) -> f64 {
    let r = y - phi * x;
    -0.5 * (2.0 * PI * eps).ln() - 0.5 * m.ln() - r * r / (2.0 * eps * m)
}

/// log Σₖ exp(rowₖ + addₖ), −∞ for an empty or all −∞ sum.
fn log_sum_exp(row: &[f64], add: &[f64]) -> f64 {
    let top = row.iter().zip(add).map(|(a, b)| a + b).fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let s: f64 = row.iter().zip(add).map(|(a, b)| (a + b - top).exp()).sum();
    top + s.ln()
}

fn scalar_pair(tbl: &TransitionTable, t: f64, s: f64) -> Result<(f64, f64)> {
    if tbl.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "grid kernels need a scalar state, system has {} states",
            tbl.dim()
        )));
    }
    Ok((tbl.phi(t, s)?[(0, 0)], tbl.gramian(t, s)?[(0, 0)]))
}

/// Transition kernel q^ε(s,xᵢ,t,yⱼ) between two 1-D grids, stored as logs.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    source: Vec<f64>,
    target: Vec<f64>,
    log_q: DMatrix<f64>,
    epsilon: f64,
}

impl KernelMatrix {
    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn log_entries(&self) -> &DMatrix<f64> {
        &self.log_q
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.log_q[(i, j)].exp()
    }

    fn from_fn(source: &[f64], target: &[f64], eps: f64, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let rows: Vec<f64> = source.par_iter().flat_map_iter(|&x| target.iter().map(move |&y| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self {
            source: source.to_vec(),
            target: target.to_vec(),
            log_q: DMatrix::from_row_slice(source.len(), target.len(), &rows),
            epsilon: eps,
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("kernel needs ε > 0, got {eps}")));
    }
    Ok(())
}

/// q^ε(s,x,t,y) = (2πε)^{-1/2}M(t,s)^{-1/2}exp(−(y−Φ(t,s)x)²/(2εM(t,s))).
pub fn build_kernel(
    tbl: &TransitionTable,
    eps: f64,
    grid0: &[f64],
    grid1: &[f64],
    s: f64,
    t: f64,
) -> Result<KernelMatrix> {
    check_eps(eps)?;
    if !(s < t) {
        return Err(Error::InvalidInput(format!("kernel needs s < t, got s={s}, t={t}")));
    }
    let (phi, m) = scalar_pair(tbl, t, s)?;
    if !(m > 0.0) {
        return Err(Error::Singular { what: "M(t,s)", cond: f64::INFINITY });
    }
    Ok(KernelMatrix::from_fn(grid0, grid1, eps, |x, y| log_gauss(phi, m, eps, x, y)))
}

/// Heat kernel (2πε)^{-1/2}exp(−(y−x)²/(2ε)) over unit time.
pub fn build_brownian_kernel(eps: f64, grid0: &[f64], grid1: &[f64]) -> Result<KernelMatrix> {
    check_eps(eps)?;
    Ok(KernelMatrix::from_fn(grid0, grid1, eps, |x, y| -0.5 * (2.0 * PI * eps).ln() - (y - x) * (y - x) / (2.0 * eps)))
}

/// Solver controls. `warm_start` seeds log φ₁ on the target grid.
#[derive(Debug, Clone)]
pub struct FortetOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FortetOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, warm_start: None }
    }
}

/// Schrödinger potentials (φ̂₀, φ₁) as logs of function values; points
/// without mass carry −∞.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub source_widths: Vec<f64>,
    pub target_widths: Vec<f64>,
    pub log_phi_hat0: Vec<f64>,
    pub log_phi1: Vec<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub residual: f64,
    /// (iteration, row L¹ residual) per sweep.
    pub trace: Vec<(usize, f64)>,
}

impl PotentialPair {
    pub fn phi_hat0(&self) -> Vec<f64> {
        self.log_phi_hat0.iter().map(|v| v.exp()).collect()
    }

    pub fn phi1(&self) -> Vec<f64> {
        self.log_phi1.iter().map(|v| v.exp()).collect()
    }

    /// Gauge change φ̂₀ → cφ̂₀, φ₁ → φ₁/c.
    pub fn rescaled(&self, c: f64) -> Self {
        let lc = c.ln();
        let mut out = self.clone();
        out.log_phi_hat0.iter_mut().for_each(|v| *v += lc);
        out.log_phi1.iter_mut().for_each(|v| *v -= lc);
        out
    }

    /// Coupling induced by the potentials through `kernel`.
    pub fn coupling(&self, kernel: &KernelMatrix) -> DiscreteCoupling {
        let (n0, n1) = (self.source.len(), self.target.len());
        let lh0: Vec<f64> = self.source_widths.iter().map(|h| h.ln()).collect();
        let lh1: Vec<f64> = self.target_widths.iter().map(|h| h.ln()).collect();
        let plan = DMatrix::from_fn(n0, n1, |i, j| {
            let a = self.log_phi_hat0[i];
            let b = self.log_phi1[j];
            if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                0.0
            } else {
                (lh0[i] + a + kernel.log_q[(i, j)] + b + lh1[j]).exp()
            }
        });
        DiscreteCoupling { source: self.source.clone(), target: self.target.clone(), plan }
    }
}

/// L¹ deviations of the row and column sums from the normalized marginals.
pub fn marginal_residuals(c: &DiscreteCoupling, rho0: &GridDensity, rho1: &GridDensity) -> Result<(f64, f64)> {
    let w0 = rho0.normalized()?.masses();
    let w1 = rho1.normalized()?.masses();
    let r = c.row_sums().iter().zip(&w0).map(|(a, b)| (a - b).abs()).sum();
    let s = c.col_sums().iter().zip(&w1).map(|(a, b)| (a - b).abs()).sum();
    Ok((r, s))
}

fn same_points(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

/// Alternating marginal fitting (Fortet/Sinkhorn) for the potentials,
/// starting from φ₁ ≡ 1 unless a warm start is given.
pub fn fortet_solve(
    kernel: &KernelMatrix,
    rho0: &GridDensity,
    rho1: &GridDensity,
    opts: &FortetOptions,
) -> Result<PotentialPair> {
    if !same_points(kernel.source(), rho0.points()) || !same_points(kernel.target(), rho1.points()) {
        return Err(Error::InvalidInput("marginal grids must match the kernel grids".into()));
    }
    let rho0 = rho0.normalized()?;
    let rho1 = rho1.normalized()?;
    let (h0, h1) = (rho0.widths(), rho1.widths());
    let (w0, w1) = (rho0.masses(), rho1.masses());
    let s0 = rho0.support_indices();
    let s1 = rho1.support_indices();
    let (n0, n1) = (s0.len(), s1.len());

    let k_rows: Vec<f64> = s0.iter().flat_map(|&i| s1.iter().map(move |&j| kernel.log_q[(i, j)])).collect();
    let k_cols: Vec<f64> = s1.iter().flat_map(|&j| s0.iter().map(move |&i| kernel.log_q[(i, j)])).collect();
    let lh0: Vec<f64> = s0.iter().map(|&i| h0[i].ln()).collect();
    let lh1: Vec<f64> = s1.iter().map(|&j| h1[j].ln()).collect();
    let lw0: Vec<f64> = s0.iter().map(|&i| w0[i]).collect();
    let target_f: Vec<f64> = s0.iter().map(|&i| (w0[i] / h0[i]).ln()).collect();
    let target_g: Vec<f64> = s1.iter().map(|&j| (w1[j] / h1[j]).ln()).collect();

    let mut g: Vec<f64> = match &opts.warm_start {
        Some(ws) if ws.len() == rho1.len() => s1.iter().map(|&j| if ws[j].is_finite() { ws[j] } else { 0.0 }).collect(),
        Some(_) => return Err(Error::InvalidInput("warm start length must match the target grid".into())),
        None => vec![0.0; n1],
    };
    let mut f = vec![0.0; n0];
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let add1: Vec<f64> = g.iter().zip(&lh1).map(|(a, b)| a + b).collect();
        let row_lse: Vec<f64> = k_rows.par_chunks(n1).map(|r| log_sum_exp(r, &add1)).collect();
        if iter > 1 {
            residual = (0..n0).map(|i| ((lh0[i] + f[i] + row_lse[i]).exp() - lw0[i]).abs()).sum();
            trace.push((iter - 1, residual));
            if !residual.is_finite() {
                return Err(Error::NonFinite("Sinkhorn potentials"));
            }
            if residual < opts.tol {
                converged = true;
                break;
            }
        }
        for i in 0..n0 {
            f[i] = target_f[i] - row_lse[i];
        }
        let add0: Vec<f64> = f.iter().zip(&lh0).map(|(a, b)| a + b).collect();
        let col_lse: Vec<f64> = k_cols.par_chunks(n0).map(|c| log_sum_exp(c, &add0)).collect();
        for j in 0..n1 {
            g[j] = target_g[j] - col_lse[j];
        }
    }

    let mut log_phi_hat0 = vec![f64::NEG_INFINITY; rho0.len()];
    let mut log_phi1 = vec![f64::NEG_INFINITY; rho1.len()];
    for (k, &i) in s0.iter().enumerate() {
        log_phi_hat0[i] = f[k];
    }
    for (k, &j) in s1.iter().enumerate() {
        log_phi1[j] = g[k];
    }
    let mut pair = PotentialPair {
        source: rho0.points().to_vec(),
        target: rho1.points().to_vec(),
        source_widths: h0,
        target_widths: h1,
        log_phi_hat0,
        log_phi1,
        epsilon: kernel.epsilon,
        iterations: iterations.saturating_sub(1),
        residual,
        trace,
    };
    let (r, c) = marginal_residuals(&pair.coupling(kernel), &rho0, &rho1)?;
    pair.residual = r.max(c);
    if !converged || !(pair.residual < opts.tol) {
        return Err(Error::NotConverged { iterations: opts.max_iter.min(iterations), residual: pair.residual });
    }
    Ok(pair)
}

/// One-time marginal φ(t,x)φ̂(t,x) of the bridge on `eval_points`, with
/// φ(t,x) = ∫q(t,x,1,y)φ₁(y)dy and φ̂(t,x) = ∫q(0,y,t,x)φ̂₀(y)dy.
/// The endpoints return the marginals themselves.
pub fn entropic_interpolation(
    tbl: &TransitionTable,
    pair: &PotentialPair,
    rho0: &GridDensity,
    rho1: &GridDensity,
    t: f64,
    eval_points: &[f64],
) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    if t == 0.0 {
        return rho0.normalized();
    }
    if t == 1.0 {
        return rho1.normalized();
    }
    let eps = pair.epsilon;
    let (phi_1t, m_1t) = scalar_pair(tbl, 1.0, t)?;
    let (phi_t0, m_t0) = scalar_pair(tbl, t, 0.0)?;
    let add1: Vec<f64> = pair.log_phi1.iter().zip(&pair.target_widths).map(|(g, h)| g + h.ln()).collect();
    let add0: Vec<f64> = pair.log_phi_hat0.iter().zip(&pair.source_widths).map(|(f, h)| f + h.ln()).collect();
    let log_rho: Vec<f64> = eval_points
        .par_iter()
        .map(|&z| {
            let fwd: Vec<f64> = pair.target.iter().map(|&y| log_gauss(phi_1t, m_1t, eps, z, y)).collect();
            let bwd: Vec<f64> = pair.source.iter().map(|&x| log_gauss(phi_t0, m_t0, eps, x, z)).collect();
            log_sum_exp(&fwd, &add1) + log_sum_exp(&bwd, &add0)
        })
        .collect();
    let top = log_rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::EmptySupport("entropic interpolation"));
    }
    GridDensity::new(eval_points.to_vec(), log_rho.iter().map(|l| (l - top).exp()).collect())?.normalized()
}

/// E|Y − T(X)| under the coupling: distance between the entropic coupling
/// and the graph of the transport map.
pub fn coupling_map_distance(c: &DiscreteCoupling, map: &TransportMap1D) -> f64 {
    let mut total = 0.0;
    for (i, x) in c.source.iter().enumerate() {
        let tx = map.eval(*x);
        for (j, y) in c.target.iter().enumerate() {
            total += c.plan[(i, j)] * (y - tx).abs();
        }
    }
    total
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Time at which entropic and displacement interpolations are compared.
    pub t_star: f64,
    pub eval_points: usize,
    /// Reuse the previous ε's potentials (rescaled by ε_prev/ε) as a start.
    pub warm_start: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, t_star: 0.5, eval_points: 512, warm_start: false }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub coupling_distance: f64,
    pub flow_distance: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Entropic bridges along a decreasing ε list, each compared with the
/// zero-noise transport solution.
pub fn zero_noise_sweep(
    tbl: &TransitionTable,
    rho0: &GridDensity,
    rho1: &GridDensity,
    eps_list: &[f64],
    opts: &SweepOptions,
) -> Result<(Vec<SweepRow>, Vec<PotentialPair>)> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("ε list must be positive and strictly decreasing".into()));
    }
    if !(opts.t_star > 0.0 && opts.t_star < 1.0) {
        return Err(Error::OutOfRange { t: opts.t_star, lo: 0.0, hi: 1.0 });
    }
    let map = omt::omt_map(tbl, rho0, rho1)?;
    let omt_particles = omt::displacement_interp(tbl, &map, rho0, opts.t_star, rho0.points())?;
    let lo = omt_particles.particles.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = omt_particles.particles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut rows = Vec::with_capacity(eps_list.len());
    let mut pairs = Vec::with_capacity(eps_list.len());
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &eps in eps_list {
        let kernel = build_kernel(tbl, eps, rho0.points(), rho1.points(), 0.0, 1.0)?;
        let warm_start = match (&prev, opts.warm_start) {
            (Some((e_prev, g)), true) => Some(g.iter().map(|v| v * e_prev / eps).collect()),
            _ => None,
        };
        let fopts = FortetOptions { tol: opts.tol, max_iter: opts.max_iter, warm_start };
        let pair = fortet_solve(&kernel, rho0, rho1, &fopts)?;
        let coupling = pair.coupling(&kernel);

        let (_, m_t0) = scalar_pair(tbl, opts.t_star, 0.0)?;
        let (phi_1t, m_1t) = scalar_pair(tbl, 1.0, opts.t_star)?;
        let margin = 4.0 * (eps * m_t0.max(m_1t / (phi_1t * phi_1t))).sqrt();
        let eval = cell_centers(lo - margin, hi + margin, opts.eval_points);
        let entropic = entropic_interpolation(tbl, &pair, rho0, rho1, opts.t_star, &eval)?;
        let displaced = omt::deposit(&omt_particles.particles, &omt_particles.masses, &eval)?;

        rows.push(SweepRow {
            epsilon: eps,
            coupling_distance: coupling_map_distance(&coupling, &map),
            flow_distance: omt::wasserstein1(&entropic, &displaced),
            iterations: pair.iterations,
            residual: pair.residual,
        });
        prev = Some((eps, pair.log_phi1.clone()));
        pairs.push(pair);
    }
    Ok((rows, pairs))
}

/// Maps the potentials to the Brownian problem in reduced coordinates,
/// φ̂₀ᴮ(x̂) = φ̂₀(x)/|Φ₁₀| and φ₁ᴮ(ŷ) = M₁₀^{1/2}φ₁(y), and returns the L¹
/// distance between their Brownian coupling and a direct Brownian solve
/// with the reduced marginals.
pub fn potential_transform_check(
    tbl: &TransitionTable,
    pair: &PotentialPair,
    rho0: &GridDensity,
    rho1: &GridDensity,
    opts: &FortetOptions,
) -> Result<f64> {
    let (phi, m) = scalar_pair(tbl, 1.0, 0.0)?;
    if phi <= 0.0 {
        return Err(Error::InvalidInput("reduced coordinates need Φ(1,0) > 0".into()));
    }
    let s = m.sqrt();
    let eps = pair.epsilon;
    let (hat0, hat1) = omt::reduce_marginals(tbl, rho0, rho1)?;
    let transformed = PotentialPair {
        source: hat0.points().to_vec(),
        target: hat1.points().to_vec(),
        source_widths: hat0.widths(),
        target_widths: hat1.widths(),
        log_phi_hat0: pair.log_phi_hat0.iter().map(|v| v - phi.ln()).collect(),
        log_phi1: pair.log_phi1.iter().map(|v| v + s.ln()).collect(),
        epsilon: eps,
        iterations: pair.iterations,
        residual: pair.residual,
        trace: Vec::new(),
    };
    let brownian = build_brownian_kernel(eps, hat0.points(), hat1.points())?;
    let via_transform = transformed.coupling(&brownian);
    let direct = fortet_solve(&brownian, &hat0, &hat1, opts)?.coupling(&brownian);
    Ok((&via_transform.plan - &direct.plan).abs().sum())
}
