//! Gaussian Schrödinger bridges for linear prior dynamics and their
//! zero-noise (optimal transport with prior) limit.
//!
//! The bridge between `N(m₀, Σ₀)` and `N(m₁, Σ₁)` under the reference
//! `dx = A x dt + √ε B dw` is the closed-loop diffusion
//!
//! ```text
//! dx = (A − BB'Π(t)) x dt + BB' m(t) dt + √ε B dw
//! ```
//!
//! where Π solves a Riccati equation from a closed-form initial value and
//! m(t) is an affine drift that steers the mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, inv_sqrt_pd, locate, rk4_step, sqrt_psd, symmetrize};
use crate::linsys::{LinearSystem, TransitionTable, CONTROLLABILITY_TOL};

/// Riccati solutions larger than this (max-norm) are reported as finite escape.
pub const BLOWUP_LIMIT: f64 = 1e12;

/// Largest condition number accepted for the bracket in the explicit Π₀(t).
pub const EXPLICIT_MAX_COND: f64 = 1e12;

/// A normal law N(mean, cov) with positive definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// JSON form: `{"mean": [..], "cov": [[..]]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {n} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !linalg::is_finite(&cov) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("Gaussian parameters must be finite".into()));
        }
        if linalg::asymmetry(&cov) > 1e-9 * (1.0 + cov.amax()) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let cov = symmetrize(&cov);
        if linalg::min_eigenvalue(&cov) <= 0.0 || cov.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("covariance is not positive definite".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_spec(spec: &GaussianSpec) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(&spec.mean),
            crate::linsys::matrix_from_rows(&spec.cov)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_marginals(tbl: &TransitionTable, s0: &GaussianState, s1: &GaussianState) -> Result<()> {
    let n = tbl.dim();
    if s0.dim() != n || s1.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "system has {n} states, marginals have {} and {}",
            s0.dim(),
            s1.dim()
        )));
    }
    Ok(())
}

/// Pieces shared by the boundary formula, the explicit Π₀(t) and the
/// explicit covariance flow.
struct BoundaryTerms {
    sqrt_s0: DMatrix<f64>,
    inv_sqrt_s0: DMatrix<f64>,
    /// Φ₁₀'M₁₀⁻¹Φ₁₀
    g10: DMatrix<f64>,
    /// Σ₀^{1/2}Φ₁₀'M₁₀⁻¹Σ₁M₁₀⁻¹Φ₁₀Σ₀^{1/2}
    k: DMatrix<f64>,
}

impl BoundaryTerms {
    fn new(tbl: &TransitionTable, s0: &GaussianState, s1: &GaussianState) -> Result<Self> {
        check_marginals(tbl, s0, s1)?;
        let sqrt_s0 = sqrt_psd(&s0.cov)?;
        let inv_sqrt_s0 = inv_sqrt_pd(&s0.cov)?;
        let phi = tbl.phi10();
        let minv = tbl.m10_inv();
        let g10 = symmetrize(&(phi.transpose() * minv * phi));
        let k = symmetrize(&(&sqrt_s0 * phi.transpose() * minv * &s1.cov * minv * phi * &sqrt_s0));
        Ok(Self { sqrt_s0, inv_sqrt_s0, g10, k })
    }
}

/// Π_ε(0) for the bridge between `s0` and `s1` (ε = 0 gives the transport limit).
pub fn initial_riccati(
    tbl: &TransitionTable,
    eps: f64,
    s0: &GaussianState,
    s1: &GaussianState,
) -> Result<DMatrix<f64>> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be finite and nonnegative, got {eps}")));
    }
    let bt = BoundaryTerms::new(tbl, s0, s1)?;
    let n = tbl.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let inner = &bt.sqrt_s0 * &bt.g10 * &bt.sqrt_s0;
    let root = sqrt_psd(&(&id * (eps * eps / 4.0) + &bt.k))?;
    let bracket = &id * (eps / 2.0) + inner - root;
    Ok(symmetrize(&(&bt.inv_sqrt_s0 * bracket * &bt.inv_sqrt_s0)))
}

/// Closed-form Π₀(t) of the zero-noise limit, t ∈ (0, 1].
pub fn pi_zero_explicit(
    tbl: &TransitionTable,
    s0: &GaussianState,
    s1: &GaussianState,
    t: f64,
) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t <= 1.0 + 1e-13) {
        return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let bt = BoundaryTerms::new(tbl, s0, s1)?;
    let (phi, m) = tbl.state_at(t)?;
    let m_inv = linalg::inverse_checked(&m, "M(t,0)", 1e14)?;
    let root_term = &bt.inv_sqrt_s0 * sqrt_psd(&bt.k)? * &bt.inv_sqrt_s0;
    let bracket = &bt.g10 - root_term - phi.transpose() * &m_inv * &phi;
    let bracket_inv = linalg::inverse_checked(&bracket, "explicit Π₀ bracket", EXPLICIT_MAX_COND)?;
    let pi = -&m_inv - &m_inv * &phi * bracket_inv * phi.transpose() * &m_inv;
    Ok(symmetrize(&pi))
}

/// Riccati flow, closed-loop transition and drift of a Gaussian bridge on
/// the grid of the transition table it was built from.
#[derive(Debug, Clone)]
pub struct BridgePolicy {
    epsilon: f64,
    sys: LinearSystem,
    grid: Vec<f64>,
    pi_flow: Vec<DMatrix<f64>>,
    phi_hat: Vec<DMatrix<f64>>,
    m_hat: Vec<DMatrix<f64>>,
    m_flow: Vec<DVector<f64>>,
    c_flow: Vec<f64>,
}

/// RK4 over the grid for the state `[Π, extra..]`. `extra_rhs` receives the
/// closed-loop matrix Â = A − BB'Π, BB', Π and the extra states.
fn integrate_closed_loop<F>(
    sys: &LinearSystem,
    grid: &[f64],
    pi0: &DMatrix<f64>,
    extra: Vec<DMatrix<f64>>,
    symmetric_extra: &[bool],
    extra_rhs: F,
) -> Result<Vec<Vec<DMatrix<f64>>>>
where
    F: Fn(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let rhs = |t: f64, y: &[DMatrix<f64>]| {
        let a = sys.a(t);
        let bbt = sys.bbt(t);
        let pi = &y[0];
        let pi_dot = -a.transpose() * pi - pi * &a + pi * &bbt * pi;
        let a_hat = &a - &bbt * pi;
        let mut out = vec![pi_dot];
        out.extend(extra_rhs(&a_hat, &bbt, pi, &y[1..]));
        out
    };
    let mut y = vec![symmetrize(pi0)];
    y.extend(extra);
    let mut out = Vec::with_capacity(grid.len());
    out.push(y.clone());
    for k in 0..grid.len() - 1 {
        y = rk4_step(grid[k], grid[k + 1] - grid[k], &y, &rhs);
        y[0] = symmetrize(&y[0]);
        for (i, sym) in symmetric_extra.iter().enumerate() {
            if *sym {
                y[i + 1] = symmetrize(&y[i + 1]);
            }
        }
        if !linalg::is_finite(&y[0]) || y[0].amax() > BLOWUP_LIMIT {
            return Err(Error::BlowUp { t: grid[k + 1], limit: BLOWUP_LIMIT });
        }
        if y.iter().any(|m| !linalg::is_finite(m)) {
            return Err(Error::NonFinite("closed-loop integration"));
        }
        out.push(y.clone());
    }
    Ok(out)
}


/// Integrates Π̇ = −A'Π − ΠA + ΠBB'Π forward from `pi0` on the table grid,
/// together with the closed-loop transition Φ̂(t,0) and Gramian M̂(t,0).
pub fn riccati_flow(tbl: &TransitionTable, eps: f64, pi0: &DMatrix<f64>) -> Result<BridgePolicy> {
    let n = tbl.dim();
    if pi0.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("Π(0) must be {n}x{n}")));
    }
    if linalg::asymmetry(pi0) > 1e-9 * (1.0 + pi0.amax()) {
        return Err(Error::InvalidInput("Π(0) must be symmetric".into()));
    }
    let sys = tbl.system();
    let states = integrate_closed_loop(
        sys,
        tbl.grid(),
        pi0,
        vec![DMatrix::identity(n, n), DMatrix::zeros(n, n)],
        &[false, true],
        |a_hat, bbt, _pi, y| vec![a_hat * &y[0], a_hat * &y[1] + &y[1] * a_hat.transpose() + bbt],
    )?;
    let mut pi_flow = Vec::with_capacity(states.len());
    let mut phi_hat = Vec::with_capacity(states.len());
    let mut m_hat = Vec::with_capacity(states.len());
    for mut s in states {
        m_hat.push(s.pop().unwrap());
        phi_hat.push(s.pop().unwrap());
        pi_flow.push(s.pop().unwrap());
    }
    Ok(BridgePolicy {
        epsilon: eps,
        sys: sys.clone(),
        grid: tbl.grid().to_vec(),
        pi_flow,
        phi_hat,
        m_hat,
        m_flow: Vec::new(),
        c_flow: Vec::new(),
    })
}

/// Fills the affine drift m(t) = Φ̂(1,t)'M̂(1,0)⁻¹(m₁ − Φ̂(1,0)m₀) and the
/// scalar c(t) = −½∫₀ᵗ m'BB'm of the transport potential.
pub fn affine_drift(policy: &mut BridgePolicy, m0: &DVector<f64>, m1: &DVector<f64>) -> Result<()> {
    let n = policy.dim();
    if m0.len() != n || m1.len() != n {
        return Err(Error::DimensionMismatch(format!("means must have length {n}")));
    }
    let last = policy.grid.len() - 1;
    let phi10 = &policy.phi_hat[last];
    let m_hat10 = &policy.m_hat[last];
    let lambda_min = linalg::min_eigenvalue(m_hat10);
    if !(lambda_min > CONTROLLABILITY_TOL) {
        return Err(Error::NonControllable { lambda_min, tol: CONTROLLABILITY_TOL });
    }
    let v = m_hat10
        .clone()
        .cholesky()
        .ok_or(Error::NonControllable { lambda_min, tol: CONTROLLABILITY_TOL })?
        .solve(&(m1 - phi10 * m0));
    let w = phi10.transpose() * v;
    let mut m_flow = Vec::with_capacity(last + 1);
    for phi_t in &policy.phi_hat {
        // Φ̂(1,t)' = Φ̂(t,0)^{-T} Φ̂(1,0)'
        let m_t = phi_t
            .transpose()
            .lu()
            .solve(&w)
            .ok_or(Error::Singular { what: "Φ̂(t,0)", cond: f64::INFINITY })?;
        m_flow.push(m_t);
    }
    // m satisfies ṁ = −Â'm; integrate it alongside c so that c is as accurate as Π.
    let states = integrate_closed_loop(
        &policy.sys,
        &policy.grid,
        &policy.pi_flow[0],
        vec![DMatrix::from_column_slice(n, 1, w.as_slice()), DMatrix::zeros(1, 1)],
        &[false, false],
        |a_hat, bbt, _pi, y| {
            let m = &y[0];
            let c_dot = -0.5 * (m.transpose() * bbt * m)[(0, 0)];
            vec![-a_hat.transpose() * m, DMatrix::from_element(1, 1, c_dot)]
        },
    )?;
    policy.c_flow = states.iter().map(|s| s[2][(0, 0)]).collect();
    policy.m_flow = m_flow;
    Ok(())
}

impl BridgePolicy {
    /// Full pipeline: boundary value, Riccati flow and affine drift.
    pub fn solve(tbl: &TransitionTable, eps: f64, s0: &GaussianState, s1: &GaussianState) -> Result<Self> {
        let pi0 = initial_riccati(tbl, eps, s0, s1)?;
        let mut policy = riccati_flow(tbl, eps, &pi0)?;
        affine_drift(&mut policy, &s0.mean, &s1.mean)?;
        Ok(policy)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn dim(&self) -> usize {
        self.sys.dim_state()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn pi_flow(&self) -> &[DMatrix<f64>] {
        &self.pi_flow
    }

    pub fn phi_hat(&self) -> &[DMatrix<f64>] {
        &self.phi_hat
    }

    pub fn m_hat(&self) -> &[DMatrix<f64>] {
        &self.m_hat
    }

    pub fn m_hat_10(&self) -> &DMatrix<f64> {
        &self.m_hat[self.m_hat.len() - 1]
    }

    /// Empty until [`affine_drift`] has run.
    pub fn m_flow(&self) -> &[DVector<f64>] {
        &self.m_flow
    }

    pub fn c_flow(&self) -> &[f64] {
        &self.c_flow
    }

    fn has_drift(&self) -> bool {
        !self.m_flow.is_empty()
    }

    fn interp_weights(&self, t: f64) -> Result<(usize, f64)> {
        if !(-1e-13..=1.0 + 1e-13).contains(&t) {
            return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        let t = t.clamp(0.0, 1.0);
        let k = locate(&self.grid, t);
        Ok((k, (t - self.grid[k]) / (self.grid[k + 1] - self.grid[k])))
    }

    /// Π(t), linearly interpolated between grid nodes.
    pub fn pi_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let (k, w) = self.interp_weights(t)?;
        Ok(&self.pi_flow[k] * (1.0 - w) + &self.pi_flow[k + 1] * w)
    }

    /// m(t), linearly interpolated; zero when no drift has been set.
    pub fn m_at(&self, t: f64) -> Result<DVector<f64>> {
        let (k, w) = self.interp_weights(t)?;
        if !self.has_drift() {
            return Ok(DVector::zeros(self.dim()));
        }
        Ok(&self.m_flow[k] * (1.0 - w) + &self.m_flow[k + 1] * w)
    }

    /// Copy with Π shifted by `delta` at every node (negative controls in tests).
    pub fn with_perturbed_pi(&self, delta: &DMatrix<f64>) -> Self {
        let mut p = self.clone();
        for pi in p.pi_flow.iter_mut() {
            *pi += delta;
        }
        p
    }
}

/// Feedback law u(t,x) = −B(t)'Π(t)x + B(t)'m(t).
pub fn feedback_control(policy: &BridgePolicy, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != policy.dim() {
        return Err(Error::DimensionMismatch(format!("state must have length {}", policy.dim())));
    }
    let pi = policy.pi_at(t)?;
    let m = policy.m_at(t)?;
    let bt = policy.sys.b(t).transpose();
    Ok(&bt * (m - pi * x))
}

/// Mean and covariance of the bridge at each grid node.
#[derive(Debug, Clone)]
pub struct MomentFlow {
    pub grid: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Covariance flow from the Lyapunov equation
/// Σ̇ = ÂΣ + ΣÂ' + εBB', Σ(0) = Σ₀, using the policy's ε.
pub fn lyapunov_covariance(policy: &BridgePolicy, s0: &GaussianState) -> Result<Vec<DMatrix<f64>>> {
    let eps = policy.epsilon;
    let states = integrate_closed_loop(
        &policy.sys,
        &policy.grid,
        &policy.pi_flow[0],
        vec![s0.cov.clone()],
        &[true],
        |a_hat, bbt, _pi, y| vec![a_hat * &y[0] + &y[0] * a_hat.transpose() + bbt * eps],
    )?;
    Ok(states.into_iter().map(|mut s| s.pop().unwrap()).collect())
}

/// Covariance of the zero-noise flow from its closed form, t ∈ (0, 1].
pub fn explicit_covariance(
    tbl: &TransitionTable,
    s0: &GaussianState,
    s1: &GaussianState,
    t: f64,
) -> Result<DMatrix<f64>> {
    if !(t > 0.0 && t <= 1.0 + 1e-13) {
        return Err(Error::OutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let bt = BoundaryTerms::new(tbl, s0, s1)?;
    let (phi, m) = tbl.state_at(t)?;
    let m_inv = linalg::inverse_checked(&m, "M(t,0)", 1e14)?;
    let phi_inv = phi.clone().try_inverse().ok_or(Error::Singular { what: "Φ(t,0)", cond: f64::INFINITY })?;
    let bracket = -(&bt.sqrt_s0 * &bt.g10 * &bt.sqrt_s0)
        + sqrt_psd(&bt.k)?
        + &bt.sqrt_s0 * phi.transpose() * &m_inv * &phi * &bt.sqrt_s0;
    let left = &m * phi_inv.transpose() * &bt.inv_sqrt_s0;
    Ok(symmetrize(&(&left * &bracket * &bracket * left.transpose())))
}

/// Mean n(t) = Φ̂(t,0)m₀ + M̂(t,0)m(t) and covariance Σ(t): closed form for
/// ε = 0, Lyapunov integration for ε > 0.
pub fn moment_flow(
    tbl: &TransitionTable,
    policy: &BridgePolicy,
    s0: &GaussianState,
    s1: &GaussianState,
) -> Result<MomentFlow> {
    check_marginals(tbl, s0, s1)?;
    if tbl.grid() != policy.grid() {
        return Err(Error::InvalidInput("policy and table grids differ".into()));
    }
    if !policy.has_drift() {
        return Err(Error::InvalidInput("policy has no affine drift; run affine_drift first".into()));
    }
    let means = policy
        .phi_hat
        .iter()
        .zip(&policy.m_hat)
        .zip(&policy.m_flow)
        .map(|((phi, mh), m)| phi * &s0.mean + mh * m)
        .collect();
    let covs = if policy.epsilon == 0.0 {
        let mut covs = vec![s0.cov.clone()];
        for &t in &policy.grid[1..] {
            covs.push(explicit_covariance(tbl, s0, s1, t)?);
        }
        covs
    } else {
        lyapunov_covariance(policy, s0)?
    };
    Ok(MomentFlow { grid: policy.grid.clone(), means, covs })
}

/// 5-point derivative of grid samples at node `k` (uniform spacing `h`).
fn five_point_derivative(f: &[f64], k: usize, h: f64) -> f64 {
    let n = f.len();
    let d = if k >= 2 && k + 2 < n {
        f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2]
    } else if k < 2 {
        let s = &f[0..5];
        let w: [f64; 5] = if k == 0 { [-25.0, 48.0, -36.0, 16.0, -3.0] } else { [-3.0, -10.0, 18.0, -6.0, 1.0] };
        s.iter().zip(w).map(|(a, b)| a * b).sum()
    } else {
        let s = &f[n - 5..n];
        let w: [f64; 5] = if k == n - 1 { [3.0, -16.0, 36.0, -48.0, 25.0] } else { [-1.0, 6.0, -18.0, 10.0, 3.0] };
        s.iter().zip(w).map(|(a, b)| a * b).sum()
    };
    d / (12.0 * h)
}

/// Max |∂ψ/∂t + x'A'∇ψ + ½∇ψ'BB'∇ψ| for ψ = −½x'Πx + m'x + c over the
/// probe points. The time derivative is a fourth-order finite difference on
/// the policy grid; probe times snap to the nearest node.
pub fn hj_residual_gaussian(policy: &BridgePolicy, probes: &[(f64, DVector<f64>)]) -> f64 {
    let kmax = policy.grid.len() - 1;
    let h = 1.0 / kmax as f64;
    let zero = DVector::zeros(policy.dim());
    let m_of = |k: usize| if policy.has_drift() { &policy.m_flow[k] } else { &zero };
    let c_of = |k: usize| if policy.has_drift() { policy.c_flow[k] } else { 0.0 };
    let mut worst: f64 = 0.0;
    for (t, x) in probes {
        let k = ((t.clamp(0.0, 1.0) * kmax as f64).round() as usize).min(kmax);
        let lo = k.saturating_sub(2).min(kmax.saturating_sub(4));
        let stencil: Vec<f64> = (lo..=(lo + 4).min(kmax))
            .map(|j| -0.5 * linalg::quad_form(&policy.pi_flow[j], x) + m_of(j).dot(x) + c_of(j))
            .collect();
        let psi_t = five_point_derivative(&stencil, k - lo, h);
        let tk = policy.grid[k];
        let grad = m_of(k) - &policy.pi_flow[k] * x;
        let a = policy.sys.a(tk);
        let drift = x.dot(&(a.transpose() * &grad));
        let quad = 0.5 * linalg::quad_form(&policy.sys.bbt(tk), &grad);
        worst = worst.max((psi_t + drift + quad).abs());
    }
    worst
}

/// Probe points: `n_t` times on [0, 1] and, at each, a tensor grid of `n_x`
/// points per coordinate spanning n(t) ± `width`·σᵢ(t).
pub fn tube_probes(flow: &MomentFlow, n_t: usize, n_x: usize, width: f64) -> Vec<(f64, DVector<f64>)> {
    let kmax = flow.grid.len() - 1;
    let dim = flow.means[0].len();
    let mut out = Vec::new();
    for i in 0..n_t {
        let t = if n_t == 1 { 0.0 } else { i as f64 / (n_t - 1) as f64 };
        let k = ((t * kmax as f64).round() as usize).min(kmax);
        let mean = &flow.means[k];
        let sd: Vec<f64> = (0..dim).map(|d| flow.covs[k][(d, d)].sqrt()).collect();
        let total = n_x.pow(dim as u32);
        for flat in 0..total {
            let mut rem = flat;
            let x = DVector::from_fn(dim, |d, _| {
                let j = rem % n_x;
                rem /= n_x;
                let u = if n_x == 1 { 0.0 } else { -1.0 + 2.0 * j as f64 / (n_x - 1) as f64 };
                mean[d] + width * sd[d] * u
            });
            out.push((flow.grid[k], x));
        }
    }
    out
}
