//! Sample paths for the Gaussian bridge and the pinned bridge, with seeded
//! per-path substreams.
//!
//! Each step advances the linear drift with the RK4 affine propagator of
//! the interval and adds an Euler–Maruyama noise increment √ε B(t_k)ΔW.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauss_bridge::{BridgePolicy, GaussianState};
use crate::linalg::{condition_number, rk4_step, unit_grid};
use crate::linsys::TransitionTable;

/// Largest condition number of M(1,t) tolerated before the terminal clamp.
pub const PINNED_MAX_COND: f64 = 1e14;

/// Paths on a shared time grid; `paths[p]` has one column per time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub paths: Vec<DMatrix<f64>>,
    pub seed: u64,
    pub epsilon: f64,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn dim(&self) -> usize {
        self.paths.first().map_or(0, |p| p.nrows())
    }
}

/// Generator for path `index` of an ensemble seeded with `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// RK4 step of ẋ = F(t)x + g(t) over [t, t+h], returned as the affine map
/// x ↦ Ψx + d.
fn affine_step(
    t: f64,
    h: f64,
    n: usize,
    field: impl Fn(f64) -> Result<(DMatrix<f64>, DVector<f64>)>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut stages = Vec::with_capacity(3);
    for tau in [t, t + 0.5 * h, t + h] {
        stages.push(field(tau)?);
    }
    let rhs = |tau: f64, y: &[DMatrix<f64>]| {
        let (f, g) = if tau == t {
            &stages[0]
        } else if tau == t + h {
            &stages[2]
        } else {
            &stages[1]
        };
        let mut dy = f * &y[0];
        let mut last = dy.column_mut(n);
        last += g;
        vec![dy]
    };
    let mut y0 = DMatrix::zeros(n, n + 1);
    y0.view_mut((0, 0), (n, n)).fill_with_identity();
    let y1 = rk4_step(t, h, &[y0], &rhs).pop().unwrap();
    Ok((y1.columns(0, n).into_owned(), y1.column(n).into_owned()))
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Samples of dx = (A − BB'Π_ε)x dt + BB'm dt + √ε B dw with x(0) ~ s0.
pub fn simulate_gauss_bridge(
    policy: &BridgePolicy,
    s0: &GaussianState,
    eps: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if (policy.epsilon() - eps).abs() > 1e-12 * eps.abs().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "policy was solved for ε={}, simulation requested ε={eps}",
            policy.epsilon()
        )));
    }
    if n_paths == 0 || steps == 0 {
        return Err(Error::InvalidInput("need at least one path and one step".into()));
    }
    if s0.dim() != policy.dim() {
        return Err(Error::DimensionMismatch("initial law and policy differ in dimension".into()));
    }
    let sys = policy.system();
    let times = unit_grid(steps);
    let dt = 1.0 / steps as f64;
    let n = s0.dim();
    let field = |t: f64| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let bbt = sys.bbt(t);
        Ok((sys.a(t) - &bbt * policy.pi_at(t)?, &bbt * policy.m_at(t)?))
    };
    let mut drift = Vec::with_capacity(steps);
    for &t in &times[..steps] {
        let (psi, d) = affine_step(t, dt, n, field)?;
        drift.push((psi, d, sys.b(t) * (eps * dt).sqrt()));
    }
    let chol = s0
        .cov
        .clone()
        .cholesky()
        .ok_or(Error::InvalidInput("initial covariance is not positive definite".into()))?
        .l();
    let m = sys.dim_input();
    let paths = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut out = DMatrix::zeros(n, steps + 1);
            let mut x = &s0.mean + &chol * normals(&mut rng, n);
            out.set_column(0, &x);
            for (k, (psi, d, noise)) in drift.iter().enumerate() {
                let dw = normals(&mut rng, m);
                x = psi * &x + d + noise * dw;
                out.set_column(k + 1, &x);
            }
            out
        })
        .collect();
    Ok(PathEnsemble { times, paths, seed, epsilon: eps })
}

/// Reference diffusion pinned at x(1)=y:
/// dx = (A − BB'Φ(1,t)'M(1,t)⁻¹Φ(1,t))x dt + BB'Φ(1,t)'M(1,t)⁻¹y dt + √ε B dw.
/// Step propagators are precomputed; the last two steps move linearly onto
/// y, so the drift is never evaluated past t = 1 − 2/steps.
#[derive(Debug, Clone)]
pub struct PinnedBridge {
    y: DVector<f64>,
    times: Vec<f64>,
    steps: Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)>,
}

impl PinnedBridge {
    pub fn new(tbl: &TransitionTable, y: &DVector<f64>, steps: usize) -> Result<Self> {
        if steps < 3 {
            return Err(Error::InvalidInput("pinned bridge needs at least three steps".into()));
        }
        let n = tbl.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch("endpoint does not match the state dimension".into()));
        }
        let sys = tbl.system();
        let times = unit_grid(steps);
        let dt = 1.0 / steps as f64;
        let field = |t: f64| -> Result<(DMatrix<f64>, DVector<f64>)> {
            let phi_1t = tbl.phi(1.0, t)?;
            let m_1t = tbl.gramian(1.0, t)?;
            let cond = condition_number(&m_1t);
            if !(cond <= PINNED_MAX_COND) {
                return Err(Error::SingularGuard { t, cond });
            }
            let m_inv = m_1t.try_inverse().ok_or(Error::SingularGuard { t, cond })?;
            let gain = sys.bbt(t) * phi_1t.transpose() * m_inv;
            Ok((sys.a(t) - &gain * &phi_1t, gain * y))
        };
        let mut props = Vec::with_capacity(steps - 2);
        for &t in &times[..steps - 2] {
            // the drift gain grows without bound as t → 1, so substep near the end
            let sub = ((16.0 * dt / (1.0 - t - dt)).ceil() as usize).clamp(1, 64);
            let h = dt / sub as f64;
            let mut psi = DMatrix::identity(n, n);
            let mut d = DVector::zeros(n);
            for j in 0..sub {
                let (p, e) = affine_step(t + j as f64 * h, h, n, field)?;
                d = &p * d + e;
                psi = p * psi;
            }
            props.push((psi, d, sys.b(t) * dt.sqrt()));
        }
        Ok(Self { y: y.clone(), times, steps: props })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// One path from `x` with noise drawn from `rng`.
    pub fn sample(&self, x: &DVector<f64>, eps: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        if !(eps >= 0.0) {
            return Err(Error::InvalidInput(format!("ε must be nonnegative, got {eps}")));
        }
        if x.len() != self.y.len() {
            return Err(Error::DimensionMismatch("endpoints do not match the state dimension".into()));
        }
        let steps = self.times.len() - 1;
        let mut out = DMatrix::zeros(x.len(), steps + 1);
        let mut state = x.clone();
        out.set_column(0, &state);
        for (k, (psi, d, noise)) in self.steps.iter().enumerate() {
            state = psi * &state + d;
            if eps > 0.0 {
                state += noise * normals(rng, noise.ncols()) * eps.sqrt();
            }
            out.set_column(k + 1, &state);
        }
        out.set_column(steps - 1, &(0.5 * (&state + &self.y)));
        out.set_column(steps, &self.y);
        Ok(out)
    }
}

/// One pinned-bridge path from x(0)=x to x(1)=y.
pub fn simulate_pinned_bridge(
    tbl: &TransitionTable,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps: f64,
    steps: usize,
    seed: u64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let bridge = PinnedBridge::new(tbl, y, steps)?;
    let path = bridge.sample(x, eps, &mut path_rng(seed, 0))?;
    Ok((bridge.times, path))
}

/// `n_paths` pinned-bridge paths with per-path substreams of `seed`.
pub fn simulate_pinned_ensemble(
    tbl: &TransitionTable,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let bridge = PinnedBridge::new(tbl, y, steps)?;
    let paths = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| bridge.sample(x, eps, &mut path_rng(seed, p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { times: bridge.times, paths, seed, epsilon: eps })
}

/// Per-time sample means and unbiased covariances.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

pub fn ensemble_stats(ens: &PathEnsemble) -> Result<EnsembleStats> {
    let np = ens.n_paths();
    if np < 2 {
        return Err(Error::InvalidInput("ensemble statistics need at least two paths".into()));
    }
    let n = ens.dim();
    let mut means = Vec::with_capacity(ens.times.len());
    let mut covs = Vec::with_capacity(ens.times.len());
    for k in 0..ens.times.len() {
        let mut mean = DVector::zeros(n);
        for p in &ens.paths {
            mean += p.column(k);
        }
        mean /= np as f64;
        let mut cov = DMatrix::zeros(n, n);
        for p in &ens.paths {
            let d = p.column(k) - &mean;
            cov += &d * d.transpose();
        }
        cov /= (np - 1) as f64;
        means.push(mean);
        covs.push(cov);
    }
    Ok(EnsembleStats { times: ens.times.clone(), means, covs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::LinearSystem;

    fn unit_state(n: usize, mean: f64) -> GaussianState {
        GaussianState::new(DVector::from_element(n, mean), DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn rejects_mismatched_epsilon() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 50).unwrap();
        let s = unit_state(1, 0.0);
        let policy = BridgePolicy::solve(&tbl, 1.0, &s, &s).unwrap();
        assert!(simulate_gauss_bridge(&policy, &s, 0.5, 10, 50, 1).is_err());
        assert!(simulate_gauss_bridge(&policy, &s, 1.0, 0, 50, 1).is_err());
    }

    #[test]
    fn seeded_runs_are_identical() {
        let tbl = TransitionTable::build(&LinearSystem::double_integrator(), 100).unwrap();
        let s = unit_state(2, 0.0);
        let policy = BridgePolicy::solve(&tbl, 2.0, &s, &s).unwrap();
        let a = simulate_gauss_bridge(&policy, &s, 2.0, 64, 100, 9).unwrap();
        let b = simulate_gauss_bridge(&policy, &s, 2.0, 64, 100, 9).unwrap();
        let c = simulate_gauss_bridge(&policy, &s, 2.0, 64, 100, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.paths, c.paths);
    }

    #[test]
    fn duplicated_path_has_zero_covariance() {
        let path = DMatrix::from_fn(2, 5, |i, j| (i + j) as f64);
        let ens = PathEnsemble { times: unit_grid(4), paths: vec![path.clone(), path], seed: 0, epsilon: 0.0 };
        let st = ensemble_stats(&ens).unwrap();
        assert!(st.covs.iter().all(|c| c.amax() == 0.0));
        let single = PathEnsemble { paths: vec![DMatrix::zeros(2, 5)], ..ens };
        assert!(ensemble_stats(&single).is_err());
    }

    #[test]
    fn pinned_free_particle_is_a_straight_line() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 100).unwrap();
        let x = DVector::from_element(1, -1.0);
        let y = DVector::from_element(1, 3.0);
        let (times, path) = simulate_pinned_bridge(&tbl, &x, &y, 0.0, 200, 0).unwrap();
        for (k, t) in times.iter().enumerate() {
            assert!((path[(0, k)] - (-1.0 + 4.0 * t)).abs() < 1e-12);
        }
        let zero = DVector::zeros(1);
        let (_, loop_path) = simulate_pinned_bridge(&tbl, &zero, &zero, 0.0, 50, 0).unwrap();
        assert!(loop_path.amax() == 0.0);
    }

    #[test]
    fn pinned_brownian_bridge_variance() {
        let tbl = TransitionTable::build(&LinearSystem::trivial(1), 100).unwrap();
        let zero = DVector::zeros(1);
        let n = 10_000;
        let ens = simulate_pinned_ensemble(&tbl, &zero, &zero, 1.0, n, 100, 5).unwrap();
        let mid: Vec<f64> = ens.paths.iter().map(|p| p[(0, 50)]).collect();
        let mean = mid.iter().sum::<f64>() / n as f64;
        let var = mid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.25).abs() < 0.02, "{var}");
    }
}
