//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use prior_transport::gauss_bridge::GaussianState;
use prior_transport::linsys::{LinearSystem, MatrixFn, TransitionTable};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn vec2(a: f64, b: f64) -> DVector<f64> {
    DVector::from_column_slice(&[a, b])
}

/// Double-integrator marginals N((−5,−5), I) and N((5,5), I).
pub fn steering_marginals() -> (GaussianState, GaussianState) {
    (
        GaussianState::new(vec2(-5.0, -5.0), DMatrix::identity(2, 2)).unwrap(),
        GaussianState::new(vec2(5.0, 5.0), DMatrix::identity(2, 2)).unwrap(),
    )
}

/// Antiderivative of the unnormalized piecewise-cosine density, written out
/// by hand (total mass 2).
fn raw_cdf0(x: f64) -> f64 {
    let left = |x: f64| 0.4 * x - 0.2 * (3.0 * PI * x).sin() / (3.0 * PI);
    if x <= 0.0 {
        0.0
    } else if x < 2.0 / 3.0 {
        left(x)
    } else if x <= 1.0 {
        let x0 = 2.0 / 3.0;
        left(x0) + 5.2 * (x - x0) - 5.0 * ((6.0 * PI * x - 4.0 * PI).sin() - (6.0 * PI * x0 - 4.0 * PI).sin()) / (6.0 * PI)
    } else {
        2.0
    }
}

pub fn cdf0(x: f64) -> f64 {
    raw_cdf0(x) / 2.0
}

/// ρ₁(x) = ρ₀(1 − x) gives F₁(y) = 1 − F₀(1 − y).
pub fn cdf1(y: f64) -> f64 {
    1.0 - cdf0(1.0 - y)
}

/// Generalized inverse by bisection on [lo, hi].
pub fn bisect_quantile(cdf: impl Fn(f64) -> f64, p: f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if cdf(m) < p {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, 1.0);
    &g * g.transpose() + DMatrix::identity(n, n) * 0.2
}

/// A random controllable system: constant for even `k`, tabulated
/// time-varying for odd `k`.
pub fn random_system(rng: &mut ChaCha8Rng, k: usize) -> (LinearSystem, TransitionTable) {
    loop {
        let n = rng.random_range(1..=3usize);
        let m = rng.random_range(1..=n);
        let sys = if k % 2 == 0 {
            LinearSystem::constant(random_matrix(rng, n, n, 1.0), random_matrix(rng, n, m, 1.0)).unwrap()
        } else {
            let grid = vec![0.0, 0.5, 1.0];
            let a: Vec<DMatrix<f64>> = (0..3).map(|_| random_matrix(rng, n, n, 1.0)).collect();
            let b: Vec<DMatrix<f64>> = (0..3).map(|_| random_matrix(rng, n, m, 1.0)).collect();
            LinearSystem::new(
                MatrixFn::Tabulated { grid: grid.clone(), values: a },
                MatrixFn::Tabulated { grid, values: b },
            )
            .unwrap()
        };
        if let Ok(tbl) = TransitionTable::build(&sys, 200) {
            if tbl.lambda_min_m10() > 1e-3 {
                return (sys, tbl);
            }
        }
    }
}

/// Integrates ẋ = A x + B u(t) under the minimum-energy control with RK4 and
/// accumulates ∫½‖u‖² by Simpson's rule. Returns (x(1), cost).
pub fn rollout_min_energy(
    sys: &LinearSystem,
    tbl: &TransitionTable,
    x: &DVector<f64>,
    y: &DVector<f64>,
    steps: usize,
) -> (DVector<f64>, f64) {
    let h = 1.0 / steps as f64;
    let u = |t: f64| tbl.min_energy_control(x, y, t).unwrap();
    let f = |t: f64, s: &DVector<f64>| sys.a(t) * s + sys.b(t) * u(t);
    let mut s = x.clone();
    let mut cost = 0.0;
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = f(t, &s);
        let k2 = f(t + h / 2.0, &(&s + &k1 * (h / 2.0)));
        let k3 = f(t + h / 2.0, &(&s + &k2 * (h / 2.0)));
        let k4 = f(t + h, &(&s + &k3 * h));
        s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let e = |t: f64| 0.5 * u(t).norm_squared();
        cost += h / 6.0 * (e(t) + 4.0 * e(t + h / 2.0) + e(t + h));
    }
    (s, cost)
}
