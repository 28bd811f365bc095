mod common;

use prior_transport::gauss_bridge::{moment_flow, BridgePolicy};
use prior_transport::linsys::{LinearSystem, TransitionTable};
use prior_transport::sampler::*;

fn steering(eps: f64) -> (TransitionTable, BridgePolicy) {
    let (s0, s1) = common::steering_marginals();
    let tbl = TransitionTable::build(&LinearSystem::double_integrator(), 200).unwrap();
    let policy = BridgePolicy::solve(&tbl, eps, &s0, &s1).unwrap();
    (tbl, policy)
}

#[test]
fn noisy_bridge_reaches_terminal_law() {
    let (s0, s1) = common::steering_marginals();
    let (_, policy) = steering(9.0);
    let n = 10_000;
    let ens = simulate_gauss_bridge(&policy, &s0, 9.0, n, 200, 42).unwrap();
    let stats = ensemble_stats(&ens).unwrap();
    let cov = stats.covs.last().unwrap();
    let rel = (cov - &s1.cov).norm() / s1.cov.norm();
    assert!(rel < 0.05, "{rel}");
    let mean = stats.means.last().unwrap();
    for i in 0..2 {
        assert!((mean[i] - s1.mean[i]).abs() < 5.0 / (n as f64).sqrt() * s1.cov[(i, i)].sqrt());
    }
}

#[test]
fn ensemble_covariance_tracks_moment_flow() {
    let (s0, s1) = common::steering_marginals();
    let (tbl, policy) = steering(4.0);
    let flow = moment_flow(&tbl, &policy, &s0, &s1).unwrap();
    let n = 10_000;
    let stats = ensemble_stats(&simulate_gauss_bridge(&policy, &s0, 4.0, n, 200, 42).unwrap()).unwrap();
    let worst = stats.covs.iter().zip(&flow.covs).map(|(a, b)| (a - b).norm() / b.norm()).fold(0.0, f64::max);
    assert!(worst < 10.0 / (n as f64).sqrt(), "{worst}");
}

#[test]
fn zero_noise_paths_follow_the_mean_flow() {
    let (s0, s1) = common::steering_marginals();
    let (tbl, policy) = steering(0.0);
    let flow = moment_flow(&tbl, &policy, &s0, &s1).unwrap();
    let ens = simulate_gauss_bridge(&policy, &s0, 0.0, 16, 200, 1).unwrap();
    let phi_hat = policy.phi_hat().last().unwrap();
    for p in &ens.paths {
        let x0 = p.column(0).into_owned();
        let expected = phi_hat * (x0 - &s0.mean) + flow.means.last().unwrap();
        assert!((p.column(200) - expected).amax() < 1e-4);
    }
    let stats = ensemble_stats(&simulate_gauss_bridge(&policy, &s0, 0.0, 4000, 200, 1).unwrap()).unwrap();
    let cov_end = stats.covs.last().unwrap();
    assert!((cov_end - &s1.cov).norm() < 0.1);
}

#[test]
fn refinement_changes_shrink() {
    let (s0, _) = common::steering_marginals();
    let (_, policy) = steering(0.0);
    let ends: Vec<_> = [50, 100, 200, 400]
        .iter()
        .map(|&steps| {
            let ens = simulate_gauss_bridge(&policy, &s0, 0.0, 8, steps, 3).unwrap();
            ensemble_stats(&ens).unwrap().means.last().unwrap().clone()
        })
        .collect();
    let diffs: Vec<f64> = ends.windows(2).map(|w| (&w[1] - &w[0]).amax()).collect();
    for (k, d) in diffs.iter().enumerate() {
        let dt = 1.0 / (50 << k) as f64;
        assert!(*d < dt, "refinement {k}: {d}");
    }
    assert!(diffs[2] <= diffs[0]);
}

#[test]
fn pinned_bridge_follows_min_energy_path() {
    let tbl = TransitionTable::build(&LinearSystem::double_integrator(), 200).unwrap();
    let x = common::vec2(-5.0, -5.0);
    let y = common::vec2(5.0, 5.0);
    let (times, path) = simulate_pinned_bridge(&tbl, &x, &y, 0.0, 2000, 0).unwrap();
    let worst = times
        .iter()
        .enumerate()
        .map(|(k, t)| (path.column(k) - tbl.min_energy_path(&x, &y, *t).unwrap()).amax())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
    assert_eq!(path.column(2000), y.column(0));
}

#[test]
fn noisy_pinned_bridge_lands_on_target() {
    let tbl = TransitionTable::build(&LinearSystem::double_integrator(), 200).unwrap();
    let x = common::vec2(-5.0, -5.0);
    let y = common::vec2(5.0, 5.0);
    let ens = simulate_pinned_ensemble(&tbl, &x, &y, 1.0, 200, 500, 8).unwrap();
    let dt: f64 = 1.0 / 500.0;
    for p in &ens.paths {
        assert!((p.column(498) - &y).amax() < 50.0 * dt.sqrt());
        assert_eq!(p.column(500), y.column(0));
    }
}

#[test]
fn seeded_ensembles_are_bitwise_identical() {
    let (s0, _) = common::steering_marginals();
    let (_, policy) = steering(4.0);
    let a = simulate_gauss_bridge(&policy, &s0, 4.0, 500, 200, 42).unwrap();
    let b = simulate_gauss_bridge(&policy, &s0, 4.0, 500, 200, 42).unwrap();
    let bits = |e: &PathEnsemble| e.paths.iter().flat_map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let tbl = TransitionTable::build(&LinearSystem::double_integrator(), 200).unwrap();
    let x = common::vec2(0.0, 0.0);
    let c = simulate_pinned_ensemble(&tbl, &x, &x, 1.0, 20, 100, 4).unwrap();
    let d = simulate_pinned_ensemble(&tbl, &x, &x, 1.0, 20, 100, 4).unwrap();
    assert_eq!(bits(&c), bits(&d));
}
