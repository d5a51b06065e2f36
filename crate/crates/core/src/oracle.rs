//! The multi-agent performative stable point `theta_PS`, the fixed point of
//!
//! ```text
//! M(theta) = argmin_{theta'} (1/n) Σ_i f_i(theta'; theta)
//! ```
//!
//! where every population is frozen at the deployed `theta`. Gaussian
//! environments have `M(theta) = eps_avg * theta + mean(zbar)` and hence a
//! closed-form fixed point; logistic environments solve the inner problem
//! with full-batch gradient descent over the shifted datasets, so `M` stays
//! deterministic.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::DEFAULT_DIVERGENCE_THRESHOLD;
use crate::environment::Environment;
use crate::{Error, Result};

/// Budgets and tolerances for [`apply_m`] and [`repeated_gd_fixed_point`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Inner gradient-descent iterations per application of `M`.
    pub inner_iterations: usize,
    /// Stop the inner solve once `‖∇‖ <= inner_tol`.
    pub inner_tol: f64,
    /// Maximum outer deployments.
    pub outer_deployments: usize,
    /// Outer stop: `‖theta^{k+1} - theta^k‖ <= tol`.
    pub tol: f64,
    pub divergence_threshold: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            inner_iterations: 1000,
            inner_tol: 1e-10,
            outer_deployments: 10_000,
            tol: 1e-8,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }
}

/// One application of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapValue {
    pub theta: DVector<f64>,
    /// `‖(1/n) Σ ∇f_i(M(theta); theta)‖` at the returned point.
    pub grad_norm: f64,
    /// False when the inner budget ran out above `inner_tol`.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub theta_ps: Vec<f64>,
    /// `‖theta_hat - M(theta_hat)‖`.
    pub residual: f64,
    /// Outer steps taken before the stopping test passed.
    pub deployments: usize,
    pub converged: bool,
    /// Outer step at which the iterate left the divergence threshold.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// Largest `‖M(a) - M(b)‖ / ‖a - b‖` over the probe pairs.
    pub empirical: f64,
    /// `eps_avg * L / mu`.
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExistenceVariant {
    /// Agent `i`'s population reacts to agent `i`'s decision only.
    Local,
    /// Every population reacts to all agents' decisions.
    GlobalInfluence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Existence {
    pub exists: bool,
    /// Bound on `eps_avg` under the chosen variant.
    pub threshold: f64,
}

/// `theta_PS = Σ zbar_i / (n (1 - eps_avg))`.
pub fn closed_form_multi_ps(env: &Environment) -> Result<DVector<f64>> {
    let mean = env.mean_zbar()?;
    let eps = env.eps_avg();
    if eps >= 1.0 {
        return Err(Error::NoFixedPoint {
            eps_avg: eps,
            threshold: 1.0,
        });
    }
    Ok(mean / (1.0 - eps))
}

/// `M(theta)`. Exact for Gaussian environments; for logistic ones, gradient
/// descent with step `1/L` warm-started at `theta`.
pub fn apply_m(env: &Environment, theta: &DVector<f64>, config: &OracleConfig) -> Result<MapValue> {
    if theta.len() != env.dim() {
        return Err(Error::Shape {
            expected: env.dim(),
            got: theta.len(),
        });
    }
    if env.is_gaussian() {
        let n = env.n() as f64;
        let mut m = env.mean_zbar()?;
        let eps_mean: f64 = env.populations().iter().map(|p| p.eps()).sum::<f64>() / n;
        m += theta * eps_mean;
        return Ok(MapValue {
            theta: m,
            grad_norm: 0.0,
            converged: true,
        });
    }
    let step = 1.0 / env.smoothness();
    let mut x = theta.clone();
    let mut g = env.frozen_mean_gradient(&x, theta)?;
    let mut norm = g.norm();
    let mut iters = 0;
    while norm > config.inner_tol && iters < config.inner_iterations {
        x.axpy(-step, &g, 1.0);
        g = env.frozen_mean_gradient(&x, theta)?;
        norm = g.norm();
        iters += 1;
    }
    Ok(MapValue {
        theta: x,
        grad_norm: norm,
        converged: norm <= config.inner_tol,
    })
}

/// Repeated deployment `theta^{k+1} = M(theta^k)` from `theta0`.
pub fn repeated_gd_fixed_point(
    env: &Environment,
    theta0: &DVector<f64>,
    config: &OracleConfig,
) -> Result<FixedPointResult> {
    let mut theta = theta0.clone();
    for k in 0..config.outer_deployments {
        let next = apply_m(env, &theta, config)?.theta;
        let blown = next.iter().any(|v| !v.is_finite() || v.abs() > config.divergence_threshold);
        if blown {
            log::debug!("repeated deployment diverged at step {}", k + 1);
            return Ok(FixedPointResult {
                theta_ps: next.iter().copied().collect(),
                residual: f64::INFINITY,
                deployments: k + 1,
                converged: false,
                diverged_at: Some(k + 1),
            });
        }
        let step = (&next - &theta).norm();
        theta = next;
        if step <= config.tol {
            let residual = (apply_m(env, &theta, config)?.theta - &theta).norm();
            return Ok(FixedPointResult {
                theta_ps: theta.iter().copied().collect(),
                residual,
                deployments: k,
                converged: true,
                diverged_at: None,
            });
        }
    }
    let residual = (apply_m(env, &theta, config)?.theta - &theta).norm();
    Ok(FixedPointResult {
        theta_ps: theta.iter().copied().collect(),
        residual,
        deployments: config.outer_deployments,
        converged: false,
        diverged_at: None,
    })
}

/// The orbit `theta0, M(theta0), ..., M^steps(theta0)`.
pub fn map_orbit(
    env: &Environment,
    theta0: &DVector<f64>,
    steps: usize,
    config: &OracleConfig,
) -> Result<Vec<DVector<f64>>> {
    let mut orbit = Vec::with_capacity(steps + 1);
    orbit.push(theta0.clone());
    for _ in 0..steps {
        let next = apply_m(env, orbit.last().unwrap(), config)?.theta;
        orbit.push(next);
    }
    Ok(orbit)
}

/// Largest Lipschitz ratio of `M` over `pairs` random pairs drawn uniformly
/// from the ball of `radius` around `center`.
pub fn contraction_probe<R: Rng + ?Sized>(
    env: &Environment,
    center: &DVector<f64>,
    pairs: usize,
    radius: f64,
    config: &OracleConfig,
    rng: &mut R,
) -> Result<ContractionReport> {
    let d = env.dim();
    let ball = |rng: &mut R| {
        let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u: f64 = rng.random();
        center + dir.normalize() * (radius * u.powf(1.0 / d as f64))
    };
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        let a = ball(rng);
        let b = ball(rng);
        let gap = (&a - &b).norm();
        if gap == 0.0 {
            continue;
        }
        let ma = apply_m(env, &a, config)?.theta;
        let mb = apply_m(env, &b, config)?.theta;
        worst = worst.max((ma - mb).norm() / gap);
    }
    Ok(ContractionReport {
        empirical: worst,
        bound: env.eps_avg() * env.smoothness() / env.mu(),
    })
}

/// Whether a stable point is guaranteed: `eps_avg < mu/L` when populations
/// react locally, `sqrt(n) eps_avg < mu/L` when they react to every agent.
pub fn existence_check(eps_avg: f64, mu: f64, l: f64, variant: ExistenceVariant, n: usize) -> Result<Existence> {
    if !(mu > 0.0 && l > 0.0) || n == 0 {
        return Err(Error::Config(format!("existence check needs mu, L > 0 and n >= 1 (mu={mu}, L={l}, n={n})")));
    }
    let threshold = match variant {
        ExistenceVariant::Local => mu / l,
        ExistenceVariant::GlobalInfluence => mu / ((n as f64).sqrt() * l),
    };
    Ok(Existence {
        exists: eps_avg < threshold,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{LabeledData, LossSpec, Population};
    use crate::rng::{Domain, SeedTree};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn gaussian(eps: &[f64], zbar: f64) -> Environment {
        let pops = eps
            .iter()
            .map(|&e| Population::gaussian(e, DVector::from_element(1, zbar), 50.0).unwrap())
            .collect();
        Environment::new(pops, LossSpec::quadratic(1)).unwrap()
    }

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn closed_form_examples() {
        assert_abs_diff_eq!(closed_form_multi_ps(&gaussian(&[0.9; 25], 10.0)).unwrap()[0], 100.0, epsilon = 1e-12);
        assert_eq!(closed_form_multi_ps(&gaussian(&[0.0; 4], 10.0)).unwrap()[0], 10.0);
        assert!(matches!(
            closed_form_multi_ps(&gaussian(&[1.01; 3], 10.0)),
            Err(Error::NoFixedPoint { .. })
        ));
    }

    #[test]
    fn map_examples() {
        let cfg = OracleConfig::default();
        let env = gaussian(&[0.8, 1.0], 10.0);
        assert_abs_diff_eq!(apply_m(&env, &v(3.0), &cfg).unwrap().theta[0], 0.9 * 3.0 + 10.0, epsilon = 1e-12);
        let env = gaussian(&[0.9; 5], 10.0);
        assert_abs_diff_eq!(apply_m(&env, &v(100.0), &cfg).unwrap().theta[0], 100.0, epsilon = 1e-12);
        let flat = gaussian(&[0.0; 3], 10.0);
        assert_eq!(apply_m(&flat, &v(-7.0), &cfg).unwrap().theta, apply_m(&flat, &v(55.0), &cfg).unwrap().theta);
    }

    #[test]
    fn repeated_deployment_examples() {
        let cfg = OracleConfig::default();
        let r = repeated_gd_fixed_point(&gaussian(&[0.9; 25], 10.0), &v(0.0), &cfg).unwrap();
        assert!(r.converged);
        assert!(r.deployments <= 200, "{}", r.deployments);
        assert!((r.theta_ps[0] - 100.0).abs() <= 1e-6);
        assert!(r.residual <= 10.0 * cfg.tol);

        let r = repeated_gd_fixed_point(&gaussian(&[1.01; 25], 10.0), &v(0.0), &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.diverged_at.is_some());

        let r = repeated_gd_fixed_point(&gaussian(&[0.0; 25], 10.0), &v(0.0), &cfg).unwrap();
        assert!(r.converged);
        assert_eq!(r.deployments, 1);
        assert_eq!(r.theta_ps[0], 10.0);
    }

    #[test]
    fn closed_form_and_iteration_agree() {
        let cfg = OracleConfig::default();
        for eps in [0.0, 0.3, 0.9, 0.99] {
            let env = gaussian(&[eps; 7], 10.0);
            let exact = closed_form_multi_ps(&env).unwrap()[0];
            let iter = repeated_gd_fixed_point(&env, &v(0.0), &cfg).unwrap();
            assert!(iter.converged);
            // the stopping rule bounds the distance by tol * eps / (1 - eps)
            assert!((iter.theta_ps[0] - exact).abs() <= cfg.tol * eps.max(1e-300) / (1.0 - eps) + 1e-12);
        }
    }

    #[test]
    fn contraction_chain() {
        let cfg = OracleConfig::default();
        for eps in [0.1, 0.5, 0.9, 0.99] {
            let env = gaussian(&[eps; 4], 10.0);
            let ps = closed_form_multi_ps(&env).unwrap();
            let orbit = map_orbit(&env, &v(-40.0), 50, &cfg).unwrap();
            let e0 = (&orbit[0] - &ps).norm();
            for (k, th) in orbit.iter().enumerate() {
                assert!((th - &ps).norm() <= eps.powi(k as i32) * e0 + 1e-8);
            }
        }
    }

    #[test]
    fn contraction_probe_examples() {
        let cfg = OracleConfig::default();
        let mut rng = SeedTree::new(1).stream(Domain::Probe, 0, 0);
        for eps in [0.3, 0.5, 0.9] {
            let env = gaussian(&[eps * 0.5, eps * 1.5], 10.0);
            let r = contraction_probe(&env, &v(0.0), 50, 10.0, &cfg, &mut rng).unwrap();
            assert_abs_diff_eq!(r.empirical, eps, epsilon = 1e-8);
            assert_abs_diff_eq!(r.bound, eps, epsilon = 1e-12);
        }
        let r = contraction_probe(&gaussian(&[0.0; 2], 1.0), &v(0.0), 10, 10.0, &cfg, &mut rng).unwrap();
        assert_eq!(r.empirical, 0.0);
    }

    fn toy_logistic(eps: f64) -> Environment {
        let mut rng = SeedTree::new(5).stream(Domain::Generator, 0, 0);
        let (m, d) = (60, 3);
        let mut shards = Vec::new();
        for _ in 0..3 {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for _ in 0..m {
                let row: Vec<f64> = (0..d).map(|_| rand::Rng::sample::<f64, _>(&mut rng, StandardNormal) * 0.5).collect();
                y.push(if row[0] + 0.3 * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal) > 0.0 { 1.0 } else { 0.0 });
                x.extend(row);
            }
            shards.push(Arc::new(LabeledData::new(d, x, y).unwrap()));
        }
        let pops = shards.into_iter().map(|s| Population::strategic(eps, s).unwrap()).collect();
        Environment::new(pops, LossSpec::logistic(3, 0.5).unwrap()).unwrap()
    }

    #[test]
    fn logistic_map_is_a_frozen_minimizer() {
        let env = toy_logistic(0.05);
        let cfg = OracleConfig::default();
        let theta = DVector::from_vec(vec![0.4, -0.2, 1.0]);
        let m = apply_m(&env, &theta, &cfg).unwrap();
        assert!(m.converged);
        assert!(env.frozen_mean_gradient(&m.theta, &theta).unwrap().norm() <= cfg.inner_tol);
    }

    #[test]
    fn logistic_contraction_within_bound() {
        let env = toy_logistic(0.05);
        let cfg = OracleConfig::default();
        let mut rng = SeedTree::new(2).stream(Domain::Probe, 0, 0);
        let r = contraction_probe(&env, &DVector::zeros(3), 20, 10.0, &cfg, &mut rng).unwrap();
        assert!(r.empirical <= r.bound + 1e-6, "{r:?}");
        let fp = repeated_gd_fixed_point(&env, &DVector::zeros(3), &cfg).unwrap();
        assert!(fp.converged);
        assert!(fp.residual <= 10.0 * cfg.tol);
    }

    #[test]
    fn existence_examples() {
        let e = existence_check(0.9, 1.0, 1.0, ExistenceVariant::Local, 25).unwrap();
        assert!(e.exists);
        assert_eq!(e.threshold, 1.0);
        assert!(!existence_check(0.9, 1.0, 1.0, ExistenceVariant::GlobalInfluence, 25).unwrap().exists);
        for variant in [ExistenceVariant::Local, ExistenceVariant::GlobalInfluence] {
            assert!(existence_check(0.0, 1.0, 1.0, variant, 25).unwrap().exists);
        }
        assert!(!existence_check(1.0, 1.0, 1.0, ExistenceVariant::Local, 1).unwrap().exists);
    }

    proptest! {
        #[test]
        fn local_threshold_dominates_game_threshold(n in 1usize..10_000, mu in 0.01f64..10.0, l in 0.01f64..10.0) {
            let local = existence_check(0.0, mu, l, ExistenceVariant::Local, n).unwrap().threshold;
            let game = existence_check(0.0, mu, l, ExistenceVariant::GlobalInfluence, n).unwrap().threshold;
            prop_assert!(local >= game);
        }
    }
}
