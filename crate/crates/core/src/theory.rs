//! Constants, step-size conditions and bound curves of the DSGD-GD
//! convergence theorem.
//!
//! With `delta > 0` free,
//!
//! ```text
//! mu~  = mu - (1 + delta) eps_avg L
//! c1   = L (1 + eps_max)^2 / (2 n delta eps_avg)
//! c2   = 4 (sigma^2 / n + L^2 (1 + eps_max)^2)
//! c3   = 12 sigma^2 + 18 L^2 (1 + eps_max)^2
//! D    = ‖avg(theta^0) - theta_PS‖^2 + gamma_1 8 c1 / (n rho) ‖Q^0‖_F^2
//! Dbar = D + 3/2 + 8 sigma^2 / (c2 n)
//! ```
//!
//! and, when the step sizes obey [`step_size_cap`] and
//! [`ratio_condition_check`],
//!
//! ```text
//! E‖avg(theta^t) - theta_PS‖^2 <= prod_{i<=t}(1 - mu~ gamma_i / 2) D
//!                                + 288 c1 (sigma^2 + varsigma^2) / (rho^2 mu~) gamma_t^2
//!                                + 8 sigma^2 / (mu~ n) gamma_t
//! E (1/n)‖Q^t‖_F^2               <= (1 - rho/2)^t (1/n)‖Q^0‖_F^2
//!                                + 2 (9 + 12 Dbar)(sigma^2 + varsigma^2) / rho^2 gamma_t^2
//! ```
//!
//! Here `sigma^2` bounds the sample-gradient variance and `varsigma^2` the
//! agent heterogeneity, both with a `(1 + ‖theta - theta_PS‖^2)` growth factor.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::engine::{SchemeState, StepSchedule};
use crate::environment::{sigmoid, Base, Environment, LossKind};
use crate::metrics::consensus_error;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.1;

/// Problem parameters the constants are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub mu: f64,
    pub l: f64,
    /// `sigma^2`.
    pub sigma2: f64,
    /// `varsigma^2`.
    pub varsigma2: f64,
    pub delta: f64,
    pub eps_avg: f64,
    pub eps_max: f64,
    pub rho: f64,
    pub n: usize,
    /// `‖avg(theta^0) - theta_PS‖^2`.
    pub gap0_sq: f64,
    /// `‖Q^0‖_F^2`.
    pub q0_sq: f64,
    /// First step size `gamma_1`.
    pub gamma1: f64,
    /// True when `sigma^2` and `varsigma^2` are exact rather than estimated.
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub inputs: TheoryInputs,
    pub mu_tilde: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub d: f64,
    pub delta_bar: f64,
}

/// The five step-size bounds, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapTerm {
    /// `4 / mu~`
    InverseMu,
    /// `mu~ / c2`
    MuOverC2,
    /// `rho / sqrt(2 c3)`
    Spectral,
    /// `sqrt(rho^2 mu~ / (192 c1 (sigma^2 + varsigma^2)))`
    Noise,
    /// `rho c1 / (4 mu~ c1 + rho c2)`
    Coupling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCap {
    pub cap: f64,
    pub binding: CapTerm,
    pub terms: [f64; 5],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RatioCheck {
    Pass,
    /// First `t` with `gamma_t / gamma_{t+1}` above the allowed ratio.
    Violation { t: u64, ratio: f64, bound: f64 },
}

/// Bound curves at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub t: u64,
    /// `gamma_t` (absent at `t = 0`).
    pub gamma: Option<f64>,
    pub gap_bound: f64,
    pub consensus_bound: f64,
    /// `prod_{i<=t}(1 - mu~ gamma_i / 2) D`.
    pub transient: f64,
    /// `L (sigma^2 + varsigma^2) / (n delta mu~ rho^2 eps_avg) gamma_t^2`.
    pub network: f64,
    /// `sigma^2 / (n mu~) gamma_t`.
    pub fluctuation: f64,
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Builds the constants; rejects `eps_avg = 0` (where `c1` is undefined) and
/// `mu~ <= 0`.
pub fn compute_constants(inputs: TheoryInputs) -> Result<TheoryConstants> {
    let TheoryInputs {
        mu,
        l,
        sigma2,
        varsigma2,
        delta,
        eps_avg,
        eps_max,
        rho,
        n,
        gap0_sq,
        q0_sq,
        gamma1,
        ..
    } = inputs;
    if !(delta > 0.0) {
        return Err(Error::Config(format!("delta must be > 0, got {delta}")));
    }
    if !(mu > 0.0 && l > 0.0 && rho > 0.0 && rho <= 1.0 && n >= 1 && sigma2 >= 0.0 && varsigma2 >= 0.0) {
        return Err(Error::Config(format!("invalid theory inputs {inputs:?}")));
    }
    if eps_avg == 0.0 {
        return Err(Error::Inapplicable(
            "eps_avg = 0 leaves c1 undefined; this is the classical DSGD regime".into(),
        ));
    }
    let nf = n as f64;
    let mu_tilde = mu - (1.0 + delta) * eps_avg * l;
    if mu_tilde <= 0.0 {
        return Err(Error::StabilityViolated {
            eps_avg,
            bound: mu / ((1.0 + delta) * l),
        });
    }
    let growth = (1.0 + eps_max).powi(2);
    let c1 = l * growth / (2.0 * nf * delta * eps_avg);
    let c2 = 4.0 * (sigma2 / nf + l * l * growth);
    let c3 = 12.0 * sigma2 + 18.0 * l * l * growth;
    let d = gap0_sq + gamma1 * (8.0 * c1 / (nf * rho)) * q0_sq;
    let delta_bar = d + 1.5 + 8.0 * sigma2 / (c2 * nf);
    let tc = TheoryConstants {
        inputs,
        mu_tilde,
        c1,
        c2,
        c3,
        d,
        delta_bar,
    };
    tc.cross_check()?;
    Ok(tc)
}

impl TheoryConstants {
    /// Re-evaluates every constant along a second arithmetic route and
    /// requires agreement to 1e-12 relative.
    pub fn cross_check(&self) -> Result<()> {
        let p = &self.inputs;
        let nf = p.n as f64;
        let one_plus = 1.0 + p.eps_max;
        let lg = p.l * one_plus;
        let alt = [
            ("mu_tilde", self.mu_tilde, p.mu - p.eps_avg * p.l - p.delta * p.eps_avg * p.l),
            ("c1", self.c1, (lg * one_plus / p.eps_avg) / (2.0 * p.delta) / nf),
            ("c2", self.c2, 4.0 * p.sigma2 / nf + 4.0 * lg * lg),
            ("c3", self.c3, 6.0 * (2.0 * p.sigma2 + 3.0 * lg * lg)),
            ("d", self.d, p.gap0_sq + 8.0 * self.c1 * p.gamma1 * p.q0_sq / (p.rho * nf)),
            (
                "delta_bar",
                self.delta_bar,
                self.d + 3.0 / 2.0 + (2.0 * p.sigma2 / nf) / (p.sigma2 / nf + lg * lg),
            ),
        ];
        for (k, (name, a, b)) in alt.into_iter().enumerate() {
            // mu~ is a difference of comparable terms; measure it against mu
            let gap = if k == 0 { (a - b).abs() / p.mu } else { relative_gap(a, b) };
            if gap > 1e-12 {
                return Err(Error::Validation(format!("{name}: {a} vs {b}")));
            }
        }
        Ok(())
    }
}

/// The largest constant step the theorem allows, and which bound binds.
pub fn step_size_cap(tc: &TheoryConstants) -> StepCap {
    let p = &tc.inputs;
    let noise = p.sigma2 + p.varsigma2;
    let terms = [
        4.0 / tc.mu_tilde,
        tc.mu_tilde / tc.c2,
        p.rho / (2.0 * tc.c3).sqrt(),
        if noise == 0.0 {
            f64::INFINITY
        } else {
            (p.rho * p.rho * tc.mu_tilde / (192.0 * tc.c1 * noise)).sqrt()
        },
        p.rho * tc.c1 / (4.0 * tc.mu_tilde * tc.c1 + p.rho * tc.c2),
    ];
    let names = [
        CapTerm::InverseMu,
        CapTerm::MuOverC2,
        CapTerm::Spectral,
        CapTerm::Noise,
        CapTerm::Coupling,
    ];
    let (k, cap) = terms
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, v)| if v < best.1 { (k, v) } else { best });
    StepCap {
        cap,
        binding: names[k],
        terms,
    }
}

/// Largest ratio `gamma_t / gamma_{t+1}` the theorem allows.
pub fn allowed_ratio(tc: &TheoryConstants, gamma_next: f64) -> f64 {
    let m = tc.mu_tilde / 4.0;
    let rho = tc.inputs.rho;
    (1.0 + m * gamma_next * gamma_next)
        .sqrt()
        .min((1.0 + m * gamma_next.powi(3)).cbrt())
        .min(1.0 + rho / (4.0 - 2.0 * rho))
}

/// Checks `gamma_t / gamma_{t+1} <= allowed_ratio` for `1 <= t < horizon`.
pub fn ratio_condition_check(schedule: &StepSchedule, tc: &TheoryConstants, horizon: u64) -> Result<RatioCheck> {
    let mut prev = schedule.gamma(1)?;
    for t in 1..horizon {
        let next = schedule.gamma(t + 1)?;
        let ratio = prev / next;
        let bound = allowed_ratio(tc, next);
        if ratio > bound {
            return Ok(RatioCheck::Violation { t, ratio, bound });
        }
        prev = next;
    }
    Ok(RatioCheck::Pass)
}

/// True when every `gamma_t`, `t <= horizon`, is at most the cap. Schedules
/// are nonincreasing, so `gamma_1` decides.
pub fn schedule_within_cap(schedule: &StepSchedule, tc: &TheoryConstants) -> Result<bool> {
    Ok(schedule.gamma(1)? <= step_size_cap(tc).cap)
}

/// Bound curves at the iterations in `ts` (sorted ascending). The running
/// product is advanced once per iteration up to the last requested `t`.
pub fn bound_curves(tc: &TheoryConstants, schedule: &StepSchedule, ts: &[u64]) -> Result<Vec<BoundPoint>> {
    if ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("bound curve iterations must be sorted".into()));
    }
    let p = &tc.inputs;
    let nf = p.n as f64;
    let noise = p.sigma2 + p.varsigma2;
    let a_gap = 288.0 * tc.c1 * noise / (p.rho * p.rho * tc.mu_tilde);
    let b_gap = 8.0 * p.sigma2 / (tc.mu_tilde * nf);
    let a_cons = 2.0 * (9.0 + 12.0 * tc.delta_bar) * noise / (p.rho * p.rho);
    let q0 = p.q0_sq / nf;
    let net = p.l * noise / (nf * p.delta * tc.mu_tilde * p.rho * p.rho * p.eps_avg);
    let fluct = p.sigma2 / (nf * tc.mu_tilde);
    let contraction = 1.0 - p.rho / 2.0;

    let mut out = Vec::with_capacity(ts.len());
    let mut product = 1.0_f64;
    let mut at = 0_u64;
    for &t in ts {
        while at < t {
            at += 1;
            product *= 1.0 - tc.mu_tilde * schedule.gamma(at)? / 2.0;
        }
        let point = if t == 0 {
            BoundPoint {
                t,
                gamma: None,
                gap_bound: tc.d,
                consensus_bound: q0,
                transient: tc.d,
                network: 0.0,
                fluctuation: 0.0,
            }
        } else {
            let g = schedule.gamma(t)?;
            let geometric = contraction.powf(t as f64);
            BoundPoint {
                t,
                gamma: Some(g),
                gap_bound: product * tc.d + a_gap * g * g + b_gap * g,
                consensus_bound: geometric * q0 + a_cons * g * g,
                transient: product * tc.d,
                network: net * g * g,
                fluctuation: fluct * g,
            }
        };
        out.push(point);
    }
    Ok(out)
}

/// Step size below which the network/heterogeneity term is dominated by the
/// fluctuation term: `C delta rho^2 eps_avg sigma^2 / (L (sigma^2 + varsigma^2))`.
pub fn transient_threshold(tc: &TheoryConstants, c: f64) -> Result<f64> {
    let p = &tc.inputs;
    if !(p.sigma2 > 0.0) {
        return Err(Error::Inapplicable("transient threshold needs sigma > 0".into()));
    }
    Ok(c * p.delta * p.rho * p.rho * p.eps_avg * p.sigma2 / (p.l * (p.sigma2 + p.varsigma2)))
}

/// Noise constants for an environment at its stable point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConstants {
    pub sigma2: f64,
    pub varsigma2: f64,
    pub exact: bool,
}

/// `sigma^2` and `varsigma^2` for `env` around `theta_ps`.
///
/// Gaussian populations give exact values: the sample-gradient variance is
/// `d sigma^2` everywhere, and the heterogeneity
/// `∇f(theta;theta) - ∇f_i(theta;theta) = a_i + b_i (theta - theta_PS)` with
/// `a_i = -∇f_i(theta_PS;theta_PS)`, `b_i = eps_i - eps_avg` satisfies
/// `‖a_i + b_i e‖^2 <= (‖a_i‖^2 + b_i^2)(1 + ‖e‖^2)`, tight in the worst
/// direction. Strategic populations get estimates at `theta_ps` only: the
/// largest per-shard gradient variance and the largest squared deviation of
/// a local gradient from the network gradient.
pub fn noise_constants(env: &Environment, theta_ps: &DVector<f64>) -> Result<NoiseConstants> {
    let n = env.n();
    if env.is_gaussian() {
        let eps_avg = env.eps_avg();
        let mut sigma2 = 0.0_f64;
        let mut varsigma2 = 0.0_f64;
        for i in 0..n {
            if let Base::Gaussian { sigma2: s, .. } = env.population(i).base() {
                sigma2 = sigma2.max(s * env.dim() as f64);
            }
            let a = env.frozen_gradient(i, theta_ps, theta_ps)?;
            let b = env.population(i).eps() - eps_avg;
            varsigma2 = varsigma2.max(a.norm_squared() + b * b);
        }
        return Ok(NoiseConstants {
            sigma2,
            varsigma2,
            exact: true,
        });
    }
    let beta = match env.loss().kind {
        LossKind::Logistic { beta } => beta,
        LossKind::Quadratic => 0.0,
    };
    let full = env.frozen_mean_gradient(theta_ps, theta_ps)?;
    let mut sigma2 = 0.0_f64;
    let mut varsigma2 = 0.0_f64;
    for i in 0..n {
        let local = env.frozen_gradient(i, theta_ps, theta_ps)?;
        varsigma2 = varsigma2.max((&full - &local).norm_squared());
        if let Base::Strategic { data } = env.population(i).base() {
            let eps = env.population(i).eps();
            let mut var = 0.0;
            let mut shifted = vec![0.0; env.dim()];
            for k in 0..data.len() {
                for ((s, x), t) in shifted.iter_mut().zip(data.features(k)).zip(theta_ps.iter()) {
                    *s = x + eps * t;
                }
                let score: f64 = shifted.iter().zip(theta_ps.iter()).map(|(s, t)| s * t).sum();
                let r = sigmoid(score) - data.label(k);
                var += shifted
                    .iter()
                    .zip(local.iter())
                    .zip(theta_ps.iter())
                    .map(|((s, g), t)| (r * s + beta * t - g).powi(2))
                    .sum::<f64>();
            }
            sigma2 = sigma2.max(var / data.len() as f64);
        }
    }
    Ok(NoiseConstants {
        sigma2,
        varsigma2,
        exact: false,
    })
}

/// Assembles [`TheoryInputs`] from an environment, its stable point, the
/// spectral gap and the initial state.
pub fn inputs_for(
    env: &Environment,
    theta_ps: &DVector<f64>,
    rho: f64,
    delta: f64,
    initial: &SchemeState,
    gamma1: f64,
) -> Result<TheoryInputs> {
    let noise = noise_constants(env, theta_ps)?;
    let (q0_sq, _) = consensus_error(initial);
    Ok(TheoryInputs {
        mu: env.mu(),
        l: env.smoothness(),
        sigma2: noise.sigma2,
        varsigma2: noise.varsigma2,
        delta,
        eps_avg: env.eps_avg(),
        eps_max: env.eps_max(),
        rho,
        n: env.n(),
        gap0_sq: (initial.average() - theta_ps).norm_squared(),
        q0_sq,
        gamma1,
        exact: noise.exact,
    })
}
