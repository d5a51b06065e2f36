//! The DSGD-GD iteration.
//!
//! At step `t -> t+1` every agent `i`
//!
//! 1. deploys its current decision `theta_i^t` and draws `batch` samples from
//!    the population's response `D_i(theta_i^t)`;
//! 2. replaces its decision by the `W`-weighted average of its neighbours'
//!    decisions minus `gamma_{t+1}` times the batch gradient, evaluated at the
//!    pre-mixing point `theta_i^t`.
//!
//! Phase 1 is embarrassingly parallel over agents. Phase 2 reads the whole
//! previous iterate before writing any new one (double-buffered state).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{Base, Environment};
use crate::rng::{CounterRng, Domain, SeedTree};
use crate::topology::{Communication, GossipWeights};
use crate::{Error, Result};

/// Default cut-off on `‖Theta‖_∞` beyond which a run counts as diverged.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Step sizes `gamma_t`, indexed from `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `gamma_t = a0 / (a1 + t)`
    InverseTime { a0: f64, a1: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { gamma } => gamma > 0.0 && gamma.is_finite(),
            StepSchedule::InverseTime { a0, a1 } => a0 > 0.0 && a1 >= 0.0 && a0.is_finite() && a1.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step schedule {self:?}")))
        }
    }

    /// `gamma_t` for `t >= 1`.
    pub fn gamma(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::StepIndex(t));
        }
        Ok(self.gamma_unchecked(t))
    }

    #[inline]
    pub(crate) fn gamma_unchecked(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { gamma } => gamma,
            StepSchedule::InverseTime { a0, a1 } => a0 / (a1 + t as f64),
        }
    }
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Total iterations `T`.
    pub iterations: u64,
    /// Samples per agent per iteration; the gradient is their mean.
    pub batch: usize,
    pub record_every: u64,
    pub seed: u64,
    /// Initial decision shared by all agents: one value per coordinate, or a
    /// single value broadcast to every coordinate.
    pub theta0: Vec<f64>,
    pub divergence_threshold: f64,
    /// Evaluate Phase 1 on the rayon pool. Results do not depend on it.
    #[serde(default)]
    pub parallel_agents: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch: 1,
            record_every: 1,
            seed: 0,
            theta0: vec![0.0],
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            parallel_agents: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.record_every == 0 {
            return Err(Error::Config("batch and record_every must be >= 1".into()));
        }
        if self.theta0.is_empty() {
            return Err(Error::Config("theta0 must not be empty".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence_threshold must be > 0".into()));
        }
        Ok(())
    }

    fn initial_point(&self, dim: usize) -> Result<Vec<f64>> {
        match self.theta0.len() {
            1 => Ok(vec![self.theta0[0]; dim]),
            len if len == dim => Ok(self.theta0.clone()),
            len => Err(Error::Shape { expected: dim, got: len }),
        }
    }
}

/// Source of Phase-1 gradients. [`Environment`] is the real one; tests wrap
/// it to observe which decisions get deployed.
pub trait DeployedGradient: Sync {
    fn agents(&self) -> usize;
    fn dim(&self) -> usize;
    /// Adds the mean of `batch` sample gradients at `theta`, with samples drawn
    /// from the population's response to `deployed`, into `out`.
    fn add_batch_gradient(
        &self,
        agent: usize,
        theta: &[f64],
        deployed: &[f64],
        batch: usize,
        rng: &mut CounterRng,
        out: &mut [f64],
    );
}

impl DeployedGradient for Environment {
    fn agents(&self) -> usize {
        self.n()
    }

    fn dim(&self) -> usize {
        Environment::dim(self)
    }

    fn add_batch_gradient(
        &self,
        agent: usize,
        theta: &[f64],
        deployed: &[f64],
        batch: usize,
        rng: &mut CounterRng,
        out: &mut [f64],
    ) {
        Environment::add_batch_gradient(self, agent, theta, deployed, batch, rng, out)
    }
}

/// Stacked agent decisions with their iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeState {
    n: usize,
    dim: usize,
    /// Agent-major: agent `i` occupies `theta[i*dim..(i+1)*dim]`.
    theta: Vec<f64>,
    next: Vec<f64>,
    grads: Vec<f64>,
    t: u64,
    diverged_at: Option<u64>,
    seeds: SeedTree,
}

impl SchemeState {
    /// All agents start from `theta0`.
    pub fn new(n: usize, theta0: &[f64], seed: u64) -> Result<Self> {
        if n == 0 || theta0.is_empty() {
            return Err(Error::InvalidSize("state needs n >= 1 and d >= 1".into()));
        }
        let dim = theta0.len();
        let theta: Vec<f64> = (0..n).flat_map(|_| theta0.iter().copied()).collect();
        Self::from_agents(n, dim, theta, seed)
    }

    /// State from explicit per-agent decisions (agent-major, `n*dim` values).
    pub fn from_agents(n: usize, dim: usize, theta: Vec<f64>, seed: u64) -> Result<Self> {
        if theta.len() != n * dim {
            return Err(Error::Shape {
                expected: n * dim,
                got: theta.len(),
            });
        }
        Ok(Self {
            n,
            dim,
            next: vec![0.0; theta.len()],
            grads: vec![0.0; theta.len()],
            theta,
            t: 0,
            diverged_at: None,
            seeds: SeedTree::new(seed),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Current iteration index `t`.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.theta[i * self.dim..(i + 1) * self.dim]
    }

    /// Agent-major view of all decisions.
    pub fn raw(&self) -> &[f64] {
        &self.theta
    }

    /// `n x d` matrix whose row `i` is agent `i`'s decision.
    pub fn stacked(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.dim, &self.theta)
    }

    /// Network average decision, recomputed from the agents.
    pub fn average(&self) -> DVector<f64> {
        let mut avg = DVector::zeros(self.dim);
        for i in 0..self.n {
            for (a, v) in avg.iter_mut().zip(self.agent(i)) {
                *a += v;
            }
        }
        avg / self.n as f64
    }

    /// Gradients used in the most recent step (agent-major).
    pub fn last_gradients(&self) -> &[f64] {
        &self.grads
    }

    pub fn diverged_at(&self) -> Option<u64> {
        self.diverged_at
    }

    pub fn max_abs(&self) -> f64 {
        self.theta.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn seeds(&self) -> SeedTree {
        self.seeds
    }
}

/// One DSGD-GD step `t -> t+1` with step size `gamma` (the schedule's
/// `gamma_{t+1}`).
///
/// On a non-finite entry or `‖Theta‖_∞ > divergence_threshold` the state is
/// flagged diverged at `t+1`; a diverged state is not stepped further.
pub fn dsgd_gd_step<G: DeployedGradient + ?Sized>(
    state: &mut SchemeState,
    weights: &GossipWeights,
    env: &G,
    gamma: f64,
    batch: usize,
    divergence_threshold: f64,
    parallel: bool,
) -> Result<()> {
    if state.diverged_at.is_some() {
        return Ok(());
    }
    let (n, d) = (state.n, state.dim);
    if env.agents() != n || weights.n() != n {
        return Err(Error::Shape {
            expected: n,
            got: if env.agents() != n { env.agents() } else { weights.n() },
        });
    }
    if env.dim() != d {
        return Err(Error::Shape {
            expected: d,
            got: env.dim(),
        });
    }
    let t = state.t;
    let seeds = state.seeds;
    let theta = &state.theta;

    // Phase 1: deploy theta_i^t, sample, take the gradient at theta_i^t.
    let phase1 = |(i, g): (usize, &mut [f64])| {
        g.fill(0.0);
        let own = &theta[i * d..(i + 1) * d];
        let mut rng = seeds.stream(Domain::Deployment, i as u32, t);
        env.add_batch_gradient(i, own, own, batch, &mut rng, g);
    };
    if parallel {
        state.grads.par_chunks_mut(d).enumerate().for_each(phase1);
    } else {
        state.grads.chunks_mut(d).enumerate().for_each(phase1);
    }

    // Phase 2: consensus over the previous iterate plus the local step.
    for i in 0..n {
        let out = &mut state.next[i * d..(i + 1) * d];
        out.fill(0.0);
        for &(j, w) in weights.row(i) {
            for (o, v) in out.iter_mut().zip(&theta[j * d..(j + 1) * d]) {
                *o += w * v;
            }
        }
        for (o, g) in out.iter_mut().zip(&state.grads[i * d..(i + 1) * d]) {
            *o -= gamma * g;
        }
    }

    #[cfg(debug_assertions)]
    check_average_recursion(state, gamma);

    std::mem::swap(&mut state.theta, &mut state.next);
    state.t += 1;
    let blown = state
        .theta
        .iter()
        .any(|v| !v.is_finite() || v.abs() > divergence_threshold);
    if blown {
        state.diverged_at = Some(state.t);
    }
    Ok(())
}

/// The average evolves as `avg' = avg - gamma * mean(g_i)` because `W` is
/// doubly stochastic.
#[cfg(debug_assertions)]
fn check_average_recursion(state: &SchemeState, gamma: f64) {
    let (n, d) = (state.n, state.dim);
    for k in 0..d {
        let col = |buf: &[f64]| (0..n).map(|i| buf[i * d + k]).sum::<f64>() / n as f64;
        let before = col(&state.theta);
        let after = col(&state.next);
        let gbar = col(&state.grads);
        let expected = before - gamma * gbar;
        if !expected.is_finite() || !after.is_finite() {
            continue;
        }
        let scale = 1.0_f64.max(before.abs()).max((gamma * gbar).abs());
        debug_assert!(
            (after - expected).abs() <= 1e-10 * scale,
            "average recursion broken at t={}: {after} vs {expected}",
            state.t
        );
    }
}

/// Receives the state at recorded iterations.
pub trait MetricSink {
    fn record(&mut self, state: &SchemeState) -> Result<()>;
}

impl<F: FnMut(&SchemeState) -> Result<()>> MetricSink for F {
    fn record(&mut self, state: &SchemeState) -> Result<()> {
        self(state)
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub final_state: SchemeState,
    /// Iteration at which divergence was detected, if any.
    pub diverged_at: Option<u64>,
}

/// Runs `config.iterations` DSGD-GD steps from the shared initial point.
///
/// The sink sees iteration 0, every `record_every`-th iteration, the final
/// iteration, and the iteration at which divergence is detected (after which
/// the run stops).
pub fn run<G: DeployedGradient + ?Sized, S: MetricSink + ?Sized>(
    config: &RunConfig,
    env: &G,
    comm: &Communication,
    steps: &StepSchedule,
    sink: &mut S,
) -> Result<RunOutcome> {
    config.validate()?;
    steps.validate()?;
    if comm.n() != env.agents() {
        return Err(Error::Shape {
            expected: env.agents(),
            got: comm.n(),
        });
    }
    let theta0 = config.initial_point(env.dim())?;
    let mut state = SchemeState::new(env.agents(), &theta0, config.seed)?;
    sink.record(&state)?;
    while state.t < config.iterations {
        let t = state.t;
        let gamma = steps.gamma_unchecked(t + 1);
        dsgd_gd_step(
            &mut state,
            comm.weights_for_step(t),
            env,
            gamma,
            config.batch,
            config.divergence_threshold,
            config.parallel_agents,
        )?;
        if state.diverged_at.is_some() {
            sink.record(&state)?;
            break;
        }
        if state.t % config.record_every == 0 || state.t == config.iterations {
            sink.record(&state)?;
        }
    }
    Ok(RunOutcome {
        diverged_at: state.diverged_at,
        final_state: state,
    })
}

/// Result of [`bias_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProbe {
    /// Monte Carlo mean of `∇ℓ(theta; Z)`, `Z ~ D_i(theta)`.
    pub deployed_mean: DVector<f64>,
    /// Exact `∇f_i(theta; theta)`.
    pub decoupled: DVector<f64>,
    /// `‖deployed_mean - decoupled‖`.
    pub difference: f64,
    /// Per-coordinate Monte Carlo noise scale, `sigma / sqrt(mc)`.
    pub standard_error: f64,
}

/// Estimates what the deployed sample gradient targets at `theta` and compares
/// it with the decoupled gradient `∇f_i(theta; theta)`. Gaussian only.
pub fn bias_probe(
    env: &Environment,
    i: usize,
    theta: &DVector<f64>,
    mc: usize,
    rng: &mut CounterRng,
) -> Result<BiasProbe> {
    let sigma2 = match env.population(i).base() {
        Base::Gaussian { sigma2, .. } => *sigma2,
        Base::Strategic { .. } => {
            return Err(Error::UnsupportedKind {
                required: "gaussian",
            })
        }
    };
    if mc == 0 {
        return Err(Error::InvalidSize("bias probe needs mc >= 1".into()));
    }
    let decoupled = env.decoupled_risk_gradient(i, theta, theta)?;
    let mut acc = vec![0.0; env.dim()];
    env.add_batch_gradient(i, theta.as_slice(), theta.as_slice(), mc, rng, &mut acc);
    let deployed_mean = DVector::from_vec(acc);
    let difference = (&deployed_mean - &decoupled).norm();
    Ok(BiasProbe {
        deployed_mean,
        decoupled,
        difference,
        standard_error: sigma2.sqrt() / (mc as f64).sqrt(),
    })
}

/// Draws a standard normal; exposed for examples that build custom samplers.
pub fn standard_normal(rng: &mut CounterRng) -> f64 {
    rng.sample(StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{LossSpec, Population};
    use crate::topology::{uniform_neighbor_weights, Graph};
    use approx::assert_abs_diff_eq;
    use std::sync::Mutex;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn gaussian(eps: &[f64], zbar: &[f64], sigma2: f64) -> Environment {
        let pops = eps
            .iter()
            .zip(zbar)
            .map(|(&e, &z)| Population::gaussian(e, scalar(z), sigma2).unwrap())
            .collect();
        Environment::new(pops, LossSpec::quadratic(1)).unwrap()
    }

    fn ring(n: usize) -> Communication {
        Communication::Static(uniform_neighbor_weights(&Graph::ring(n).unwrap()).unwrap())
    }

    #[test]
    fn gamma_examples() {
        let s = StepSchedule::InverseTime { a0: 50.0, a1: 1e4 };
        assert_eq!(s.gamma(1).unwrap(), 50.0 / 10001.0);
        assert_eq!(StepSchedule::Constant { gamma: 0.01 }.gamma(12345).unwrap(), 0.01);
        assert_eq!(
            StepSchedule::InverseTime { a0: 1.0, a1: 1000.0 }.gamma(1000).unwrap(),
            1.0 / 2000.0
        );
        assert!(matches!(s.gamma(0), Err(Error::StepIndex(0))));
        let mut prev = f64::INFINITY;
        for t in 1..1000 {
            let g = s.gamma(t).unwrap();
            assert!(g > 0.0 && g <= prev);
            prev = g;
        }
    }

    #[test]
    fn single_agent_is_gradient_descent() {
        let env = gaussian(&[0.0], &[5.0], 0.0);
        let comm = ring(1);
        let mut state = SchemeState::new(1, &[0.0], 0).unwrap();
        dsgd_gd_step(&mut state, comm.weights_for_step(0), &env, 0.5, 1, 1e12, false).unwrap();
        assert_eq!(state.agent(0), &[2.5]);
    }

    #[test]
    fn zero_step_is_pure_mixing() {
        let env = gaussian(&[0.3, 0.3], &[1.0, 1.0], 50.0);
        let comm = Communication::Static(
            crate::topology::MixingMatrix::from_dense(DMatrix::from_element(2, 2, 0.5)).unwrap(),
        );
        let mut state = SchemeState::from_agents(2, 1, vec![-3.0, 7.0], 1).unwrap();
        dsgd_gd_step(&mut state, comm.weights_for_step(0), &env, 0.0, 1, 1e12, false).unwrap();
        assert_eq!(state.agent(0), &[2.0]);
        assert_eq!(state.agent(1), &[2.0]);
    }

    #[test]
    fn deterministic_linear_recursion() {
        let env = gaussian(&[0.9], &[10.0], 0.0);
        // x_{t+1} = (1 - 0.1 gamma) x_t + 10 gamma
        let mut oracle = 0.0_f64;
        let mut state = SchemeState::new(1, &[0.0], 0).unwrap();
        for _ in 0..2000 {
            dsgd_gd_step(&mut state, ring(1).weights_for_step(0), &env, 0.3, 1, 1e12, false).unwrap();
            oracle = (1.0 - 0.1 * 0.3) * oracle + 10.0 * 0.3;
            assert_abs_diff_eq!(state.agent(0)[0], oracle, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(oracle, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn homogeneous_consensus_matches_scalar_recursion() {
        let n = 25;
        let env = gaussian(&vec![0.6; n], &vec![10.0; n], 0.0);
        let steps = StepSchedule::InverseTime { a0: 2.0, a1: 10.0 };
        let mut state = SchemeState::new(n, &[3.0], 0).unwrap();
        let comm = ring(n);
        let mut oracle = 3.0_f64;
        for t in 0..1000u64 {
            let g = steps.gamma(t + 1).unwrap();
            dsgd_gd_step(&mut state, comm.weights_for_step(t), &env, g, 1, 1e12, false).unwrap();
            oracle = (1.0 - g * (1.0 - 0.6)) * oracle + g * 10.0;
        }
        for i in 0..n {
            assert_abs_diff_eq!(state.agent(i)[0], oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_step_consensus_contracts() {
        let n = 25;
        let env = gaussian(&vec![0.5; n], &vec![0.0; n], 1.0);
        let comm = ring(n);
        let rho = comm.rho().unwrap();
        let init: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut state = SchemeState::from_agents(n, 1, init, 0).unwrap();
        let cons = |s: &SchemeState| {
            let avg = s.average()[0];
            s.raw().iter().map(|v| (v - avg).powi(2)).sum::<f64>()
        };
        let w = match &comm {
            Communication::Static(m) => m.weights().clone(),
            _ => unreachable!(),
        };
        let mut oracle = DMatrix::from_row_slice(n, 1, state.raw());
        for t in 0..50 {
            let before = cons(&state);
            dsgd_gd_step(&mut state, comm.weights_for_step(t), &env, 0.0, 1, 1e12, false).unwrap();
            assert!(cons(&state) <= (1.0 - rho).powi(2) * before + 1e-12);
            oracle = &w * oracle;
            assert_abs_diff_eq!((DMatrix::from_row_slice(n, 1, state.raw()) - &oracle).amax(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn divergence_flagged() {
        let env = gaussian(&[3.0], &[1.0], 0.0);
        let config = RunConfig {
            iterations: 10_000,
            divergence_threshold: 1e6,
            ..RunConfig::default()
        };
        let out = run(&config, &env, &ring(1), &StepSchedule::Constant { gamma: 0.5 }, &mut |_: &SchemeState| Ok(())).unwrap();
        let at = out.diverged_at.expect("should diverge");
        assert!(at < 100);
        assert_eq!(out.final_state.t(), at);
    }

    #[test]
    fn zero_iterations_records_initial_only() {
        let env = gaussian(&[0.5], &[1.0], 1.0);
        let config = RunConfig {
            iterations: 0,
            ..RunConfig::default()
        };
        let mut ts = Vec::new();
        run(&config, &env, &ring(1), &StepSchedule::Constant { gamma: 0.1 }, &mut |s: &SchemeState| {
            ts.push(s.t());
            Ok(())
        })
        .unwrap();
        assert_eq!(ts, vec![0]);
    }

    #[test]
    fn record_cadence() {
        let env = gaussian(&[0.5; 3], &[1.0; 3], 1.0);
        let config = RunConfig {
            iterations: 25,
            record_every: 10,
            ..RunConfig::default()
        };
        let mut ts = Vec::new();
        run(&config, &env, &ring(3), &StepSchedule::Constant { gamma: 0.1 }, &mut |s: &SchemeState| {
            ts.push(s.t());
            Ok(())
        })
        .unwrap();
        assert_eq!(ts, vec![0, 10, 20, 25]);
    }

    #[test]
    fn runs_are_bit_reproducible_and_thread_independent() {
        let n = 25;
        let eps: Vec<f64> = (0..n).map(|i| 0.5 + 0.01 * i as f64).collect();
        let env = gaussian(&eps, &vec![10.0; n], 50.0);
        let steps = StepSchedule::InverseTime { a0: 50.0, a1: 1e4 };
        let go = |parallel: bool| {
            let config = RunConfig {
                iterations: 500,
                seed: 99,
                parallel_agents: parallel,
                ..RunConfig::default()
            };
            let mut bits = Vec::new();
            run(&config, &env, &ring(n), &steps, &mut |s: &SchemeState| {
                bits.extend(s.raw().iter().map(|v| v.to_bits()));
                Ok(())
            })
            .unwrap();
            bits
        };
        let a = go(false);
        assert_eq!(a, go(false));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        assert_eq!(a, pool.install(|| go(true)));
    }

    struct Recording<'a> {
        env: &'a Environment,
        deployed: Mutex<Vec<(usize, Vec<f64>, Vec<f64>)>>,
    }

    impl DeployedGradient for Recording<'_> {
        fn agents(&self) -> usize {
            self.env.n()
        }
        fn dim(&self) -> usize {
            self.env.dim()
        }
        fn add_batch_gradient(&self, agent: usize, theta: &[f64], deployed: &[f64], batch: usize, rng: &mut CounterRng, out: &mut [f64]) {
            self.deployed.lock().unwrap().push((agent, theta.to_vec(), deployed.to_vec()));
            self.env.add_batch_gradient(agent, theta, deployed, batch, rng, out)
        }
    }

    #[test]
    fn deployment_uses_pre_mixing_decision() {
        let n = 5;
        let env = gaussian(&[0.9; 5], &[10.0; 5], 50.0);
        let rec = Recording {
            env: &env,
            deployed: Mutex::new(Vec::new()),
        };
        let comm = ring(n);
        let mut state = SchemeState::from_agents(n, 1, vec![1.0, -2.0, 3.0, 8.0, 0.5], 4).unwrap();
        for t in 0..20 {
            let before: Vec<f64> = state.raw().to_vec();
            rec.deployed.lock().unwrap().clear();
            dsgd_gd_step(&mut state, comm.weights_for_step(t), &rec, 0.01, 2, 1e12, false).unwrap();
            let log = rec.deployed.lock().unwrap();
            assert_eq!(log.len(), n);
            for (agent, theta, deployed) in log.iter() {
                assert_eq!(deployed, &vec![before[*agent]]);
                assert_eq!(theta, deployed);
            }
        }
    }

    #[test]
    fn bias_probe_cases() {
        let env = gaussian(&[0.9], &[10.0], 0.0);
        let mut rng = SeedTree::new(0).stream(Domain::MonteCarlo, 0, 0);
        let p = bias_probe(&env, 0, &scalar(42.0), 10, &mut rng).unwrap();
        assert!(p.difference <= 1e-12, "{}", p.difference);

        let env = gaussian(&[0.9], &[10.0], 50.0);
        let mc = 100_000;
        let p = bias_probe(&env, 0, &scalar(42.0), mc, &mut rng).unwrap();
        assert!(p.difference <= 4.0 * 50f64.sqrt() / (mc as f64).sqrt());

        let flat = gaussian(&[0.0], &[10.0], 50.0);
        let p = bias_probe(&flat, 0, &scalar(3.0), 1, &mut rng).unwrap();
        assert_eq!(p.decoupled[0], 3.0 - 10.0);
    }
}
