//! Running configurations over sweep points and seeds, and writing the
//! resulting artifacts.
//!
//! Layout under the output root:
//!
//! ```text
//! <root>/<name>/config.toml
//! <root>/<name>/manifest.json
//! <root>/<name>/<point>/<seed>/metrics.csv
//! <root>/<name>/<point>/aggregate.csv
//! <root>/<name>/<point>/ratefit.json
//! <root>/<name>/<point>/theory.json
//! <root>/<name>/<point>/theory_curves.csv
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, SchemeState};
use crate::environment::{Base, Environment, LossKind, Population};
use crate::harness::config::{ExperimentConfig, Instance};
use crate::metrics::{
    aggregate, mean_series, rate_fit, save_metrics_csv, shifted_test_accuracy, Decisions, RateFit, Recorder, Trajectory,
};
use crate::oracle::{self, ExistenceVariant, FixedPointResult};
use crate::theory::{self, BoundPoint, RatioCheck, StepCap, TheoryConstants};
use crate::topology::{Communication, MixingMatrix};
use crate::{Error, Result};

/// A run also counts as diverged once its risk exceeds this multiple of the
/// risk at `t = 0`.
pub const RISK_BLOWUP_FACTOR: f64 = 10.0;

/// Metrics summarised in `aggregate.csv` and fitted in `ratefit.json`.
pub const SUMMARY_METRICS: [&str; 5] = ["gap_sq", "consensus_sq", "risk", "grad_norm_sq", "accuracy"];

/// The stable point when it can be had cheaply: the closed form for Gaussian
/// environments below the stability threshold, `None` otherwise.
pub fn known_stable_point(env: &Environment) -> Option<DVector<f64>> {
    if env.is_gaussian() {
        oracle::closed_form_multi_ps(env).ok()
    } else {
        None
    }
}

/// Whether a stable point is guaranteed to exist for `env`.
pub fn stable_point_expected(env: &Environment) -> bool {
    if env.is_gaussian() {
        return env.eps_avg() < env.mu() / env.smoothness();
    }
    oracle::existence_check(env.eps_avg(), env.mu(), env.smoothness(), ExistenceVariant::Local, env.n())
        .map(|e| e.exists)
        .unwrap_or(false)
}

/// One DSGD-GD run of `inst` with the metrics `cfg` asks for.
pub fn simulate(cfg: &ExperimentConfig, inst: &Instance, seed: u64, theta_ps: Option<DVector<f64>>) -> Result<Trajectory> {
    let mut recorder = Recorder::new(&inst.env, cfg.recorder_options(theta_ps, inst.test.clone()));
    let outcome = engine::run(&cfg.run.with_seed(seed), &inst.env, &inst.comm, &cfg.steps, &mut recorder)?;
    Ok(recorder.finish(outcome.diverged_at))
}

/// First recorded iteration whose risk exceeds [`RISK_BLOWUP_FACTOR`] times
/// the initial risk.
pub fn risk_blowup(trajectory: &Trajectory) -> Option<u64> {
    let first = trajectory.records.first()?.risk?;
    trajectory
        .records
        .iter()
        .find(|r| r.risk.is_some_and(|v| !(v <= RISK_BLOWUP_FACTOR * first)))
        .map(|r| r.t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFlag {
    pub seed: u64,
    /// Iteration at which the iterates overflowed the divergence threshold.
    pub diverged_at: Option<u64>,
    /// First recorded iteration with risk above the blow-up factor.
    pub risk_blowup_at: Option<u64>,
}

impl SeedFlag {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some() || self.risk_blowup_at.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    /// A stable point exists and no seed diverged.
    Converged,
    /// A stable point exists but some seed diverged.
    DivergedInConvergentRegime,
    /// No stable point is guaranteed and divergence was observed.
    PassWithDivergence,
    /// No stable point is guaranteed and no seed diverged.
    NoDivergenceObserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEntry {
    pub label: String,
    pub eps_avg: f64,
    pub homogeneous: bool,
    pub stable_point_expected: bool,
    pub status: PointStatus,
    pub runs: Vec<SeedFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_time_secs: f64,
    pub points: Vec<PointEntry>,
}

impl Manifest {
    /// True if any point diverged although a stable point exists.
    pub fn diverged_in_convergent_regime(&self) -> bool {
        self.points.iter().any(|p| p.status == PointStatus::DivergedInConvergentRegime)
    }
}

/// Theory report of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TheoryReport {
    Applicable {
        constants: TheoryConstants,
        cap: StepCap,
        schedule_within_cap: bool,
        ratio: RatioCheck,
        /// Step size below which the network term is dominated (`C = 1`).
        transient_threshold: Option<f64>,
    },
    Inapplicable {
        reason: String,
    },
}

/// Theory constants, step-size checks and bound curves at the iterations
/// `ts` for `inst`.
pub fn theory_report(cfg: &ExperimentConfig, inst: &Instance, ts: &[u64]) -> (TheoryReport, Vec<BoundPoint>) {
    match theory_inner(cfg, inst, ts) {
        Ok(pair) => pair,
        Err(e) => (TheoryReport::Inapplicable { reason: e.to_string() }, Vec::new()),
    }
}

fn theory_inner(cfg: &ExperimentConfig, inst: &Instance, ts: &[u64]) -> Result<(TheoryReport, Vec<BoundPoint>)> {
    let env = &inst.env;
    let theta_ps = known_stable_point(env)
        .ok_or_else(|| Error::Inapplicable("the stable point is only available for Gaussian environments below threshold".into()))?;
    let rho = inst
        .comm
        .rho()
        .ok_or_else(|| Error::Inapplicable("time-varying topologies have no single spectral gap".into()))?;
    let run = cfg.run.with_seed(0);
    let theta0 = if run.theta0.len() == 1 {
        vec![run.theta0[0]; env.dim()]
    } else {
        run.theta0.clone()
    };
    let initial = SchemeState::new(env.n(), &theta0, 0)?;
    let inputs = theory::inputs_for(env, &theta_ps, rho, cfg.theory.delta, &initial, cfg.steps.gamma(1)?)?;
    let constants = theory::compute_constants(inputs)?;
    constants.cross_check()?;
    let horizon = cfg.run.iterations.max(1);
    let report = TheoryReport::Applicable {
        constants,
        cap: theory::step_size_cap(&constants),
        schedule_within_cap: theory::schedule_within_cap(&cfg.steps, &constants)?,
        ratio: theory::ratio_condition_check(&cfg.steps, &constants, horizon)?,
        transient_threshold: theory::transient_threshold(&constants, 1.0).ok(),
    };
    Ok((report, theory::bound_curves(&constants, &cfg.steps, ts)?))
}

/// Oracle report for the `fixed-point` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub eps_avg: f64,
    pub existence_threshold: f64,
    pub exists: bool,
    pub closed_form: Option<Vec<f64>>,
    pub repeated_deployment: FixedPointResult,
}

pub fn fixed_point_report(cfg: &ExperimentConfig, inst: &Instance) -> Result<FixedPointReport> {
    let env = &inst.env;
    let existence = oracle::existence_check(env.eps_avg(), env.mu(), env.smoothness(), ExistenceVariant::Local, env.n())?;
    let closed_form = if env.is_gaussian() {
        oracle::closed_form_multi_ps(env).ok().map(|v| v.iter().copied().collect())
    } else {
        None
    };
    let theta0 = DVector::from_element(env.dim(), cfg.run.theta0.first().copied().unwrap_or(0.0));
    let theta0 = if cfg.run.theta0.len() == env.dim() {
        DVector::from_vec(cfg.run.theta0.clone())
    } else {
        theta0
    };
    Ok(FixedPointReport {
        eps_avg: env.eps_avg(),
        existence_threshold: existence.threshold,
        exists: existence.exists,
        closed_form,
        repeated_deployment: oracle::repeated_gd_fixed_point(env, &theta0, &cfg.oracle)?,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_aggregate(path: &Path, runs: &[Vec<crate::metrics::MetricRecord>]) -> Result<()> {
    let rows = aggregate(runs, &SUMMARY_METRICS)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let map = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    w.write_record(["t", "metric", "count", "mean", "p05", "p50", "p95"]).map_err(map)?;
    for r in rows {
        w.serialize((r.t, &r.metric, r.count, r.mean, r.p05, r.p50, r.p95)).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_curves(path: &Path, curves: &[BoundPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let map = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
    w.write_record(["t", "gamma", "gap_bound", "consensus_bound", "transient", "network", "fluctuation"])
        .map_err(map)?;
    for p in curves {
        w.serialize((p.t, p.gamma, p.gap_bound, p.consensus_bound, p.transient, p.network, p.fluctuation))
            .map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rate fits of the cross-seed mean of each summary metric. Metrics that
/// cannot be fitted map to the reason.
pub fn rate_fits(cfg: &ExperimentConfig, runs: &[Vec<crate::metrics::MetricRecord>]) -> BTreeMap<String, std::result::Result<RateFit, String>> {
    let mut out = BTreeMap::new();
    if runs.is_empty() {
        return out;
    }
    for metric in SUMMARY_METRICS {
        let fit = mean_series(runs, metric).and_then(|s| {
            if s.is_empty() {
                Err(Error::FitUnavailable(format!("{metric} was not recorded")))
            } else {
                rate_fit(metric, &s, cfg.metrics.window())
            }
        });
        if metric == "accuracy" && fit.is_err() {
            continue;
        }
        out.insert(metric.to_string(), fit.map_err(|e| e.to_string()));
    }
    out
}

/// Everything `run_experiment` produced.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// Trajectories per sweep point, in seed order.
    pub trajectories: Vec<(String, Vec<Trajectory>)>,
}

/// Runs every (sweep point, seed) pair of `cfg` on the current rayon pool
/// and writes the artifacts under `out_root/<name>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let dir = out_root.join(&cfg.name);
    create_dir(&dir)?;
    let text = cfg.to_toml()?;
    std::fs::write(dir.join("config.toml"), &text).map_err(|e| Error::io(dir.join("config.toml"), e))?;

    let bundle = cfg.dataset_bundle()?.map(Arc::new);
    let points = cfg.sweep_points();
    let instances = points
        .iter()
        .map(|(_, c)| c.instantiate_with(bundle.clone()))
        .collect::<Result<Vec<_>>>()?;
    let stable: Vec<Option<DVector<f64>>> = instances.iter().map(|i| known_stable_point(&i.env)).collect();

    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let (label, pcfg) = &points[p];
            let traj = simulate(pcfg, &instances[p], seed, stable[p].clone())?;
            let seed_dir = dir.join(label).join(seed.to_string());
            create_dir(&seed_dir)?;
            save_metrics_csv(&seed_dir.join("metrics.csv"), &traj.records)?;
            log::info!("{}/{label}/{seed}: diverged_at={:?}", cfg.name, traj.diverged_at);
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(points.len());
    let mut trajectories = Vec::with_capacity(points.len());
    let mut results = results.into_iter();
    for (p, (label, pcfg)) in points.iter().enumerate() {
        let trajs: Vec<Trajectory> = results.by_ref().take(cfg.seeds.len()).collect();
        let point_dir = dir.join(label);
        create_dir(&point_dir)?;
        let runs: Vec<_> = trajs.iter().map(|t| t.records.clone()).collect();
        write_aggregate(&point_dir.join("aggregate.csv"), &runs)?;
        write_json(&point_dir.join("ratefit.json"), &rate_fits(pcfg, &runs))?;
        let ts: Vec<u64> = match trajs.first() {
            Some(t) => t.records.iter().map(|r| r.t).collect(),
            None => vec![0],
        };
        let (report, curves) = theory_report(pcfg, &instances[p], &ts);
        write_json(&point_dir.join("theory.json"), &report)?;
        write_curves(&point_dir.join("theory_curves.csv"), &curves)?;

        let flags: Vec<SeedFlag> = cfg
            .seeds
            .iter()
            .zip(&trajs)
            .map(|(&seed, t)| SeedFlag {
                seed,
                diverged_at: t.diverged_at,
                risk_blowup_at: risk_blowup(t),
            })
            .collect();
        let expected = stable_point_expected(&instances[p].env);
        let any = flags.iter().any(SeedFlag::diverged);
        let status = match (expected, any) {
            (true, false) => PointStatus::Converged,
            (true, true) => PointStatus::DivergedInConvergentRegime,
            (false, true) => PointStatus::PassWithDivergence,
            (false, false) => PointStatus::NoDivergenceObserved,
        };
        entries.push(PointEntry {
            label: label.clone(),
            eps_avg: pcfg.environment.eps_avg,
            homogeneous: pcfg.environment.homogeneous,
            stable_point_expected: expected,
            status,
            runs: flags,
        });
        trajectories.push((label.clone(), trajs));
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        config_version: cfg.config_version,
        config_hash: cfg.hash()?,
        seeds: cfg.seeds.clone(),
        threads: rayon::current_num_threads(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        points: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentSummary {
        dir,
        manifest,
        trajectories,
    })
}

/// The isolated agent alongside the network it was taken from.
#[derive(Debug, Clone)]
pub struct DisconnectedRun {
    pub agent: usize,
    pub eps: f64,
    pub isolated: Trajectory,
    pub networked: Trajectory,
}

/// Runs agent `agent` alone (as a one-agent DSGD-GD, i.e. greedy deployment
/// with SGD) next to the full network. `eps` overrides the isolated agent's
/// sensitivity. Gaussian configurations only.
pub fn run_disconnected_baseline(cfg: &ExperimentConfig, agent: usize, eps: Option<f64>, seed: u64) -> Result<DisconnectedRun> {
    let inst = cfg.instantiate()?;
    if !inst.env.is_gaussian() {
        return Err(Error::UnsupportedKind { required: "gaussian" });
    }
    if agent >= inst.env.n() {
        return Err(Error::Config(format!("agent {agent} out of range for n = {}", inst.env.n())));
    }
    let pop = inst.env.population(agent);
    let eps = eps.unwrap_or(pop.eps());
    let Base::Gaussian { zbar, sigma2 } = pop.base() else {
        unreachable!("gaussian environment")
    };
    let single = Environment::new(vec![Population::gaussian(eps, zbar.clone(), *sigma2)?], *inst.env.loss())?;
    let alone = Instance {
        comm: Communication::Static(MixingMatrix::from_dense(DMatrix::from_element(1, 1, 1.0))?),
        env: single,
        test: None,
        bundle: None,
    };
    let isolated = simulate(cfg, &alone, seed, known_stable_point(&alone.env))?;
    let networked = simulate(cfg, &inst, seed, known_stable_point(&inst.env))?;
    Ok(DisconnectedRun {
        agent,
        eps,
        isolated,
        networked,
    })
}

/// Writes both risk series of a disconnected-baseline run.
pub fn save_disconnected(run: &DisconnectedRun, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    save_metrics_csv(&dir.join("isolated.csv"), &run.isolated.records)?;
    save_metrics_csv(&dir.join("networked.csv"), &run.networked.records)?;
    write_json(
        &dir.join("baseline.json"),
        &serde_json::json!({
            "agent": run.agent,
            "eps": run.eps,
            "isolated_diverged_at": run.isolated.diverged_at,
            "isolated_risk_blowup_at": risk_blowup(&run.isolated),
            "networked_diverged_at": run.networked.diverged_at,
            "networked_risk_blowup_at": risk_blowup(&run.networked),
        }),
    )
}

/// Non-performative baseline against DSGD-GD for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonPerformativeRun {
    pub seed: u64,
    /// Accuracy of `theta*` on the test split shifted by `theta*`.
    pub baseline_accuracy: f64,
    /// Final DSGD-GD accuracy on the test split shifted by each agent's
    /// own decision.
    pub dsgd_gd_accuracy: f64,
    pub dsgd_gd_diverged_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonPerformativeReport {
    /// `argmin_theta Σ f_i(theta; 0)`.
    pub theta_star: Vec<f64>,
    /// Whether the inner solve for `theta_star` met its tolerance.
    pub theta_star_converged: bool,
    pub runs: Vec<NonPerformativeRun>,
}

/// The minimiser of the risk on unshifted data, i.e. what a learner that
/// ignores the populations' reaction would deploy.
pub fn non_performative_optimum(cfg: &ExperimentConfig, env: &Environment) -> Result<(DVector<f64>, bool)> {
    let m = oracle::apply_m(env, &DVector::zeros(env.dim()), &cfg.oracle)?;
    Ok((m.theta, m.converged))
}

/// Compares the non-performative optimum with DSGD-GD over `cfg.seeds`.
/// Logistic configurations with a test split only.
pub fn run_nonperformative_baseline(cfg: &ExperimentConfig) -> Result<NonPerformativeReport> {
    let inst = cfg.instantiate()?;
    if !matches!(inst.env.loss().kind, LossKind::Logistic { .. }) {
        return Err(Error::UnsupportedKind { required: "strategic" });
    }
    let test = inst
        .test
        .clone()
        .ok_or_else(|| Error::Config("non-performative baseline needs a test split".into()))?;
    let (theta_star, converged) = non_performative_optimum(cfg, &inst.env)?;
    let baseline_accuracy = shifted_test_accuracy(&inst.env, Decisions::Shared(&theta_star), &test)?;
    let mut with_acc = cfg.clone();
    with_acc.metrics.accuracy = true;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let traj = simulate(&with_acc, &inst, seed, None)?;
            let last = traj.records.last().and_then(|r| r.accuracy).unwrap_or(f64::NAN);
            Ok(NonPerformativeRun {
                seed,
                baseline_accuracy,
                dsgd_gd_accuracy: last,
                dsgd_gd_diverged_at: traj.diverged_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NonPerformativeReport {
        theta_star: theta_star.iter().copied().collect(),
        theta_star_converged: converged,
        runs,
    })
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_json(path, value)
}
