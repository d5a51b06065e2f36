// Acceptance run: ten end-to-end checks, one PASS/FAIL line each.
//
// Runs with a custom harness so every criterion reports even when an
// earlier one fails. Positional arguments select criteria by number:
//
//     cargo test --release --test acceptance -- 1 6 7

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use perfnet::engine::{standard_normal, SchemeState, StepSchedule};
use perfnet::environment::{LossSpec, Sample};
use perfnet::harness::config::{TopologyKind, WeightRule};
use perfnet::harness::experiment::{non_performative_optimum, risk_blowup, simulate, theory_report, TheoryReport};
use perfnet::harness::{preset, ExperimentConfig};
use perfnet::metrics::{decoupled_grad_norm, mean_series, rate_fit, shifted_test_accuracy, write_metrics_csv, Decisions, MetricRecord, RateWindow, Trajectory};
use perfnet::oracle::{closed_form_multi_ps, contraction_probe, map_orbit, repeated_gd_fixed_point, OracleConfig};
use perfnet::rng::{Domain, SeedTree};
use perfnet::theory::{compute_constants, inputs_for, step_size_cap, RatioCheck};
use perfnet::topology::{validate_schedule, GraphSchedule, ScheduleCertificate};

type Outcome = Result<String, String>;

/// Tail window used by every slope criterion: the last three quarters.
const TAIL: RateWindow = RateWindow {
    fraction: 0.75,
    t_min: 100.0,
};

fn gaussian_at(eps_avg: f64) -> ExperimentConfig {
    let mut cfg = preset::gaussian_mean();
    cfg.sweep = None;
    cfg.environment.eps_avg = eps_avg;
    cfg
}

fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64], with_ps: bool) -> Result<Vec<Trajectory>, String> {
    let inst = cfg.instantiate().map_err(|e| e.to_string())?;
    let ps = if with_ps {
        Some(closed_form_multi_ps(&inst.env).map_err(|e| e.to_string())?)
    } else {
        None
    };
    seeds
        .par_iter()
        .map(|&s| simulate(cfg, &inst, s, ps.clone()).map_err(|e| e.to_string()))
        .collect()
}

fn records(runs: &[Trajectory]) -> Vec<Vec<MetricRecord>> {
    runs.iter().map(|t| t.records.clone()).collect()
}

fn mean_slope(runs: &[Trajectory], metric: &str) -> Result<f64, String> {
    let mean = mean_series(&records(runs), metric).map_err(|e| e.to_string())?;
    Ok(rate_fit(metric, &mean, TAIL).map_err(|e| e.to_string())?.slope)
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn closed_form_fixed_point() -> Outcome {
    let start = Instant::now();
    let inst = gaussian_at(0.9).instantiate().map_err(|e| e.to_string())?;
    let closed = closed_form_multi_ps(&inst.env).map_err(|e| e.to_string())?[0];
    let repeated = repeated_gd_fixed_point(&inst.env, &DVector::zeros(1), &OracleConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let gap = (repeated.theta_ps[0] - closed).abs();
    verdict(
        (closed - 100.0).abs() < 1e-9 && repeated.converged && gap <= 1e-6 && elapsed < 1.0,
        format!("closed form {closed:.9}, repeated deployment off by {gap:.2e}, {elapsed:.3} s"),
    )
}

fn rate_claims() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let runs = run_seeds(&gaussian_at(0.9), &seeds, true)?;
    let gap = mean_slope(&runs, "gap_sq")?;
    let cons = mean_slope(&runs, "consensus_sq")?;
    verdict(
        (-1.3..=-0.7).contains(&gap) && (-2.4..=-1.6).contains(&cons),
        format!("gap_sq slope {gap:.3} (want [-1.3, -0.7]), consensus_sq slope {cons:.3} (want [-2.4, -1.6])"),
    )
}

fn flagged(t: &Trajectory) -> bool {
    t.diverged_at.is_some() || risk_blowup(t).is_some()
}

fn stability_threshold() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.9, 1.01, 1.05, 1.1] {
        let runs = run_seeds(&gaussian_at(eps), &seeds, false)?;
        let count = runs.iter().filter(|t| flagged(t)).count();
        ok &= if eps < 1.0 { count == 0 } else { count >= 9 };
        parts.push(format!("{eps}: {count}/10"));
    }
    verdict(ok, format!("diverged seeds by eps_avg {}", parts.join(", ")))
}

fn consensus_stabilizes() -> Outcome {
    let cfg = gaussian_at(0.9);
    let inst = cfg.instantiate().map_err(|e| e.to_string())?;
    let agent = (0..inst.env.n())
        .max_by(|&a, &b| inst.env.population(a).eps().total_cmp(&inst.env.population(b).eps()))
        .unwrap();
    let run = perfnet::harness::experiment::run_disconnected_baseline(&cfg, agent, Some(1.01), 0).map_err(|e| e.to_string())?;
    let risk: Vec<f64> = run.isolated.records.iter().map(|r| r.risk.unwrap_or(f64::NAN)).collect();
    let tail = &risk[risk.len() - risk.len() / 10..];
    let increasing = tail.windows(2).all(|w| w[1] > w[0]);
    let net = &run.networked;
    let gap0 = net.records[0].gap_sq.unwrap_or(f64::NAN);
    let gap_end = net.records.last().and_then(|r| r.gap_sq).unwrap_or(f64::NAN);
    let converged = !flagged(net) && gap_end <= 1e-3 * gap0;
    verdict(
        increasing && converged,
        format!(
            "isolated agent {agent}: risk strictly increasing over last decile = {increasing} (ends at {:.1}); \
             network gap_sq {gap0:.3e} -> {gap_end:.3e}",
            tail.last().unwrap()
        ),
    )
}

fn theory_dominance() -> Outcome {
    let mut cfg = gaussian_at(0.5);
    cfg.run.iterations = 100_000;
    cfg.run.record_every = 1000;
    let inst = cfg.instantiate().map_err(|e| e.to_string())?;
    let ps = closed_form_multi_ps(&inst.env).map_err(|e| e.to_string())?;
    let rho = inst.comm.rho().ok_or("static topology expected")?;
    let initial = SchemeState::new(inst.env.n(), &[0.0], 0).map_err(|e| e.to_string())?;
    let probe = compute_constants(inputs_for(&inst.env, &ps, rho, cfg.theory.delta, &initial, 1e-4).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let cap = step_size_cap(&probe).cap;
    let seeds: Vec<u64> = (0..20).collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for gamma in [cap, cap / 2.0] {
        cfg.steps = StepSchedule::Constant { gamma };
        let runs = run_seeds(&cfg, &seeds, true)?;
        let ts: Vec<u64> = runs[0].records.iter().map(|r| r.t).collect();
        let (report, bounds) = theory_report(&cfg, &inst, &ts);
        let TheoryReport::Applicable {
            constants,
            schedule_within_cap,
            ratio,
            ..
        } = report
        else {
            return Err(format!("theory inapplicable at gamma = {gamma:.3e}"));
        };
        let checked = constants.cross_check().is_ok();
        let gaps = mean_series(&records(&runs), "gap_sq").map_err(|e| e.to_string())?;
        let cons = mean_series(&records(&runs), "consensus_sq").map_err(|e| e.to_string())?;
        let gap_ok = gaps.iter().zip(&bounds).all(|(g, b)| g.1 <= b.gap_bound);
        let cons_ok = cons.iter().zip(&bounds).all(|(c, b)| c.1 <= b.consensus_bound);
        let worst = gaps.iter().zip(&bounds).skip(1).map(|(g, b)| g.1 / b.gap_bound).fold(0.0, f64::max);
        ok &= checked && schedule_within_cap && ratio == RatioCheck::Pass && gap_ok && cons_ok && gaps.len() == bounds.len();
        parts.push(format!(
            "gamma {gamma:.3e}: constants cross-checked {checked}, within cap {schedule_within_cap}, \
             ratio {ratio:?}, gap below bound {gap_ok} (largest mean/bound ratio after t = 0: {worst:.3}), consensus below bound {cons_ok}"
        ));
    }
    verdict(ok, parts.join("; "))
}

fn contraction() -> Outcome {
    let oracle = OracleConfig::default();
    let mut rng = SeedTree::new(11).stream(Domain::Probe, 0, 0);
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [0.3, 0.5, 0.9] {
        let env = gaussian_at(eps).instantiate().map_err(|e| e.to_string())?.env;
        let center = closed_form_multi_ps(&env).map_err(|e| e.to_string())?;
        let report = contraction_probe(&env, &center, 200, 50.0, &oracle, &mut rng).map_err(|e| e.to_string())?;
        ok &= (report.empirical - eps).abs() <= 1e-8;
        parts.push(format!("{eps}: {:.10}", report.empirical));
    }
    let env = gaussian_at(1.01).instantiate().map_err(|e| e.to_string())?.env;
    let orbit: Vec<f64> = map_orbit(&env, &DVector::zeros(1), 2000, &oracle).map_err(|e| e.to_string())?.iter().map(|v| v[0]).collect();
    let steps: Vec<f64> = orbit.windows(2).map(|w| w[1] - w[0]).collect();
    let accelerating = steps.windows(2).all(|w| w[1] > w[0] && w[0] > 0.0);
    let last = *orbit.last().unwrap();
    let no_closed_form = closed_form_multi_ps(&env).is_err();
    ok &= accelerating && last > 1e10 && no_closed_form;
    verdict(
        ok,
        format!(
            "contraction ratios {}; eps_avg 1.01 orbit increments growing = {accelerating}, M^2000(0) = {last:.3e}",
            parts.join(", ")
        ),
    )
}

fn central_difference(loss: &LossSpec, theta: &DVector<f64>, z: &Sample) -> DVector<f64> {
    DVector::from_fn(theta.len(), |j, _| {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let (mut up, mut down) = (theta.clone(), theta.clone());
        up[j] += h;
        down[j] -= h;
        (loss.value(&up, z).unwrap() - loss.value(&down, z).unwrap()) / (2.0 * h)
    })
}

fn gradients() -> Outcome {
    let dim = 10;
    let mut rng = SeedTree::new(3).stream(Domain::Probe, 1, 0);
    let mut normal = |scale: f64| DVector::from_fn(dim, |_, _| scale * standard_normal(&mut rng));
    let logistic = LossSpec::logistic(dim, 1e-2).unwrap();
    let quadratic = LossSpec::quadratic(dim);
    let mut worst = [0.0_f64; 2];
    for k in 0..100 {
        let theta = normal(1.0);
        let x = normal(1.0);
        let probes = [
            (&logistic, Sample::Labeled { x: x.clone(), y: (k % 2) as f64 }),
            (&quadratic, Sample::Point(x)),
        ];
        for (slot, (loss, z)) in probes.iter().enumerate() {
            let g = loss.gradient(&theta, z).unwrap();
            let fd = central_difference(loss, &theta, z);
            worst[slot] = worst[slot].max((&g - &fd).norm() / g.norm());
        }
    }
    let inst = gaussian_at(0.9).instantiate().map_err(|e| e.to_string())?;
    let ps = closed_form_multi_ps(&inst.env).map_err(|e| e.to_string())?;
    let at_ps = decoupled_grad_norm(&inst.env, &ps).map_err(|e| e.to_string())?.sqrt();
    verdict(
        worst.iter().all(|&w| w <= 1e-6) && at_ps <= 1e-9,
        format!(
            "worst relative error logistic {:.2e}, quadratic {:.2e}; decoupled gradient norm at theta_PS {at_ps:.2e}",
            worst[0], worst[1]
        ),
    )
}

fn time_varying() -> Outcome {
    let schedule = GraphSchedule::ring_alternating(25).map_err(|e| e.to_string())?;
    let certificate = validate_schedule(&schedule);
    let union_is_ring = schedule.graphs()[0].union(&schedule.graphs()[1]).map_err(|e| e.to_string())?.edges()
        == perfnet::topology::Graph::ring(25).map_err(|e| e.to_string())?.edges();
    let mut cfg = gaussian_at(0.9);
    cfg.topology.kind = TopologyKind::Schedule;
    cfg.topology.weights = WeightRule::Metropolis;
    cfg.topology.schedule_file = Some("ring_alternating".into());
    let seeds: Vec<u64> = (0..10).collect();
    let runs = run_seeds(&cfg, &seeds, true)?;
    let diverged = runs.iter().filter(|t| flagged(t)).count();
    let slope = mean_slope(&runs, "gap_sq")?;
    verdict(
        certificate == (ScheduleCertificate::Connected { window: 2 }) && union_is_ring && diverged == 0 && slope <= -0.5,
        format!("certificate {certificate:?}, union is the ring {union_is_ring}, {diverged}/10 diverged, gap_sq slope {slope:.3}"),
    )
}

fn spam_classification() -> Outcome {
    let mut cfg = preset::spam_logistic();
    cfg.sweep = None;
    cfg.environment.eps_avg = 1.0;
    cfg.run.iterations = 800_000;
    cfg.run.record_every = 2000;
    let inst = cfg.instantiate().map_err(|e| e.to_string())?;
    let test = inst.test.clone().ok_or("spam preset has a test split")?;
    let (theta_star, _) = non_performative_optimum(&cfg, &inst.env).map_err(|e| e.to_string())?;
    let baseline = shifted_test_accuracy(&inst.env, Decisions::Shared(&theta_star), &test).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..10).collect();
    let runs = run_seeds(&cfg, &seeds, false)?;
    let wins = runs
        .iter()
        .filter(|t| t.diverged_at.is_none() && t.records.last().and_then(|r| r.accuracy).is_some_and(|a| a >= baseline))
        .count();
    let mean_acc = runs.iter().filter_map(|t| t.records.last()?.accuracy).sum::<f64>() / runs.len() as f64;
    let slope = mean_slope(&runs, "grad_norm_sq")?;
    verdict(
        wins >= 8 && slope <= -0.7,
        format!(
            "DSGD-GD beats the non-performative baseline ({baseline:.3}) in {wins}/10 seeds (mean {mean_acc:.3}), \
             grad_norm_sq slope {slope:.3}"
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = gaussian_at(0.9);
    cfg.run.parallel_agents = true;
    let inst = cfg.instantiate().map_err(|e| e.to_string())?;
    let ps = closed_form_multi_ps(&inst.env).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let traj = pool.install(|| simulate(&cfg, &inst, 0, Some(ps.clone()))).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        write_metrics_csv(&mut bytes, &traj.records).map_err(|e| e.to_string())?;
        outputs.push(bytes);
    }
    verdict(
        outputs[0] == outputs[1],
        format!("metrics.csv with 1 and 4 threads: {} and {} bytes, identical = {}", outputs[0].len(), outputs[1].len(), outputs[0] == outputs[1]),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("closed-form fixed point", closed_form_fixed_point),
        ("rate claims", rate_claims),
        ("stability threshold", stability_threshold),
        ("stabilization by consensus", consensus_stabilizes),
        ("bound dominance", theory_dominance),
        ("contraction", contraction),
        ("gradient correctness", gradients),
        ("time-varying graphs", time_varying),
        ("spam classification", spam_classification),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let number = k + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {number:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {number:>2} FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
