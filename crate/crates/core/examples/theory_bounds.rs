// Constants of the convergence theorem for the Gaussian instance, the
// largest admissible step, and the bound curves next to a simulated run.
//
// ```bash
// cargo run --release -p perfnet --example theory_bounds
// ```

use perfnet::engine::StepSchedule;
use perfnet::harness::experiment::{simulate, theory_report, TheoryReport};
use perfnet::harness::preset;
use perfnet::oracle::closed_form_multi_ps;
use perfnet::theory::{bound_curves, compute_constants, inputs_for, step_size_cap};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = preset::gaussian_mean();
    cfg.sweep = None;
    cfg.environment.eps_avg = 0.5;
    cfg.run.iterations = 20_000;
    cfg.run.record_every = 2_000;
    let inst = cfg.instantiate()?;
    let theta_ps = closed_form_multi_ps(&inst.env)?;
    let rho = inst.comm.rho().ok_or("static topology expected")?;

    // Constant step at the cap.
    let initial = perfnet::engine::SchemeState::new(inst.env.n(), &[0.0], 0)?;
    let probe = compute_constants(inputs_for(&inst.env, &theta_ps, rho, cfg.theory.delta, &initial, 1e-4)?)?;
    let cap = step_size_cap(&probe);
    println!("step-size cap {:.4e} (binding term {:?})", cap.cap, cap.binding);
    cfg.steps = StepSchedule::Constant { gamma: cap.cap };

    let (report, _) = theory_report(&cfg, &inst, &[]);
    let TheoryReport::Applicable { constants, ratio, .. } = report else {
        return Err("theory should apply below the threshold".into());
    };
    constants.cross_check()?;
    println!(
        "mu~ = {:.4}, c1 = {:.4}, c2 = {:.4}, c3 = {:.4}, D = {:.2}, ratio check: {ratio:?}",
        constants.mu_tilde, constants.c1, constants.c2, constants.c3, constants.d
    );

    let seeds = 0..5u64;
    let runs = seeds
        .map(|s| simulate(&cfg, &inst, s, Some(theta_ps.clone())))
        .collect::<perfnet::Result<Vec<_>>>()?;
    let ts: Vec<u64> = runs[0].records.iter().map(|r| r.t).collect();
    let curves = bound_curves(&constants, &cfg.steps, &ts)?;
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "t", "mean gap", "gap bound", "mean cons", "cons bound");
    for (k, b) in curves.iter().enumerate() {
        let mean = |f: &dyn Fn(&perfnet::metrics::MetricRecord) -> f64| {
            runs.iter().map(|r| f(&r.records[k])).sum::<f64>() / runs.len() as f64
        };
        let gap = mean(&|r| r.gap_sq.unwrap_or(f64::NAN));
        let cons = mean(&|r| r.consensus_sq);
        println!(
            "{:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            b.t, gap, b.gap_bound, cons, b.consensus_bound
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
